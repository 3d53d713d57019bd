#pragma once

#include <cmath>
#include <numbers>

#include "stnngp/types.hpp"

namespace stnngp {

/// Temporal AR(1) level: stationary mean, lag-1 autocorrelation, and the
/// one-step-ahead standard deviation.
struct TemporalParams {
  double mean = 0.0;
  double autocorr = 0.0;
  double innovation_sd = 1.0;
};

inline void validate(const TemporalParams& p) {
  if (!(std::abs(p.autocorr) < 1.0)) throw DataError("autocorrelation must lie inside (-1, 1)");
  if (!(p.innovation_sd > 0.0)) throw DataError("innovation standard deviation must be positive");
  if (!std::isfinite(p.mean)) throw DataError("temporal mean must be finite");
}

inline double gaussian_logpdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
}

/// Log-density of the temporal effects under the recursion centered at the
/// stationary mean: the first effect is drawn from the stationary law, later
/// ones from one-step conditionals.
inline double ar1_logdensity(const Vector& eps, const TemporalParams& p) {
  validate(p);
  if (eps.size() < 1) throw DataError("need at least one temporal effect");
  if (!eps.allFinite()) throw DataError("non-finite temporal effect");
  const double phi = p.autocorr;
  const double var1 = p.innovation_sd * p.innovation_sd;
  double ll = gaussian_logpdf(eps(0), p.mean, var1 / (1.0 - phi * phi));
  for (Eigen::Index t = 1; t < eps.size(); ++t)
    ll += gaussian_logpdf(eps(t), p.mean + phi * (eps(t - 1) - p.mean), var1);
  return ll;
}

/// Marginal mean of the spatial field at one location for times after the
/// first: the location's own AR(1) step around the temporal level.
inline double mean_function(double w_prev, double eps_prev, double eps_now, double autocorr) {
  return autocorr * (w_prev - eps_prev) + eps_now;
}

/// Previous-time field value predicted from parent values alone, as the
/// normalized kriging weight average.
inline double blup_previous(const Vector& w_prev_parents, const Vector& weights) {
  const double total = weights.sum();
  if (std::abs(total) < 1e-12) throw NumericError("degenerate BLUP");
  return weights.dot(w_prev_parents) / total;
}

}  // namespace stnngp
