#pragma once

#include <cmath>

#include "stnngp/geometry.hpp"
#include "stnngp/graph.hpp"
#include "stnngp/types.hpp"

namespace stnngp {

enum class CovFamily { exponential, matern };

/// Covariance family with its fixed smoothness and the estimated spatial
/// standard deviation. The exponential family is the smoothness-1/2 case.
struct CovarianceSpec {
  CovFamily family = CovFamily::exponential;
  double smoothness = 0.5;  // fixed, never estimated
  double spatial_sd = 1.0;  // tau, the average conditional (kriging) sd
};

/// Graph-derived constants that make spatial_sd^2 the average conditional
/// variance over the persistent graph and standardize the distance scale.
/// scale_factor and internal_range depend only on the graph geometry;
/// marginal_variance = (scale_factor * spatial_sd)^2 * internal_range.
struct Calibration {
  double scale_factor = 1.0;        // multiplies spatial_sd inside the kernel
  double internal_range = 1.0;      // range multiplier, chosen internally
  double mean_edge_distance = 1.0;  // average persistent edge length
  double marginal_variance = 1.0;
};

/// Matern correlation with argument already scaled: u = distance / range.
/// Smoothness 1/2 reduces to exp(-u).
template <typename Scalar>
Scalar matern_correlation(Scalar u, double smoothness) {
  if (u <= Scalar(0)) return Scalar(1);
  const Scalar x = std::pow(Scalar(2), Scalar(1) - smoothness) / std::tgamma(smoothness);
  return x * std::pow(u, Scalar(smoothness)) * std::cyl_bessel_k(smoothness, u);
}

/// Correlation at a given distance under the calibrated internal range.
inline double correlation(double dist, const CovarianceSpec& spec, const Calibration& cal) {
  const double u = dist / (cal.mean_edge_distance * cal.internal_range);
  if (spec.family == CovFamily::exponential) return std::exp(-u);
  return matern_correlation(u, spec.smoothness);
}

/// The covariance function: marginal_variance * correlation(dist).
inline double covariance(double dist, const CovarianceSpec& spec, const Calibration& cal) {
  if (dist < 0) throw DataError("negative distance");
  return cal.marginal_variance * correlation(dist, spec, cal);
}

/// Conditional (kriging) system of a location given its parent set.
/// weights = c' Sigma^-1; cond_var = marginal_variance - c' Sigma^-1 c.
/// deficit is the variance-free part: cond_var / marginal_variance.
struct KrigingSystem {
  Vector weights;
  double cond_var = 0.0;
  double deficit = 1.0;
  Vector cross_cov;   // c
  Matrix parent_cov;  // Sigma
};

/// Build the kriging system for a child location against distinct parents,
/// using the calibrated covariance. SPD solves get one shot of diagonal
/// jitter (1e-10 relative) before failing.
KrigingSystem kriging_system(const Vector& child, const Matrix& parents,
                             const CovarianceSpec& spec, const Calibration& cal,
                             DistanceMetric metric = DistanceMetric::euclidean);

/// Choose scale_factor and internal_range from the persistent graph so that
/// (1) the average kriging variance over the persistent nodes equals
/// spatial_sd^2, and (2) the marginal variance matches the unit-range kriging
/// variance of the first node given the next n_parents nodes, which keeps the
/// head-block marginal in line with the conditioned nodes.
Calibration calibrate(const NeighbourDag& dag, const ReferenceSet& refs, double spatial_sd,
                      const CovarianceSpec& spec,
                      DistanceMetric metric = DistanceMetric::euclidean);

/// Rescale an existing calibration to a new spatial_sd (the geometry-derived
/// constants are unchanged).
inline Calibration with_spatial_sd(Calibration cal, double spatial_sd) {
  cal.marginal_variance =
      cal.scale_factor * cal.scale_factor * spatial_sd * spatial_sd * cal.internal_range;
  return cal;
}

/// Correlation deficit 1 - r'R^-1 r of a point given parent locations, with
/// correlations evaluated at the given range multiplier. Used by calibration
/// and exposed for tests.
double correlation_deficit(const Vector& child, const Matrix& parents, double range,
                           double mean_edge_distance, const CovarianceSpec& spec,
                           DistanceMetric metric, Vector* weights = nullptr);

}  // namespace stnngp
