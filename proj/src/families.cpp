#include "stnngp/families.hpp"

#include <cmath>
#include <numbers>

namespace stnngp {

namespace {

constexpr double kEtaClip = 700.0;
constexpr double kSeriesTol = 1e-12;
constexpr int kSeriesCap = 10000;

double softplus(double eta) {
  // log(1 + exp(eta)) without overflow on either side
  return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

double clip_eta(double eta) { return std::clamp(eta, -kEtaClip, kEtaClip); }

void require_count(double y) {
  if (!(y >= 0.0) || y != std::floor(y))
    throw DataError("count response must be a non-negative integer");
}

// Summed series statistics of the CMP weights lambda^j / (j!)^nu, shifted by
// the largest log-term for stability. Terms rise to a single mode and then
// fall, so truncation waits until past the mode.
struct CmpSeries {
  double log_normalizer;
  double mean;
  double variance;
  double third_central;
};

CmpSeries cmp_series(double log_rate, double nu) {
  const double mode = std::exp(std::min(log_rate / nu, std::log(1e9)));
  double peak = 0.0;  // log-term at the mode, used as the scaling shift
  {
    const double jm = std::floor(std::max(mode, 0.0));
    peak = jm * log_rate - nu * std::lgamma(jm + 1.0);
  }
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  bool past_mode = false;
  int j = 0;
  for (; j < kSeriesCap; ++j) {
    const double logt = j * log_rate - nu * std::lgamma(j + 1.0) - peak;
    const double t = std::exp(logt);
    s0 += t;
    s1 += j * t;
    s2 += static_cast<double>(j) * j * t;
    s3 += static_cast<double>(j) * j * j * t;
    if (j > mode) past_mode = true;
    if (past_mode && t < kSeriesTol * s0) break;
  }
  if (j >= kSeriesCap)
    throw NumericError("Conway-Maxwell normalizing series failed to converge within 10000 terms");
  CmpSeries out;
  out.log_normalizer = peak + std::log(s0);
  out.mean = s1 / s0;
  out.variance = s2 / s0 - out.mean * out.mean;
  out.third_central =
      s3 / s0 - 3.0 * out.mean * out.variance - out.mean * out.mean * out.mean;
  return out;
}

}  // namespace

CmpSolution compois_solve(double mu, double dispersion) {
  if (!(mu > 0.0)) throw DataError("Conway-Maxwell mean must be positive");
  if (!(dispersion > 0.0)) throw DataError("dispersion must be positive");
  const double nu = 1.0 / dispersion;

  // Moment-matched starting rate, falling back to the Poisson rate when the
  // correction would go non-positive.
  const double shifted = mu + (nu - 1.0) / (2.0 * nu);
  double log_rate = nu * std::log(shifted > 0.0 ? shifted : mu);

  CmpSeries series = cmp_series(log_rate, nu);
  for (int it = 0; it < 100; ++it) {
    const double gap = series.mean - mu;
    if (std::abs(gap) <= 1e-10 * std::max(1.0, mu)) {
      CmpSolution sol;
      sol.log_rate = log_rate;
      sol.nu = nu;
      sol.log_normalizer = series.log_normalizer;
      sol.mean = series.mean;
      sol.variance = series.variance;
      sol.third_central = series.third_central;
      return sol;
    }
    // Clamp the step: near-degenerate series (tiny mean, strong
    // under-dispersion) have vanishing variance and would fling the rate
    // far outside the representable series range.
    log_rate -= std::clamp(gap / series.variance, -5.0, 5.0);
    series = cmp_series(log_rate, nu);
  }
  throw NumericError("Conway-Maxwell mean solve did not converge");
}

Family family_from_string(const std::string& name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "poisson") return Family::poisson;
  if (name == "negative_binomial") return Family::negative_binomial;
  if (name == "compois") return Family::compois;
  if (name == "bernoulli") return Family::bernoulli;
  throw DataError("unknown family: " + name);
}

Link link_from_string(const std::string& name) {
  if (name == "identity") return Link::identity;
  if (name == "log") return Link::log;
  if (name == "logit") return Link::logit;
  throw DataError("unknown link: " + name);
}

std::string to_string(Family family) {
  switch (family) {
    case Family::gaussian: return "gaussian";
    case Family::poisson: return "poisson";
    case Family::negative_binomial: return "negative_binomial";
    case Family::compois: return "compois";
    case Family::bernoulli: return "bernoulli";
  }
  return "";
}

std::string to_string(Link link) {
  switch (link) {
    case Link::identity: return "identity";
    case Link::log: return "log";
    case Link::logit: return "logit";
  }
  return "";
}

Link default_link(Family family) {
  switch (family) {
    case Family::gaussian: return Link::identity;
    case Family::poisson:
    case Family::negative_binomial:
    case Family::compois: return Link::log;
    case Family::bernoulli: return Link::logit;
  }
  return Link::identity;
}

bool family_link_compatible(Family family, Link link) {
  switch (link) {
    case Link::identity: return family == Family::gaussian;
    case Link::log:
      return family == Family::gaussian || family == Family::poisson ||
             family == Family::negative_binomial || family == Family::compois;
    case Link::logit: return family == Family::bernoulli;
  }
  return false;
}

double inv_link(double eta, Link link) {
  switch (link) {
    case Link::identity: return eta;
    case Link::log: return std::exp(clip_eta(eta));
    case Link::logit: {
      const double e = clip_eta(eta);
      return 1.0 / (1.0 + std::exp(-e));
    }
  }
  return eta;
}

double d1_inv_link(double eta, Link link) {
  switch (link) {
    case Link::identity: return 1.0;
    case Link::log: return std::exp(clip_eta(eta));
    case Link::logit: {
      const double p = inv_link(eta, Link::logit);
      return p * (1.0 - p);
    }
  }
  return 1.0;
}

double d2_inv_link(double eta, Link link) {
  switch (link) {
    case Link::identity: return 0.0;
    case Link::log: return std::exp(clip_eta(eta));
    case Link::logit: {
      const double p = inv_link(eta, Link::logit);
      return p * (1.0 - p) * (1.0 - 2.0 * p);
    }
  }
  return 0.0;
}

double apply_link(double mu, Link link) {
  switch (link) {
    case Link::identity: return mu;
    case Link::log:
      if (!(mu > 0.0)) throw DataError("log link needs a positive mean");
      return std::log(mu);
    case Link::logit:
      if (!(mu > 0.0 && mu < 1.0)) throw DataError("logit link needs a mean inside (0, 1)");
      return std::log(mu / (1.0 - mu));
  }
  return mu;
}

double linear_predictor(const Vector& x_row, const Vector& beta, double w) {
  if (x_row.size() != beta.size()) throw DataError("covariate row does not match coefficients");
  return x_row.dot(beta) + w;
}

void check_support(double y, Family family) {
  if (!std::isfinite(y)) throw DataError("non-finite response");
  switch (family) {
    case Family::gaussian: return;
    case Family::poisson:
    case Family::negative_binomial:
    case Family::compois: require_count(y); return;
    case Family::bernoulli:
      if (y != 0.0 && y != 1.0) throw DataError("bernoulli response must be 0 or 1");
      return;
  }
}

double log_density(double y, double mu_y, const ResponseFamily& fam) {
  check_support(y, fam.family);
  switch (fam.family) {
    case Family::gaussian: {
      if (!(fam.sd_obs > 0.0)) throw DataError("observation standard deviation must be positive");
      const double v = fam.sd_obs * fam.sd_obs;
      const double r = y - mu_y;
      return -0.5 * (std::log(2.0 * std::numbers::pi * v) + r * r / v);
    }
    case Family::poisson: {
      if (!(mu_y > 0.0)) throw DataError("poisson mean must be positive");
      return y * std::log(mu_y) - mu_y - std::lgamma(y + 1.0);
    }
    case Family::negative_binomial: {
      if (!(mu_y > 0.0)) throw DataError("negative binomial mean must be positive");
      if (!(fam.overdispersion > 0.0)) throw DataError("overdispersion must be positive");
      const double k = 1.0 / fam.overdispersion;
      return std::lgamma(y + k) - std::lgamma(k) - std::lgamma(y + 1.0) +
             k * std::log(k / (k + mu_y)) + y * std::log(mu_y / (k + mu_y));
    }
    case Family::compois: {
      const CmpSolution sol = compois_solve(mu_y, fam.dispersion);
      return y * sol.log_rate - sol.nu * std::lgamma(y + 1.0) - sol.log_normalizer;
    }
    case Family::bernoulli: {
      if (!(mu_y > 0.0 && mu_y < 1.0)) throw DataError("bernoulli mean must be inside (0, 1)");
      return y * std::log(mu_y) + (1.0 - y) * std::log(1.0 - mu_y);
    }
  }
  return 0.0;
}

EtaDerivs log_density_eta(double y, double eta, const ResponseFamily& fam, Link link) {
  if (!family_link_compatible(fam.family, link))
    throw DataError("family " + to_string(fam.family) + " cannot use link " + to_string(link));
  EtaDerivs out;
  switch (fam.family) {
    case Family::gaussian: {
      const double v = fam.sd_obs * fam.sd_obs;
      if (link == Link::identity) {
        const double r = y - eta;
        out.value = -0.5 * (std::log(2.0 * std::numbers::pi * v) + r * r / v);
        out.d1 = r / v;
        out.d2 = -1.0 / v;
      } else {
        const double mu = inv_link(eta, Link::log);
        const double r = y - mu;
        out.value = -0.5 * (std::log(2.0 * std::numbers::pi * v) + r * r / v);
        out.d1 = r * mu / v;
        out.d2 = mu * (y - 2.0 * mu) / v;
      }
      return out;
    }
    case Family::poisson: {
      const double mu = inv_link(eta, Link::log);
      out.value = y * clip_eta(eta) - mu - std::lgamma(y + 1.0);
      out.d1 = y - mu;
      out.d2 = -mu;
      return out;
    }
    case Family::negative_binomial: {
      const double mu = inv_link(eta, Link::log);
      const double k = 1.0 / fam.overdispersion;
      out.value = std::lgamma(y + k) - std::lgamma(k) - std::lgamma(y + 1.0) +
                  k * std::log(k / (k + mu)) + y * std::log(mu / (k + mu));
      out.d1 = y - (y + k) * mu / (k + mu);
      out.d2 = -(y + k) * k * mu / ((k + mu) * (k + mu));
      return out;
    }
    case Family::compois: {
      const double mu = inv_link(eta, Link::log);
      const CmpSolution sol = compois_solve(mu, fam.dispersion);
      out.value = y * sol.log_rate - sol.nu * std::lgamma(y + 1.0) - sol.log_normalizer;
      const double v = sol.variance;
      out.d1 = (y - mu) * mu / v;
      out.d2 = (mu / v) *
               (-mu + (y - mu) * (1.0 - mu * sol.third_central / (v * v)));
      return out;
    }
    case Family::bernoulli: {
      const double e = clip_eta(eta);
      const double p = inv_link(e, Link::logit);
      out.value = y * e - softplus(e);
      out.d1 = y - p;
      out.d2 = -p * (1.0 - p);
      return out;
    }
  }
  return out;
}

double simulate_response(double mu_y, const ResponseFamily& fam, std::mt19937_64& rng) {
  switch (fam.family) {
    case Family::gaussian: {
      std::normal_distribution<double> draw(mu_y, fam.sd_obs);
      return draw(rng);
    }
    case Family::poisson: {
      std::poisson_distribution<long> draw(mu_y);
      return static_cast<double>(draw(rng));
    }
    case Family::negative_binomial: {
      const double k = 1.0 / fam.overdispersion;
      std::gamma_distribution<double> mix(k, mu_y / k);
      std::poisson_distribution<long> draw(std::max(mix(rng), 1e-300));
      return static_cast<double>(draw(rng));
    }
    case Family::compois: {
      const CmpSolution sol = compois_solve(mu_y, fam.dispersion);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const double target = unif(rng);
      // Invert the cdf by walking the normalized series.
      double cum = 0.0;
      int j = 0;
      for (; j < kSeriesCap; ++j) {
        const double logp =
            j * sol.log_rate - sol.nu * std::lgamma(j + 1.0) - sol.log_normalizer;
        cum += std::exp(logp);
        if (cum >= target) break;
      }
      return static_cast<double>(j);
    }
    case Family::bernoulli: {
      std::bernoulli_distribution draw(mu_y);
      return draw(rng) ? 1.0 : 0.0;
    }
  }
  return mu_y;
}

}  // namespace stnngp
