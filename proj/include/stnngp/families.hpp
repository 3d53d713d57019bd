#pragma once

#include <random>
#include <string>

#include "stnngp/types.hpp"

namespace stnngp {

enum class Family { gaussian, poisson, negative_binomial, compois, bernoulli };
enum class Link { identity, log, logit };

Family family_from_string(const std::string& name);
Link link_from_string(const std::string& name);
std::string to_string(Family family);
std::string to_string(Link link);

/// Response distribution with its current nuisance parameter values. Only
/// the field matching the family is read.
struct ResponseFamily {
  Family family = Family::gaussian;
  double sd_obs = 1.0;          // gaussian
  double overdispersion = 1.0;  // negative binomial, Var = mu + overdispersion * mu^2
  double dispersion = 1.0;      // compois, 1 recovers poisson, < 1 under-dispersed
};

/// The natural pairing of family and link. Only these pairings are accepted:
/// identity needs an unconstrained mean (gaussian), log a positive mean, and
/// logit a probability (bernoulli).
Link default_link(Family family);
bool family_link_compatible(Family family, Link link);

double inv_link(double eta, Link link);
double d1_inv_link(double eta, Link link);
double d2_inv_link(double eta, Link link);
double apply_link(double mu, Link link);

double linear_predictor(const Vector& x_row, const Vector& beta, double w);

/// Throws when y lies outside the family's support. The message names the
/// problem; callers with row context wrap it.
void check_support(double y, Family family);

double log_density(double y, double mu_y, const ResponseFamily& fam);

/// Log-density with first and second derivatives in the linear predictor,
/// which is what the inner Newton solver consumes.
struct EtaDerivs {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};
EtaDerivs log_density_eta(double y, double eta, const ResponseFamily& fam, Link link);

double simulate_response(double mu_y, const ResponseFamily& fam, std::mt19937_64& rng);

/// Mean-parameterized Conway-Maxwell-Poisson working quantities. The classic
/// parameterization weights the factorial term by nu; our dispersion
/// parameter is 1/nu, so dispersion 1 is Poisson and smaller values are
/// under-dispersed. The rate is solved so the distribution mean hits the
/// requested mean.
struct CmpSolution {
  double log_rate = 0.0;
  double nu = 1.0;
  double log_normalizer = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double third_central = 0.0;
};
CmpSolution compois_solve(double mu, double dispersion);

}  // namespace stnngp
