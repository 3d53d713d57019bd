#pragma once

#include <cstdint>
#include <random>

#include "stnngp/laplace.hpp"

namespace stnngp {

/// One simulated surface: the effect values used and a response draw per
/// data row.
struct SimulatedData {
  Vector effects;
  Vector response;
};

/// Conditional simulation keeps the supplied effects (typically the fitted
/// modes) and redraws only the responses. Unconditional simulation ignores
/// them, drawing the temporal effect from its stationary law, the reference
/// effects through the graph conditionals, and the transients last, then
/// the responses.
SimulatedData simulate_dataset(const ModelFrame& frame, const ParameterSet& params,
                               const Vector& effects, bool conditional, std::uint64_t seed);

/// Response replicates as an n_sim x n_rows matrix. Replicate r draws from
/// its own stream seeded root_seed + r, so replicates can run in any order
/// or in parallel without changing the output.
Matrix simulate_replicates(const ModelFrame& frame, const ParameterSet& params,
                           const Vector& effects, bool conditional, int n_sim,
                           std::uint64_t root_seed);

/// Probability integral transform residuals, uniform on [0, 1] when the
/// simulations come from the law of the observations.
struct ResidualSet {
  Vector pit;
  int n_sim = 0;
};

/// Rank each observation within its simulation column (`simulations` is
/// n_sim x n). Integer-valued responses smooth over ties with a uniform
/// draw: (#below + U * (#equal + 1)) / (n_sim + 1). Continuous responses
/// use the empirical CDF with the same smoothing of the denominator.
/// Fewer than 50 simulations leave the ranks too coarse and are rejected.
ResidualSet pit_residuals(const Vector& observed, const Matrix& simulations, bool integer_valued,
                          std::mt19937_64& rng);

/// Kolmogorov-Smirnov distance of the values from the uniform distribution.
double ks_uniform_statistic(const Vector& values);

/// Asymptotic Kolmogorov-Smirnov p-value against the uniform distribution.
double ks_uniform_pvalue(const Vector& values);

/// Sign of the Q-Q curvature of the residuals: positive when mass piles at
/// the extremes (the data are more dispersed than the model), negative when
/// it piles in the middle, near zero for uniform residuals.
double pit_dispersion_direction(const Vector& values);

}  // namespace stnngp
