#include "stnngp/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stnngp {

namespace {

Vector draw_responses(const ModelFrame& frame, const ModelInstance& inst, const Vector& effects,
                      std::mt19937_64& rng) {
  const int n = frame.data.n_rows();
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    const int e = frame.row_effect[static_cast<std::size_t>(i)];
    const double eta = inst.eta_fixed(i) + (e >= 0 ? effects(e) : 0.0);
    y(i) = simulate_response(inv_link(eta, inst.link), inst.response, rng);
  }
  return y;
}

}  // namespace

SimulatedData simulate_dataset(const ModelFrame& frame, const ParameterSet& params,
                               const Vector& effects, bool conditional, std::uint64_t seed) {
  const ModelInstance inst = instantiate(frame, params);
  const int n_u = frame.layout.size();
  std::mt19937_64 rng(seed);

  SimulatedData out;
  if (conditional) {
    if (effects.size() != n_u) throw DataError("effects do not match the frame");
    out.effects = effects;
  } else if (n_u > 0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector noise(n_u);
    for (int k = 0; k < n_u; ++k)
      noise(k) = std::sqrt(inst.process.row_var(k)) * normal(rng);
    out.effects = Vector::Zero(n_u);
    forward_substitute(inst.process, frame.layout, 0, out.effects, noise);
  } else {
    out.effects = Vector();
  }
  out.response = draw_responses(frame, inst, out.effects, rng);
  return out;
}

Matrix simulate_replicates(const ModelFrame& frame, const ParameterSet& params,
                           const Vector& effects, bool conditional, int n_sim,
                           std::uint64_t root_seed) {
  if (n_sim < 1) throw DataError("at least one simulation replicate is required");
  Matrix out(n_sim, frame.data.n_rows());
  for (int r = 0; r < n_sim; ++r) {
    const SimulatedData sim = simulate_dataset(frame, params, effects, conditional,
                                               root_seed + static_cast<std::uint64_t>(r));
    out.row(r) = sim.response.transpose();
  }
  return out;
}

ResidualSet pit_residuals(const Vector& observed, const Matrix& simulations, bool integer_valued,
                          std::mt19937_64& rng) {
  const int n_sim = static_cast<int>(simulations.rows());
  const int n = static_cast<int>(observed.size());
  if (simulations.cols() != n)
    throw DataError("simulation columns do not match the observations");
  if (n_sim < 50)
    throw DataError("residuals need at least 50 simulations, got " + std::to_string(n_sim));

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  ResidualSet out;
  out.n_sim = n_sim;
  out.pit.resize(n);
  for (int i = 0; i < n; ++i) {
    int below = 0;
    int equal = 0;
    for (int r = 0; r < n_sim; ++r) {
      const double s = simulations(r, i);
      if (s < observed(i)) ++below;
      else if (s == observed(i)) ++equal;
    }
    if (integer_valued)
      out.pit(i) = (below + uniform(rng) * (equal + 1)) / (n_sim + 1);
    else
      out.pit(i) = static_cast<double>(below + equal) / (n_sim + 1);
  }
  return out;
}

double ks_uniform_statistic(const Vector& values) {
  const int n = static_cast<int>(values.size());
  if (n < 1) throw DataError("no residuals to test");
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = sorted[static_cast<std::size_t>(i)];
    if (!(u >= 0.0 && u <= 1.0)) throw DataError("residuals must lie in [0, 1]");
    d = std::max(d, std::max((i + 1.0) / n - u, u - static_cast<double>(i) / n));
  }
  return d;
}

double ks_uniform_pvalue(const Vector& values) {
  const int n = static_cast<int>(values.size());
  const double d = ks_uniform_statistic(values);
  // Asymptotic Kolmogorov tail: 2 * sum (-1)^(k-1) exp(-2 k^2 n d^2).
  const double x = n * d * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

double pit_dispersion_direction(const Vector& values) {
  if (values.size() == 0) throw DataError("no residuals to test");
  return (values.array() - 0.5).abs().mean() - 0.25;
}

}  // namespace stnngp
