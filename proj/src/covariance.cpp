#include "stnngp/covariance.hpp"

#include <Eigen/Cholesky>

namespace stnngp {

namespace {

constexpr double kJitter = 1e-10;        // on the unit-diagonal correlation scale
constexpr double kZeroDeficit = 1e-12;   // deficits below this count as coincident geometry
constexpr double kClampTol = 1e-10;      // allowed negative rounding in conditional variance

double scaled_correlation(double dist, double range, double mean_edge, const CovarianceSpec& spec) {
  const double u = dist / (mean_edge * range);
  if (spec.family == CovFamily::exponential) return std::exp(-u);
  return matern_correlation(u, spec.smoothness);
}

Matrix parent_correlation(const Matrix& parents, double range, double mean_edge,
                          const CovarianceSpec& spec, DistanceMetric metric) {
  const Eigen::Index m = parents.rows();
  Matrix corr(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    corr(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = point_distance(parents.row(i), parents.row(j), metric);
      corr(i, j) = corr(j, i) = scaled_correlation(d, range, mean_edge, spec);
    }
  }
  return corr;
}

Vector cross_correlation(const Vector& child, const Matrix& parents, double range,
                         double mean_edge, const CovarianceSpec& spec, DistanceMetric metric) {
  Vector corr(parents.rows());
  for (Eigen::Index j = 0; j < parents.rows(); ++j) {
    const double d = point_distance(child.transpose(), parents.row(j), metric);
    corr(j) = scaled_correlation(d, range, mean_edge, spec);
  }
  return corr;
}

// SPD solve on the correlation scale with a single jitter retry.
Vector solve_spd(Matrix corr, const Vector& rhs) {
  Eigen::LLT<Matrix> llt(corr);
  if (llt.info() != Eigen::Success) {
    corr.diagonal().array() += kJitter;
    llt.compute(corr);
    if (llt.info() != Eigen::Success)
      throw NumericError("parent correlation matrix is not positive definite (jitter 1e-10 did not help)");
  }
  return llt.solve(rhs);
}

}  // namespace

double correlation_deficit(const Vector& child, const Matrix& parents, double range,
                           double mean_edge_distance, const CovarianceSpec& spec,
                           DistanceMetric metric, Vector* weights) {
  const Vector r = cross_correlation(child, parents, range, mean_edge_distance, spec, metric);
  const Matrix big_r = parent_correlation(parents, range, mean_edge_distance, spec, metric);
  const Vector w = solve_spd(big_r, r);
  if (weights != nullptr) *weights = w;
  return 1.0 - r.dot(w);
}

KrigingSystem kriging_system(const Vector& child, const Matrix& parents,
                             const CovarianceSpec& spec, const Calibration& cal,
                             DistanceMetric metric) {
  if (parents.rows() < 1) throw DataError("kriging system needs at least one parent");
  KrigingSystem sys;
  double deficit = correlation_deficit(child, parents, cal.internal_range,
                                       cal.mean_edge_distance, spec, metric, &sys.weights);
  if (deficit < 0.0) {
    if (deficit < -kClampTol)
      throw NumericError("kriging variance went negative beyond rounding tolerance");
    deficit = 0.0;
  }
  sys.deficit = deficit;
  sys.cond_var = cal.marginal_variance * deficit;
  sys.cross_cov = cal.marginal_variance *
                  cross_correlation(child, parents, cal.internal_range, cal.mean_edge_distance,
                                    spec, metric);
  sys.parent_cov = cal.marginal_variance *
                   parent_correlation(parents, cal.internal_range, cal.mean_edge_distance,
                                      spec, metric);
  return sys;
}

Calibration calibrate(const NeighbourDag& dag, const ReferenceSet& refs, double spatial_sd,
                      const CovarianceSpec& spec, DistanceMetric metric) {
  if (spatial_sd <= 0) throw DataError("spatial standard deviation must be positive");
  const int n = static_cast<int>(refs.locations.rows());

  Calibration cal;
  cal.mean_edge_distance = mean_edge_distance(dag, refs, metric);

  // Average correlation deficit over conditioned nodes, evaluated at unit
  // range. Node 0 has no parents and coincident geometry gives a zero
  // deficit; neither contributes kriging variance, so both are left out.
  double deficit_sum = 0.0;
  int deficit_count = 0;
  for (int i = 1; i < n; ++i) {
    const auto& parents = dag.persistent_parents[i];
    if (parents.empty()) continue;
    Matrix ploc(parents.size(), refs.locations.cols());
    for (std::size_t j = 0; j < parents.size(); ++j)
      ploc.row(static_cast<Eigen::Index>(j)) = refs.locations.row(parents[j]);
    const Vector child = refs.locations.row(i).transpose();
    const double a = correlation_deficit(child, ploc, 1.0, cal.mean_edge_distance, spec, metric);
    if (a <= kZeroDeficit) continue;
    deficit_sum += a;
    ++deficit_count;
  }
  if (deficit_count == 0)
    throw NumericError("calibration found no conditioned nodes with positive kriging deficit");
  const double mean_deficit = deficit_sum / deficit_count;
  cal.scale_factor = std::sqrt(1.0 / mean_deficit);

  // Internal range: match the marginal variance to the unit-range kriging
  // variance of the first ordered node given the next block of nodes.
  const int head = std::min(dag.n_parents, n - 1);
  Matrix head_parents(head, refs.locations.cols());
  for (int j = 0; j < head; ++j) head_parents.row(j) = refs.locations.row(j + 1);
  const Vector first = refs.locations.row(0).transpose();
  const double head_deficit =
      correlation_deficit(first, head_parents, 1.0, cal.mean_edge_distance, spec, metric);
  if (head_deficit <= kZeroDeficit)
    throw NumericError("degenerate head block: first nodes are effectively coincident");
  cal.internal_range = head_deficit;

  return with_spatial_sd(cal, spatial_sd);
}

}  // namespace stnngp
