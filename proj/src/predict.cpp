#include "stnngp/predict.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <optional>
#include <utility>

namespace stnngp {

namespace {

int match_row(const Matrix& rows, const Vector& loc) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    if ((rows.row(r).transpose().array() == loc.array()).all()) return static_cast<int>(r);
  return -1;
}

/// One-shot factorization of the joint curvature, with the same diagonal
/// scaling the fit uses so extreme parameter scales stay solvable.
class CurvatureSolver {
 public:
  explicit CurvatureSolver(const Eigen::SparseMatrix<double>& h) {
    const Vector diag = h.diagonal();
    s_.resize(diag.size());
    for (Eigen::Index i = 0; i < diag.size(); ++i)
      s_(i) = diag(i) > 0.0 ? 1.0 / std::sqrt(diag(i)) : 1.0;
    Eigen::SparseMatrix<double> scaled = h;
    for (int outer = 0; outer < scaled.outerSize(); ++outer)
      for (Eigen::SparseMatrix<double>::InnerIterator it(scaled, outer); it; ++it)
        it.valueRef() *= s_(it.row()) * s_(it.col());
    solver_.compute(scaled);
    if (solver_.info() != Eigen::Success || !(solver_.vectorD().minCoeff() > 0.0))
      throw NumericError("joint curvature is not positive definite; cannot form prediction errors");
  }

  double quad_inv(const Vector& b) const {
    const Vector sb = s_.cwiseProduct(b);
    return sb.dot(solver_.solve(sb));
  }

 private:
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::NaturalOrdering<int>>
      solver_;
  Vector s_;
};

/// Conditional law of one off-reference effect, written as a combination of
/// base effects: mean = sum(coefficient * effect), variance = cond_var.
struct CouplingRow {
  std::vector<std::pair<int, double>> terms;
  double cond_var = 0.0;
};

CouplingRow transient_coupling(const EffectLayout& layout, const TransientSystem& tr,
                               const TemporalParams& temporal, double marginal_variance, int t) {
  const double phi = temporal.autocorr;
  if (t > 0 && tr.blup.size() == 0) throw NumericError("degenerate BLUP");
  CouplingRow row;
  for (std::size_t j = 0; j < tr.parents.size(); ++j) {
    const int p = tr.parents[j];
    const double c = tr.weights(static_cast<Eigen::Index>(j));
    row.terms.emplace_back(layout.w_index(t, p), c);
    if (t > 0)
      row.terms.emplace_back(layout.w_index(t - 1, p),
                             -phi * (c - tr.blup(static_cast<Eigen::Index>(j))));
  }
  row.terms.emplace_back(layout.eps_index(t), 1.0 - tr.weight_sum);
  if (t > 0) row.terms.emplace_back(layout.eps_index(t - 1), phi * (tr.weight_sum - 1.0));
  row.cond_var = marginal_variance * tr.deficit;
  if (!(row.cond_var > 0.0))
    throw NumericError("zero conditional variance at a prediction point next to a reference node");
  return row;
}

TransientSystem build_transient(const ModelFrame& base, const Vector& loc) {
  TransientSystem tr;
  tr.location = loc;
  tr.parents = build_transient_parents(loc.transpose(), base.refs, base.dag.n_parents,
                                       base.settings.metric)[0];
  Matrix ploc(tr.parents.size(), base.refs.locations.cols());
  for (std::size_t j = 0; j < tr.parents.size(); ++j)
    ploc.row(static_cast<Eigen::Index>(j)) = base.refs.locations.row(tr.parents[j]);
  const KrigingSystem sys =
      kriging_system(loc, ploc, base.covariance_spec(), base.geometry, base.settings.metric);
  tr.weights = sys.weights;
  tr.deficit = sys.deficit;
  tr.weight_sum = sys.weights.sum();
  if (std::abs(tr.weight_sum) >= 1e-12) tr.blup = tr.weights / tr.weight_sum;
  return tr;
}

struct CoreResult {
  std::vector<WPrediction> w;
  std::vector<int> alias;  // base-effect index when the point reads one directly, else -1
};

CoreResult predict_w_core(const ModelFrame& frame, const ParameterSet& params,
                          const Vector& effects, const Matrix& locations,
                          const std::vector<int>& times, const PredictOptions& opt) {
  const int n = static_cast<int>(locations.rows());
  if (static_cast<int>(times.size()) != n)
    throw DataError("prediction times do not match the locations");
  if (frame.layout.size() == 0) throw DataError("the model frame has no random effects");
  if (locations.cols() != frame.data.coords.cols())
    throw DataError("prediction locations have the wrong dimension");
  if (opt.forecast_horizon < 0) throw DataError("forecast horizon must be nonnegative");

  const int fitted_times = frame.layout.n_times();
  int horizon = 0;
  for (int i = 0; i < n; ++i) {
    const int t = times[static_cast<std::size_t>(i)];
    if (t < 0) throw DataError("prediction time " + std::to_string(t) + " is negative");
    if (t >= fitted_times + opt.forecast_horizon)
      throw DataError("prediction time " + std::to_string(t) +
                      " lies beyond the fitted range plus the forecast horizon");
    horizon = std::max(horizon, t - fitted_times + 1);
  }

  std::optional<ForecastBase> fb;
  const ModelFrame* base = &frame;
  const Vector* mode = &effects;
  if (horizon > 0) {
    fb = extend_forecast(frame, params, effects, horizon);
    base = &fb->frame;
    mode = &fb->mode;
  } else if (effects.size() != frame.layout.size()) {
    throw DataError("effects do not match the frame");
  }

  const ModelInstance inst = instantiate(*base, params);
  MarginalLikelihood lik(*base);
  std::optional<CurvatureSolver> solver;
  auto curvature = [&]() -> CurvatureSolver& {
    if (!solver) solver.emplace(lik.joint_hessian(inst, *mode));
    return *solver;
  };
  const int n_base = base->layout.size();

  std::vector<TransientSystem> fresh;  // systems for locations new to the frame
  auto novel_system = [&](const Vector& loc) -> const TransientSystem& {
    for (const TransientSystem& tr : fresh)
      if ((tr.location.array() == loc.array()).all()) return tr;
    fresh.push_back(build_transient(*base, loc));
    return fresh.back();
  };

  CoreResult out;
  out.w.resize(static_cast<std::size_t>(n));
  out.alias.assign(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const Vector loc = locations.row(i).transpose();
    const int t = times[static_cast<std::size_t>(i)];
    WPrediction& pred = out.w[static_cast<std::size_t>(i)];

    int effect = -1;
    const TransientSystem* tr = nullptr;
    const int ref = match_row(base->refs.locations, loc);
    if (ref >= 0) {
      effect = base->layout.w_index(t, ref);
    } else {
      const int id = match_row(base->transient_locations, loc);
      if (id >= 0) {
        const int slot = base->layout.slot_of(t, id);
        if (slot >= 0)
          effect = base->layout.v_index(t, slot);
        else
          tr = &base->systems.transients[static_cast<std::size_t>(id)];
      } else {
        tr = &novel_system(loc);
      }
    }

    if (effect >= 0) {
      pred.w = (*mode)(effect);
      out.alias[static_cast<std::size_t>(i)] = effect;
      if (opt.effects_are_known) {
        pred.w_se = 0.0;
      } else {
        Vector e = Vector::Zero(n_base);
        e(effect) = 1.0;
        pred.w_se = std::sqrt(std::max(curvature().quad_inv(e), 0.0));
      }
      continue;
    }

    const CouplingRow row =
        transient_coupling(base->layout, *tr, inst.temporal, inst.cal.marginal_variance, t);
    double mean = 0.0;
    for (const auto& [k, coeff] : row.terms) mean += coeff * (*mode)(k);
    pred.w = mean;
    double var = row.cond_var;
    if (!opt.effects_are_known) {
      Vector b = Vector::Zero(n_base);
      for (const auto& [k, coeff] : row.terms) b(k) += coeff;
      var += curvature().quad_inv(b);
    }
    pred.w_se = std::sqrt(std::max(var, 0.0));
  }
  return out;
}

}  // namespace

ForecastBase extend_forecast(const ModelFrame& frame, const ParameterSet& params,
                             const Vector& effects, int horizon) {
  if (horizon < 0) throw DataError("forecast horizon must be nonnegative");
  if (frame.layout.size() == 0) throw DataError("the model frame has no random effects");
  if (effects.size() != frame.layout.size()) throw DataError("effects do not match the frame");

  ForecastBase out;
  if (horizon == 0) {
    out.frame = frame;
    out.mode = effects;
    return out;
  }

  SpatioTemporalDataset data = frame.data;
  const long long last = data.time_labels.back();
  data.n_times += horizon;
  for (int h = 1; h <= horizon; ++h) data.time_labels.push_back(last + h);
  out.frame = build_frame(std::move(data), frame.settings, frame.refs.locations);
  for (int t = 0; t <= frame.layout.n_times(); ++t)
    if (out.frame.layout.offsets[static_cast<std::size_t>(t)] !=
        frame.layout.offsets[static_cast<std::size_t>(t)])
      throw NumericError("extended layout does not extend the fitted layout");

  const ModelInstance inst = instantiate(out.frame, params);
  out.mode = Vector::Zero(out.frame.layout.size());
  out.mode.head(effects.size()) = effects;
  forward_substitute(inst.process, out.frame.layout, frame.layout.n_times(), out.mode, Vector());
  return out;
}

std::vector<WPrediction> predict_w(const ModelFrame& frame, const ParameterSet& params,
                                   const Vector& effects, const Matrix& locations,
                                   const std::vector<int>& times, const PredictOptions& opt) {
  return predict_w_core(frame, params, effects, locations, times, opt).w;
}

std::vector<WPrediction> predict_w(const ModelFrame& frame, const FitResult& fit,
                                   const Matrix& locations, const std::vector<int>& times,
                                   const PredictOptions& opt) {
  CoreResult core = predict_w_core(frame, fit.params, fit.mode, locations, times, opt);
  // A point that reads a fitted effect reports the stored standard error,
  // so predictions at fitted points reproduce the fit exactly.
  if (!opt.effects_are_known && fit.mode_se.size() == frame.layout.size()) {
    for (std::size_t i = 0; i < core.alias.size(); ++i) {
      const int k = core.alias[i];
      if (k >= 0 && k < static_cast<int>(fit.mode_se.size())) core.w[i].w_se = fit.mode_se(k);
    }
  }
  return core.w;
}

LinearPrediction predict_linear(const Vector& x_row, const Vector& beta, const Matrix& beta_cov,
                                const WPrediction& w) {
  if (x_row.size() != beta.size()) throw DataError("covariate row does not match the coefficients");
  LinearPrediction out;
  out.linear = (x_row.size() > 0 ? x_row.dot(beta) : 0.0) + w.w;
  double var = w.w_se * w.w_se;
  if (x_row.size() > 0 && beta_cov.size() > 0) {
    if (beta_cov.rows() != x_row.size() || beta_cov.cols() != x_row.size())
      throw DataError("coefficient covariance does not match the covariate row");
    var += x_row.dot(beta_cov * x_row);
  }
  out.linear_se = std::sqrt(std::max(var, 0.0));
  return out;
}

ResponsePrediction predict_response(double linear, double linear_se, Link link) {
  const double var = linear_se * linear_se;
  const double slope = d1_inv_link(linear, link);
  const double curve = d2_inv_link(linear, link);
  ResponsePrediction out;
  out.response = inv_link(linear, link) + 0.5 * curve * var;
  out.response_se = std::sqrt(std::max(slope * slope * var + 0.5 * curve * curve * var * var, 0.0));
  return out;
}

std::vector<PredictionRecord> predict(const ModelFrame& frame, const FitResult& fit,
                                      const Matrix& locations, const std::vector<int>& times,
                                      const Matrix& covariates, const PredictOptions& opt) {
  const int n = static_cast<int>(locations.rows());
  const int p = frame.data.n_covariates();
  if (p > 0 && (covariates.rows() != n || covariates.cols() != p))
    throw DataError("prediction covariates must have " + std::to_string(p) +
                    " columns, one row per point");
  if (p == 0 && covariates.size() > 0)
    throw DataError("the model has no covariates, but prediction covariates were given");

  Vector beta(p);
  for (int j = 0; j < p; ++j)
    beta(j) = fit.params.value_of(frame.data.covariate_names[static_cast<std::size_t>(j)]);
  Matrix beta_cov = fit.beta_cov;
  if (p > 0 && beta_cov.size() == 0) beta_cov = Matrix::Zero(p, p);

  const std::vector<WPrediction> wp = predict_w(frame, fit, locations, times, opt);
  std::vector<PredictionRecord> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PredictionRecord& rec = out[static_cast<std::size_t>(i)];
    const WPrediction& w = wp[static_cast<std::size_t>(i)];
    const Vector x = p > 0 ? Vector(covariates.row(i).transpose()) : Vector();
    const LinearPrediction lin = predict_linear(x, beta, beta_cov, w);
    const ResponsePrediction resp =
        predict_response(lin.linear, lin.linear_se, frame.settings.link);
    rec.w = w.w;
    rec.w_se = w.w_se;
    rec.linear = lin.linear;
    rec.linear_se = lin.linear_se;
    rec.response = resp.response;
    rec.response_se = resp.response_se;
  }
  return out;
}

GridPoints grid_points(const PredictionGrid& grid) {
  if (grid.n_rows < 1 || grid.n_cols < 1) throw DataError("prediction grid has no cells");
  if (!(grid.dx > 0.0) || !(grid.dy > 0.0))
    throw DataError("prediction grid cells must have positive size");
  const int n_cells = grid.n_rows * grid.n_cols;
  if (!grid.mask.empty() && static_cast<int>(grid.mask.size()) != n_cells)
    throw DataError("prediction grid mask does not match its shape");
  if (grid.times.empty()) throw DataError("prediction grid needs at least one time");

  std::vector<int> active;
  for (int c = 0; c < n_cells; ++c)
    if (grid.mask.empty() || grid.mask[static_cast<std::size_t>(c)]) active.push_back(c);
  if (active.empty()) throw DataError("prediction grid mask leaves no active cells");

  GridPoints out;
  const int n = static_cast<int>(active.size()) * static_cast<int>(grid.times.size());
  out.locations.resize(n, 2);
  out.times.reserve(static_cast<std::size_t>(n));
  out.cells.reserve(static_cast<std::size_t>(n));
  int at = 0;
  for (const int t : grid.times) {
    for (const int c : active) {
      const int r = c / grid.n_cols;
      const int col = c % grid.n_cols;
      out.locations(at, 0) = grid.x0 + (col + 0.5) * grid.dx;
      out.locations(at, 1) = grid.y0 + (r + 0.5) * grid.dy;
      out.times.push_back(t);
      out.cells.push_back(c);
      ++at;
    }
  }
  return out;
}

}  // namespace stnngp
