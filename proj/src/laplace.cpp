#include "stnngp/laplace.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace stnngp {

namespace {

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double clamped(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

ParameterSet default_parameters(const ModelFrame& frame) {
  const SpatioTemporalDataset& data = frame.data;
  const Link link = frame.settings.link;
  const int n = data.n_rows();
  const double ybar = data.response.mean();

  Vector proxy(n);
  for (int i = 0; i < n; ++i) {
    const double y = data.response(i);
    switch (link) {
      case Link::identity: proxy(i) = y; break;
      // Pull zero counts toward the sample mean so the log stays finite.
      case Link::log: proxy(i) = std::log(std::max(0.5 * (y + ybar), 1e-2)); break;
      case Link::logit: proxy(i) = apply_link(0.25 + 0.5 * y, Link::logit); break;
    }
  }
  double mu0 = 0.0;
  switch (link) {
    case Link::identity: mu0 = ybar; break;
    case Link::log: mu0 = std::log(std::max(ybar, 1e-2)); break;
    case Link::logit:
      mu0 = apply_link(clamped(ybar, 1.0 / (n + 2.0), 1.0 - 1.0 / (n + 2.0)), Link::logit);
      break;
  }
  double sd0 = 0.0;
  if (n > 1) sd0 = std::sqrt((proxy.array() - proxy.mean()).square().sum() / (n - 1));
  sd0 = std::max(sd0, 0.1);

  ParameterSet out;
  out.add({"sd_spatial", sd0, Transform::positive});
  out.add({"nu", frame.settings.smoothness, Transform::positive, true});
  out.add({"mu", mu0, Transform::identity});
  if (data.n_times > 1) {
    out.add({"ar1", 0.5, Transform::correlation});
  } else {
    out.add({"ar1", 0.0, Transform::correlation, true});
  }
  out.add({"sd_time", sd0, Transform::positive});
  switch (frame.settings.family) {
    case Family::gaussian: out.add({"sd_obs", sd0, Transform::positive}); break;
    case Family::negative_binomial: out.add({"overdispersion", 1.0, Transform::positive}); break;
    case Family::compois: out.add({"dispersion", 1.0, Transform::positive}); break;
    default: break;
  }
  for (const std::string& name : data.covariate_names) {
    if (out.has(name))
      throw DataError("covariate '" + name + "' collides with a model parameter name");
    out.add({name, 0.0, Transform::identity});
  }
  return out;
}

ModelInstance instantiate(const ModelFrame& frame, const ParameterSet& params) {
  ModelInstance inst;
  inst.link = frame.settings.link;

  if (frame.layout.size() > 0) {
    inst.temporal = {params.value_of("mu"), params.value_of("ar1"), params.value_of("sd_time")};
    validate(inst.temporal);
    const double tau = params.value_of("sd_spatial");
    if (!(tau > 0.0)) throw DataError("sd_spatial must be positive");
    inst.cal = with_spatial_sd(frame.geometry, tau);
    inst.process =
        build_process_model(frame.layout, frame.systems, inst.temporal, inst.cal.marginal_variance);
  }

  inst.response.family = frame.settings.family;
  switch (frame.settings.family) {
    case Family::gaussian:
      inst.response.sd_obs = params.value_of("sd_obs");
      if (!(inst.response.sd_obs > 0.0)) throw DataError("sd_obs must be positive");
      break;
    case Family::negative_binomial:
      inst.response.overdispersion = params.value_of("overdispersion");
      if (!(inst.response.overdispersion > 0.0))
        throw DataError("overdispersion must be positive");
      break;
    case Family::compois:
      inst.response.dispersion = params.value_of("dispersion");
      if (!(inst.response.dispersion > 0.0)) throw DataError("dispersion must be positive");
      break;
    default:
      break;
  }

  const int p = frame.data.n_covariates();
  inst.beta.resize(p);
  for (int j = 0; j < p; ++j)
    inst.beta(j) = params.value_of(frame.data.covariate_names[static_cast<std::size_t>(j)]);
  if (p > 0)
    inst.eta_fixed = frame.data.covariates * inst.beta;
  else
    inst.eta_fixed = Vector::Zero(frame.data.n_rows());
  return inst;
}

MarginalLikelihood::MarginalLikelihood(const ModelFrame& frame, FitConfig config)
    : frame_(&frame), config_(config) {
  if (static_cast<int>(frame.row_effect.size()) != frame.data.n_rows())
    throw DataError("frame row map does not match the data");
  for (int e : frame.row_effect)
    if (e < -1 || e >= frame.layout.size())
      throw DataError("frame row map points outside the effect layout");
}

double MarginalLikelihood::obs_loglik(const ModelInstance& inst, const Vector& u) const {
  const SpatioTemporalDataset& data = frame_->data;
  double ll = 0.0;
  for (int i = 0; i < data.n_rows(); ++i) {
    const int e = frame_->row_effect[static_cast<std::size_t>(i)];
    const double eta = inst.eta_fixed(i) + (e >= 0 ? u(e) : 0.0);
    ll += log_density_eta(data.response(i), eta, inst.response, inst.link).value;
  }
  return ll;
}

double MarginalLikelihood::joint_nll(const ModelInstance& inst, const Vector& u) const {
  if (u.size() != frame_->layout.size())
    throw DataError("effect vector does not match the layout");
  double ll = obs_loglik(inst, u);
  if (u.size() > 0) ll += process_loglik(inst.process, u).total();
  return -ll;
}

Vector MarginalLikelihood::joint_gradient(const ModelInstance& inst, const Vector& u) const {
  if (u.size() != frame_->layout.size())
    throw DataError("effect vector does not match the layout");
  const Vector res = inst.process.rows * u - inst.process.offset;
  Vector g = inst.process.rows.transpose() * res.cwiseQuotient(inst.process.row_var);
  const SpatioTemporalDataset& data = frame_->data;
  for (int i = 0; i < data.n_rows(); ++i) {
    const int e = frame_->row_effect[static_cast<std::size_t>(i)];
    if (e < 0) continue;
    g(e) -= log_density_eta(data.response(i), inst.eta_fixed(i) + u(e), inst.response, inst.link).d1;
  }
  return g;
}

Eigen::SparseMatrix<double> MarginalLikelihood::joint_hessian(const ModelInstance& inst,
                                                              const Vector& u) const {
  Eigen::SparseMatrix<double> h = inst.process.precision();
  const SpatioTemporalDataset& data = frame_->data;
  for (int i = 0; i < data.n_rows(); ++i) {
    const int e = frame_->row_effect[static_cast<std::size_t>(i)];
    if (e < 0) continue;
    h.coeffRef(e, e) -=
        log_density_eta(data.response(i), inst.eta_fixed(i) + u(e), inst.response, inst.link).d2;
  }
  return h;
}

void MarginalLikelihood::factorize(const Eigen::SparseMatrix<double>& h) {
  if (!pattern_done_) {
    solver_.analyzePattern(h);
    pattern_done_ = true;
  }
  solver_.factorize(h);
  if (solver_.info() != Eigen::Success)
    throw NumericError("sparse factorization of the joint curvature failed");
}

Vector MarginalLikelihood::scaled_factorize(const Eigen::SparseMatrix<double>& h) {
  const Vector diag = h.diagonal();
  Vector s(diag.size());
  for (Eigen::Index i = 0; i < diag.size(); ++i)
    s(i) = diag(i) > 0.0 ? 1.0 / std::sqrt(diag(i)) : 1.0;
  Eigen::SparseMatrix<double> scaled = h;
  for (int outer = 0; outer < scaled.outerSize(); ++outer)
    for (Eigen::SparseMatrix<double>::InnerIterator it(scaled, outer); it; ++it)
      it.valueRef() *= s(it.row()) * s(it.col());
  factorize(scaled);
  return s;
}

InnerFit MarginalLikelihood::inner_optimize(const ModelInstance& inst, Vector u) {
  const int n_u = n_effects();
  InnerFit fit;
  if (n_u == 0) {
    fit.joint_nll = -obs_loglik(inst, Vector());
    return fit;
  }
  if (u.size() != n_u) throw DataError("inner start does not match the effect layout");

  const Eigen::SparseMatrix<double> q = inst.process.precision();
  Eigen::SparseMatrix<double> rows_abs = inst.process.rows;
  for (int outer = 0; outer < rows_abs.outerSize(); ++outer)
    for (Eigen::SparseMatrix<double>::InnerIterator it(rows_abs, outer); it; ++it)
      it.valueRef() = std::abs(it.value());

  double f = joint_nll(inst, u);
  if (!std::isfinite(f)) throw NumericError("inner divergence");

  const SpatioTemporalDataset& data = frame_->data;
  int creep = 0;
  for (int iter = 0; iter <= config_.max_inner_iterations; ++iter) {
    Vector d1 = Vector::Zero(n_u);
    Vector curv = Vector::Zero(n_u);
    for (int i = 0; i < data.n_rows(); ++i) {
      const int e = frame_->row_effect[static_cast<std::size_t>(i)];
      if (e < 0) continue;
      const EtaDerivs ed =
          log_density_eta(data.response(i), inst.eta_fixed(i) + u(e), inst.response, inst.link);
      d1(e) += ed.d1;
      // Families without log-concave eta terms can push the curvature
      // negative away from the mode; dropping those rows keeps the step
      // matrix positive definite while the gradient stays exact.
      curv(e) += std::max(-ed.d2, 0.0);
    }
    const Vector res = inst.process.rows * u - inst.process.offset;
    Vector g = inst.process.rows.transpose() * res.cwiseQuotient(inst.process.row_var) - d1;
    // Rounding floor of each gradient entry. Each residual carries an
    // absolute error proportional to the magnitudes summed into it, and the
    // division by the row variance amplifies that error; entries below the
    // floor cannot be driven lower, so they count as converged. Otherwise
    // extreme parameter scales make the absolute tolerance unreachable.
    const Vector res_mag = rows_abs * u.cwiseAbs() + inst.process.offset.cwiseAbs();
    const Vector g_floor =
        1e-12 *
        (rows_abs.transpose() * res_mag.cwiseQuotient(inst.process.row_var) + d1.cwiseAbs());
    const double gnorm = g.cwiseAbs().maxCoeff();
    fit.gradient_norm = gnorm;
    // Converged outright, or creeping: several accepted steps in a row whose
    // improvements round away mean the objective is flat at this resolution.
    const bool at_floor =
        (g.cwiseAbs() - g_floor.cwiseMax(config_.inner_gradient_tol)).maxCoeff() < 0.0;
    if (at_floor || (creep >= 2 && gnorm <= 1e-4)) {
      fit.mode = std::move(u);
      fit.joint_nll = f;
      fit.iterations = iter;
      inner_iterations_ += iter;
      return fit;
    }
    if (iter == config_.max_inner_iterations) break;

    Eigen::SparseMatrix<double> h = q;
    for (int k = 0; k < n_u; ++k)
      if (curv(k) != 0.0) h.coeffRef(k, k) += curv(k);
    const Vector scale = scaled_factorize(h);
    const Vector step = scale.cwiseProduct(solver_.solve(scale.cwiseProduct(-g)));
    if (!step.allFinite()) throw NumericError("inner divergence");

    const double slope = g.dot(step);
    // The Newton decrement -slope bounds the remaining improvement. Once it
    // drops below what the objective resolves in double precision, further
    // iterations only churn.
    if (-slope <= 1e-17 * (std::abs(f) + 1.0)) {
      fit.mode = std::move(u);
      fit.joint_nll = f;
      fit.iterations = iter;
      inner_iterations_ += iter;
      return fit;
    }
    double alpha = 1.0;
    bool accepted = false;
    double f_try = 0.0;
    while (alpha >= 1e-12) {
      try {
        f_try = joint_nll(inst, u + alpha * step);
      } catch (const NumericError&) {
        f_try = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_try) && f_try <= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // No step of any length helps, so the remaining improvement predicted
      // by the quadratic model is below what the objective can resolve.
      if (gnorm < 1e-6 || -slope <= 1e-11 * (std::abs(f) + 1.0)) {
        fit.mode = std::move(u);
        fit.joint_nll = f;
        fit.iterations = iter;
        inner_iterations_ += iter;
        return fit;
      }
      throw NumericError("inner line search stalled (gradient max-norm " + short_number(gnorm) +
                         ")");
    }
    u += alpha * step;
    creep = (f - f_try <= 8.9e-16 * (std::abs(f_try) + 1.0)) ? creep + 1 : 0;
    f = f_try;
  }
  throw NumericError("inner optimizer hit " + std::to_string(config_.max_inner_iterations) +
                     " iterations (gradient max-norm " + short_number(fit.gradient_norm) + ")");
}

Evaluation MarginalLikelihood::evaluate(const ParameterSet& params, Vector u0) {
  const ModelInstance inst = instantiate(*frame_, params);
  Evaluation ev;
  ev.inner = inner_optimize(inst, std::move(u0));
  const int n_u = n_effects();
  if (n_u == 0) {
    ev.nll = ev.inner.joint_nll;
    return ev;
  }
  const Vector scale = scaled_factorize(joint_hessian(inst, ev.inner.mode));
  const Vector d = solver_.vectorD();
  if (!(d.minCoeff() > 0.0)) throw NumericError("saddle at inner mode");
  ev.log_det = d.array().log().sum() - 2.0 * scale.array().log().sum();
  ev.nll = ev.inner.joint_nll + 0.5 * ev.log_det - 0.5 * n_u * std::log(2.0 * std::numbers::pi);
  return ev;
}

Evaluation MarginalLikelihood::evaluate(const ParameterSet& params) {
  const double center = params.has("mu") ? params.value_of("mu") : 0.0;
  return evaluate(params, Vector::Constant(n_effects(), center));
}

Vector MarginalLikelihood::effect_standard_errors(const ModelInstance& inst, const Vector& mode) {
  const int n_u = n_effects();
  if (mode.size() != n_u) throw DataError("mode does not match the effect layout");
  if (n_u == 0) return Vector();
  const Vector scale = scaled_factorize(joint_hessian(inst, mode));
  const Vector d = solver_.vectorD();
  if (!(d.minCoeff() > 0.0)) throw NumericError("saddle at inner mode");
  Vector se(n_u);
  Vector unit = Vector::Zero(n_u);
  for (int k = 0; k < n_u; ++k) {
    unit(k) = 1.0;
    const Vector col = solver_.solve(unit);
    se(k) = scale(k) * std::sqrt(std::max(col(k), 0.0));
    unit(k) = 0.0;
  }
  return se;
}

namespace {

struct OuterState {
  Vector theta;
  double f = 0.0;
  Evaluation eval;
};

}  // namespace

FitResult fit_model(const ModelFrame& frame, const ParameterSet& init, FitConfig config) {
  if (init.has("nu") && !init.at("nu").fixed)
    throw DataError(
        "the smoothness parameter is baked into the model frame; rebuild the frame to change it");

  MarginalLikelihood lik(frame, config);
  const int n_u = lik.n_effects();

  FitResult out;
  out.params = init;
  const std::vector<int> free_idx = out.params.free_indices();
  const int k = static_cast<int>(free_idx.size());

  Vector warm;
  if (n_u > 0)
    warm = Vector::Constant(n_u, init.has("mu") ? init.value_of("mu") : 0.0);

  auto eval_at = [&](const Vector& theta) {
    ParameterSet p = out.params;
    p.unpack_free(theta);
    OuterState st;
    st.theta = theta;
    st.eval = lik.evaluate(p, warm);
    st.f = st.eval.nll;
    return st;
  };

  Vector theta = out.params.pack_free();
  OuterState cur = eval_at(theta);
  if (n_u > 0) warm = cur.eval.inner.mode;
  out.nll_trace.push_back(cur.f);

  // Central differences; when one side fails numerically, fall back to the
  // one-sided quotient against the current value.
  auto fd_gradient = [&](const OuterState& at) {
    Vector g(k);
    for (int j = 0; j < k; ++j) {
      const double h = std::max(1e-5 * std::abs(at.theta(j)), 1e-7);
      Vector tp = at.theta, tm = at.theta;
      tp(j) += h;
      tm(j) -= h;
      double fp = 0.0, fm = 0.0;
      bool okp = true, okm = true;
      std::string why;
      try {
        fp = eval_at(tp).f;
      } catch (const NumericError& err) {
        okp = false;
        why = err.what();
      }
      try {
        fm = eval_at(tm).f;
      } catch (const NumericError& err) {
        okm = false;
        why = err.what();
      }
      if (okp && okm) {
        g(j) = (fp - fm) / (2.0 * h);
      } else if (okp) {
        g(j) = (fp - at.f) / h;
      } else if (okm) {
        g(j) = (at.f - fm) / h;
      } else {
        const Parameter& par = out.params.items[static_cast<std::size_t>(free_idx[j])];
        std::string state;
        for (int m = 0; m < k; ++m) {
          const Parameter& pm = out.params.items[static_cast<std::size_t>(free_idx[m])];
          if (!state.empty()) state += ", ";
          state += pm.name + "=" + short_number(from_unconstrained(at.theta(m), pm.transform));
        }
        throw NumericError("gradient evaluation failed on both sides of parameter '" + par.name +
                           "' (at " + state + "): " + why);
      }
    }
    return g;
  };

  int accepted_steps = 0;
  bool finished = false;
  if (k == 0) {
    out.converged = true;
    out.convergence = "relative convergence";
    finished = true;
  }

  Vector g;
  if (!finished) g = fd_gradient(cur);

  Matrix b = Matrix::Identity(k, k);
  bool b_is_identity = true;
  for (int it = 1; !finished && it <= config.max_outer_iterations; ++it) {
    Vector dir = -(b * g);
    if (dir.dot(g) >= 0.0) {
      b.setIdentity();
      b_is_identity = true;
      dir = -g;
    }
    double alpha = 1.0;
    const double dnorm = dir.norm();
    if (accepted_steps == 0 && dnorm > 2.0) alpha = 2.0 / dnorm;
    const double slope = g.dot(dir);

    bool accepted = false;
    OuterState next;
    while (alpha >= 1e-12) {
      try {
        next = eval_at(cur.theta + alpha * dir);
        if (std::isfinite(next.f) && next.f <= cur.f + 1e-4 * alpha * slope) {
          accepted = true;
          break;
        }
      } catch (const NumericError&) {
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!b_is_identity) {
        b.setIdentity();
        b_is_identity = true;
        continue;
      }
      const double gnorm = g.cwiseAbs().maxCoeff();
      if (gnorm < 1e-2) {
        out.converged = true;
        out.convergence = "relative convergence";
        out.warnings.push_back("line search stalled near the optimum (gradient max-norm " +
                               short_number(gnorm) + ")");
      } else {
        out.converged = false;
        out.convergence = "iteration limit";
        out.warnings.push_back("line search could not improve the objective (gradient max-norm " +
                               short_number(gnorm) + ")");
      }
      finished = true;
      break;
    }

    ++accepted_steps;
    if (n_u > 0) warm = next.eval.inner.mode;
    out.nll_trace.push_back(next.f);
    const Vector g_new = fd_gradient(next);

    const bool small_change =
        std::abs(cur.f - next.f) <= config.outer_relative_tol * (std::abs(next.f) + config.outer_relative_tol);
    const bool small_gradient = g_new.cwiseAbs().maxCoeff() < config.outer_gradient_tol;

    const Vector s = next.theta - cur.theta;
    const Vector yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      const Vector by = b * yv;
      const double yby = yv.dot(by);
      b += ((sy + yby) / (sy * sy)) * (s * s.transpose());
      b -= (by * s.transpose() + s * by.transpose()) / sy;
      b_is_identity = false;
    }

    cur = std::move(next);
    g = g_new;
    if (small_change && small_gradient) {
      out.converged = true;
      out.convergence = "relative convergence";
      finished = true;
    }
  }
  if (!finished) {
    out.converged = false;
    out.convergence = "iteration limit";
  }

  theta = cur.theta;
  out.params.unpack_free(theta);
  out.nll = cur.f;
  out.mode = cur.eval.inner.mode;
  out.outer_iterations = accepted_steps;

  const int p = frame.data.n_covariates();
  out.beta_cov = Matrix::Zero(p, p);

  if (config.standard_errors && k > 0) {
    bool ok = true;
    Matrix hess = Matrix::Zero(k, k);
    Vector h(k);
    for (int j = 0; j < k; ++j) h(j) = 1e-3 * std::max(1.0, std::abs(theta(j)));
    auto value = [&](const Vector& t) { return eval_at(t).f; };
    try {
      for (int i = 0; i < k && ok; ++i) {
        Vector tp = theta, tm = theta;
        tp(i) += h(i);
        tm(i) -= h(i);
        hess(i, i) = (value(tp) - 2.0 * cur.f + value(tm)) / (h(i) * h(i));
        for (int j = i + 1; j < k; ++j) {
          Vector tpp = theta, tpm = theta, tmp = theta, tmm = theta;
          tpp(i) += h(i); tpp(j) += h(j);
          tpm(i) += h(i); tpm(j) -= h(j);
          tmp(i) -= h(i); tmp(j) += h(j);
          tmm(i) -= h(i); tmm(j) -= h(j);
          hess(i, j) = hess(j, i) =
              (value(tpp) - value(tpm) - value(tmp) + value(tmm)) / (4.0 * h(i) * h(j));
        }
      }
    } catch (const NumericError&) {
      ok = false;
    }

    Matrix cov;
    if (ok) {
      Eigen::LLT<Matrix> llt(hess);
      if (llt.info() == Eigen::Success) {
        cov = llt.solve(Matrix::Identity(k, k));
      } else {
        ok = false;
      }
    }
    if (ok) {
      for (int j = 0; j < k; ++j) {
        Parameter& par = out.params.items[static_cast<std::size_t>(free_idx[j])];
        const double scale = std::abs(from_unconstrained_derivative(theta(j), par.transform));
        par.se = std::sqrt(std::max(cov(j, j), 0.0)) * scale;
      }
      std::vector<int> free_pos(out.params.items.size(), -1);
      for (int j = 0; j < k; ++j) free_pos[static_cast<std::size_t>(free_idx[j])] = j;
      for (int a = 0; a < p; ++a) {
        const auto& name_a = frame.data.covariate_names[static_cast<std::size_t>(a)];
        for (int bcol = 0; bcol < p; ++bcol) {
          const auto& name_b = frame.data.covariate_names[static_cast<std::size_t>(bcol)];
          int ia = -1, ib = -1;
          for (std::size_t q = 0; q < out.params.items.size(); ++q) {
            if (out.params.items[q].name == name_a) ia = free_pos[q];
            if (out.params.items[q].name == name_b) ib = free_pos[q];
          }
          if (ia >= 0 && ib >= 0) out.beta_cov(a, bcol) = cov(ia, ib);
        }
      }
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      for (int j = 0; j < k; ++j)
        out.params.items[static_cast<std::size_t>(free_idx[j])].se = nan;
      out.beta_cov.setConstant(nan);
      out.warnings.push_back(
          "parameter curvature is not positive definite; standard errors set to NaN");
    }
  }

  if (config.standard_errors && n_u > 0) {
    try {
      const ModelInstance inst = instantiate(frame, out.params);
      out.mode_se = lik.effect_standard_errors(inst, out.mode);
    } catch (const NumericError& err) {
      out.mode_se = Vector::Constant(n_u, std::numeric_limits<double>::quiet_NaN());
      out.warnings.push_back(std::string("random-effect standard errors failed: ") + err.what());
    }
  }

  out.inner_iterations = lik.inner_iterations();
  return out;
}

FitResult fit_model(const ModelFrame& frame, FitConfig config) {
  return fit_model(frame, default_parameters(frame), config);
}

}  // namespace stnngp
