#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "doctest.h"
#include "stnngp/laplace.hpp"
#include "testutil.hpp"

using namespace stnngp;

namespace {

// One row per station-year; the response starts at zero and is filled in by
// each test once it knows the model it wants to simulate from.
SpatioTemporalDataset panel_data(int n_stations, int n_years, unsigned seed, int n_covariates) {
  const Matrix stations = testutil::random_points(n_stations, 2, seed);
  const int n = n_stations * n_years;
  SpatioTemporalDataset data;
  data.coords.resize(n, 2);
  data.times.resize(static_cast<std::size_t>(n));
  data.response = Vector::Zero(n);
  data.covariates.resize(n, n_covariates);
  const char* pool[] = {"depth", "temp", "chla"};
  for (int j = 0; j < n_covariates; ++j) data.covariate_names.push_back(pool[j]);
  data.n_times = n_years;
  for (int t = 0; t < n_years; ++t) data.time_labels.push_back(t);
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> noise(0.0, 1.0);
  int row = 0;
  for (int t = 0; t < n_years; ++t)
    for (int s = 0; s < n_stations; ++s) {
      data.coords.row(row) = stations.row(s);
      data.times[static_cast<std::size_t>(row)] = t;
      for (int j = 0; j < n_covariates; ++j) data.covariates(row, j) = noise(rng);
      ++row;
    }
  return data;
}

ParameterSet process_params(double tau, double mu, double phi, double sigma) {
  ParameterSet ps;
  ps.add({"sd_spatial", tau, Transform::positive});
  ps.add({"mu", mu, Transform::identity});
  ps.add({"ar1", phi, Transform::correlation});
  ps.add({"sd_time", sigma, Transform::positive});
  return ps;
}

Vector simulate_effects(const ProcessModel& pm, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Vector rhs = pm.offset;
  for (Eigen::Index i = 0; i < rhs.size(); ++i) rhs(i) += std::sqrt(pm.row_var(i)) * z(rng);
  return Matrix(pm.rows).fullPivLu().solve(rhs);
}

Matrix incidence(const ModelFrame& frame) {
  Matrix z = Matrix::Zero(frame.data.n_rows(), frame.n_effects());
  for (int i = 0; i < frame.data.n_rows(); ++i)
    z(i, frame.row_effect[static_cast<std::size_t>(i)]) = 1.0;
  return z;
}

double dense_mvn_nll(const Vector& y, const Vector& mean, const Matrix& cov) {
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector r = y - mean;
  return 0.5 * (r.dot(ldlt.solve(r)) + ldlt.vectorD().array().log().sum() +
                y.size() * std::log(2.0 * std::numbers::pi));
}

// Newton iteration driven purely by finite differences of the objective, as
// an optimizer oracle with no code shared with the inner solver.
Vector fd_newton(const std::function<double(const Vector&)>& f, Vector u) {
  const int n = static_cast<int>(u.size());
  double fu = f(u);
  for (int it = 0; it < 40; ++it) {
    Vector g(n);
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(u(j)));
      Vector up = u, um = u;
      up(j) += h;
      um(j) -= h;
      g(j) = (f(up) - f(um)) / (2.0 * h);
    }
    if (g.cwiseAbs().maxCoeff() < 1e-10) break;
    Matrix hess(n, n);
    for (int i = 0; i < n; ++i) {
      const double hi = 1e-4 * std::max(1.0, std::abs(u(i)));
      Vector up = u, um = u;
      up(i) += hi;
      um(i) -= hi;
      hess(i, i) = (f(up) - 2.0 * fu + f(um)) / (hi * hi);
      for (int j = i + 1; j < n; ++j) {
        const double hj = 1e-4 * std::max(1.0, std::abs(u(j)));
        Vector tpp = u, tpm = u, tmp = u, tmm = u;
        tpp(i) += hi; tpp(j) += hj;
        tpm(i) += hi; tpm(j) -= hj;
        tmp(i) -= hi; tmp(j) += hj;
        tmm(i) -= hi; tmm(j) -= hj;
        hess(i, j) = hess(j, i) = (f(tpp) - f(tpm) - f(tmp) + f(tmm)) / (4.0 * hi * hj);
      }
    }
    const Vector step = hess.ldlt().solve(-g);
    double alpha = 1.0;
    double ftry = f(u + step);
    while (alpha > 1e-10 && !(ftry < fu)) {
      alpha *= 0.5;
      ftry = f(u + alpha * step);
    }
    if (!(ftry < fu)) break;
    u += alpha * step;
    fu = ftry;
  }
  return u;
}

}  // namespace

TEST_CASE("gaussian identity marginal matches the dense formula") {
  SpatioTemporalDataset data = panel_data(7, 3, 5u, 1);
  ModelFrame frame = build_frame(data, {});
  ParameterSet params = process_params(0.8, 0.4, 0.6, 0.5);
  params.add({"sd_obs", 0.3, Transform::positive});
  params.add({"depth", 0.7, Transform::identity});

  const ModelInstance inst = instantiate(frame, params);
  Vector y = inst.eta_fixed + incidence(frame) * simulate_effects(inst.process, 7u);
  std::mt19937_64 rng(8u);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
  frame.data.response = y;

  const Matrix z = incidence(frame);
  const Matrix a = Matrix(inst.process.rows);
  const Vector m_u = a.fullPivLu().solve(inst.process.offset);
  const Matrix sigma_u = Matrix(inst.process.precision()).inverse();
  Matrix v = z * sigma_u * z.transpose();
  v.diagonal().array() += 0.3 * 0.3;
  const double exact = dense_mvn_nll(y, inst.eta_fixed + z * m_u, v);

  MarginalLikelihood lik(frame);
  const Evaluation ev = lik.evaluate(params);
  CHECK(std::abs(ev.nll - exact) < 1e-8);
}

TEST_CASE("gaussian inner problem is solved in one newton step") {
  SpatioTemporalDataset data = panel_data(6, 2, 15u, 0);
  ModelFrame frame = build_frame(data, {});
  ParameterSet params = process_params(0.7, 0.2, 0.5, 0.6);
  params.add({"sd_obs", 0.4, Transform::positive});
  const ModelInstance inst = instantiate(frame, params);
  Vector y = incidence(frame) * simulate_effects(inst.process, 16u);
  std::mt19937_64 rng(17u);
  std::normal_distribution<double> noise(0.0, 0.4);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
  frame.data.response = y;

  MarginalLikelihood lik(frame);
  const int n_u = frame.n_effects();
  InnerFit fit = lik.inner_optimize(inst, Vector::Constant(n_u, 5.0));
  CHECK(fit.iterations == 1);

  const Matrix z = incidence(frame);
  const Matrix q = Matrix(inst.process.precision());
  const Vector m_u = Matrix(inst.process.rows).fullPivLu().solve(inst.process.offset);
  const Matrix h = q + z.transpose() * z / (0.4 * 0.4);
  const Vector rhs = q * m_u + z.transpose() * y / (0.4 * 0.4);
  const Vector direct = h.ldlt().solve(rhs);
  CHECK((fit.mode - direct).cwiseAbs().maxCoeff() < 1e-8);

  InnerFit again = lik.inner_optimize(inst, fit.mode);
  CHECK(again.iterations == 0);
}

TEST_CASE("poisson inner mode matches a generic optimizer") {
  SpatioTemporalDataset data = panel_data(6, 2, 25u, 0);
  ModelSettings settings;
  settings.family = Family::poisson;
  settings.link = Link::log;
  data.response = Vector::Zero(data.n_rows());
  ModelFrame frame = build_frame(data, settings);
  ParameterSet params = process_params(0.5, 1.0, 0.4, 0.6);

  const ModelInstance inst = instantiate(frame, params);
  std::mt19937_64 rng(26u);
  std::poisson_distribution<int> draw(3.0);
  for (int i = 0; i < frame.data.n_rows(); ++i)
    frame.data.response(i) = draw(rng);

  MarginalLikelihood lik(frame);
  const InnerFit fit = lik.inner_optimize(inst, Vector::Constant(frame.n_effects(), 1.0));
  CHECK(fit.gradient_norm < 1e-8);

  const auto objective = [&](const Vector& u) { return lik.joint_nll(inst, u); };
  const Vector oracle = fd_newton(objective, Vector::Constant(frame.n_effects(), 1.0));
  CHECK((fit.mode - oracle).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("the marginal value does not depend on the inner start") {
  SpatioTemporalDataset data = panel_data(6, 2, 35u, 0);
  ModelSettings settings;
  settings.family = Family::poisson;
  settings.link = Link::log;
  ModelFrame frame = build_frame(data, settings);
  std::mt19937_64 rng(36u);
  std::poisson_distribution<int> draw(4.0);
  for (int i = 0; i < frame.data.n_rows(); ++i) frame.data.response(i) = draw(rng);
  ParameterSet params = process_params(0.4, 1.2, 0.3, 0.5);

  MarginalLikelihood lik(frame);
  const int n_u = frame.n_effects();
  const Evaluation a = lik.evaluate(params, Vector::Zero(n_u));
  Vector other = Vector::Constant(n_u, 1.2);
  std::normal_distribution<double> jitter(0.0, 0.5);
  for (int i = 0; i < n_u; ++i) other(i) += jitter(rng);
  const Evaluation b = lik.evaluate(params, other);
  CHECK(std::abs(a.nll - b.nll) < 1e-8);
}

TEST_CASE("analytic joint gradient agrees with finite differences") {
  SpatioTemporalDataset data = panel_data(5, 2, 45u, 1);
  ModelSettings settings;
  settings.family = Family::poisson;
  settings.link = Link::log;
  ModelFrame frame = build_frame(data, settings);
  std::mt19937_64 rng(46u);
  std::poisson_distribution<int> draw(2.0);
  for (int i = 0; i < frame.data.n_rows(); ++i) frame.data.response(i) = draw(rng);
  ParameterSet params = process_params(0.6, 0.8, 0.5, 0.4);
  params.add({"depth", 0.3, Transform::identity});

  const ModelInstance inst = instantiate(frame, params);
  MarginalLikelihood lik(frame);
  const int n_u = frame.n_effects();
  Vector u = Vector::Constant(n_u, 0.8);
  std::normal_distribution<double> jitter(0.0, 0.4);
  for (int i = 0; i < n_u; ++i) u(i) += jitter(rng);

  const Vector g = lik.joint_gradient(inst, u);
  Vector fd(n_u);
  for (int j = 0; j < n_u; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(u(j)));
    Vector up = u, um = u;
    up(j) += h;
    um(j) -= h;
    fd(j) = (lik.joint_nll(inst, up) - lik.joint_nll(inst, um)) / (2.0 * h);
  }
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  CHECK((g - fd).cwiseAbs().maxCoeff() < 1e-5 * scale);
}

TEST_CASE("without random effects the marginal is the observation likelihood") {
  const int n = 40;
  ModelFrame frame;
  frame.data.coords = testutil::random_points(n, 2, 55u);
  frame.data.times.assign(static_cast<std::size_t>(n), 0);
  frame.data.n_times = 1;
  frame.data.time_labels = {0};
  frame.data.covariates = testutil::random_points(n, 2, 56u);
  frame.data.covariate_names = {"x1", "x2"};
  frame.row_effect.assign(static_cast<std::size_t>(n), -1);
  std::mt19937_64 rng(57u);
  std::normal_distribution<double> noise(0.0, 0.7);
  frame.data.response.resize(n);
  for (int i = 0; i < n; ++i)
    frame.data.response(i) =
        1.5 * frame.data.covariates(i, 0) - 0.8 * frame.data.covariates(i, 1) + noise(rng);

  ParameterSet params;
  params.add({"sd_obs", 0.7, Transform::positive});
  params.add({"x1", 1.5, Transform::identity});
  params.add({"x2", -0.8, Transform::identity});

  MarginalLikelihood lik(frame);
  const Evaluation ev = lik.evaluate(params);
  double direct = 0.0;
  for (int i = 0; i < n; ++i) {
    const double eta = 1.5 * frame.data.covariates(i, 0) - 0.8 * frame.data.covariates(i, 1);
    direct -= log_density_eta(frame.data.response(i), eta, {Family::gaussian, 0.7},
                              Link::identity)
                  .value;
  }
  CHECK(std::abs(ev.nll - direct) < 1e-12);

  // fitting this degenerate model is plain least squares
  ParameterSet init;
  init.add({"sd_obs", 1.0, Transform::positive});
  init.add({"x1", 0.0, Transform::identity});
  init.add({"x2", 0.0, Transform::identity});
  const FitResult fit = fit_model(frame, init);
  CHECK(fit.converged);
  const Matrix x = frame.data.covariates;
  const Vector ols = (x.transpose() * x).ldlt().solve(x.transpose() * frame.data.response);
  CHECK(std::abs(fit.params.value_of("x1") - ols(0)) < 2e-3);
  CHECK(std::abs(fit.params.value_of("x2") - ols(1)) < 2e-3);
  const Vector resid = frame.data.response - x * ols;
  const double sd_mle = std::sqrt(resid.squaredNorm() / n);
  CHECK(std::abs(fit.params.value_of("sd_obs") - sd_mle) < 2e-3);
}

TEST_CASE("shifting the response leaves the curvature determinant alone") {
  SpatioTemporalDataset data = panel_data(6, 2, 65u, 0);
  ModelFrame frame = build_frame(data, {});
  std::mt19937_64 rng(66u);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < frame.data.n_rows(); ++i) frame.data.response(i) = noise(rng);
  ParameterSet params = process_params(0.5, 0.1, 0.4, 0.7);
  params.add({"sd_obs", 0.6, Transform::positive});

  MarginalLikelihood lik(frame);
  const Evaluation before = lik.evaluate(params);
  ModelFrame shifted = frame;
  shifted.data.response.array() += 5.0;
  MarginalLikelihood lik2(shifted);
  const Evaluation after = lik2.evaluate(params);
  CHECK(std::abs(before.log_det - after.log_det) < 1e-12);
}

TEST_CASE("fitting recovers the simulating parameters within reason") {
  SpatioTemporalDataset data = panel_data(16, 10, 75u, 1);
  ModelFrame frame = build_frame(data, {});
  ParameterSet truth = process_params(1.0, 0.5, 0.6, 0.7);
  truth.add({"sd_obs", 0.4, Transform::positive});
  truth.add({"depth", 1.2, Transform::identity});

  const ModelInstance inst = instantiate(frame, truth);
  Vector y = inst.eta_fixed + incidence(frame) * simulate_effects(inst.process, 76u);
  std::mt19937_64 rng(77u);
  std::normal_distribution<double> noise(0.0, 0.4);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
  frame.data.response = y;

  const FitResult fit = fit_model(frame);
  CHECK(fit.converged);
  CHECK(fit.convergence == "relative convergence");
  CHECK(fit.outer_iterations > 0);
  CHECK(fit.inner_iterations > 0);

  for (std::size_t i = 1; i < fit.nll_trace.size(); ++i)
    CHECK(fit.nll_trace[i] <= fit.nll_trace[i - 1] + 1e-9);

  // The process mean is informed by a single realized field, so its
  // sampling error is of the order of the spatial standard deviation.
  CHECK(std::abs(fit.params.value_of("mu") - 0.5) < 2.0);
  CHECK(std::abs(fit.params.value_of("ar1") - 0.6) < 0.35);
  CHECK(std::abs(fit.params.value_of("depth") - 1.2) < 0.5);
  CHECK(fit.params.value_of("sd_spatial") > 0.3);
  CHECK(fit.params.value_of("sd_spatial") < 3.0);
  CHECK(fit.params.value_of("sd_obs") > 0.1);
  CHECK(fit.params.value_of("sd_obs") < 1.2);

  CHECK(fit.params.at("nu").fixed);
  CHECK(fit.params.at("nu").se == 0.0);
  CHECK(fit.params.at("ar1").se > 0.0);
  REQUIRE(fit.mode_se.size() == frame.n_effects());
  CHECK(fit.mode_se.minCoeff() > 0.0);
}

TEST_CASE("standard errors match the generalized least squares formula") {
  SpatioTemporalDataset data = panel_data(10, 2, 85u, 2);
  ModelFrame frame = build_frame(data, {});
  ParameterSet params = process_params(0.6, 0.3, 0.5, 0.4);
  params.add({"sd_obs", 0.5, Transform::positive});
  for (auto& p : params.items) p.fixed = true;
  params.add({"depth", 0.0, Transform::identity});
  params.add({"temp", 0.0, Transform::identity});

  const ModelInstance inst = instantiate(frame, params);
  Vector y = incidence(frame) * simulate_effects(inst.process, 86u);
  std::mt19937_64 rng(87u);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    y(i) += 0.9 * frame.data.covariates(i, 0) - 0.6 * frame.data.covariates(i, 1) + noise(rng);
  frame.data.response = y;

  const FitResult fit = fit_model(frame, params);
  CHECK(fit.converged);

  const Matrix z = incidence(frame);
  const Matrix sigma_u = Matrix(inst.process.precision()).inverse();
  Matrix v = z * sigma_u * z.transpose();
  v.diagonal().array() += 0.5 * 0.5;
  const Matrix x = frame.data.covariates;
  const Vector m_u = Matrix(inst.process.rows).fullPivLu().solve(inst.process.offset);
  const Matrix vinv_x = v.ldlt().solve(x);
  const Matrix c = (x.transpose() * vinv_x).inverse();
  const Vector gls = c * vinv_x.transpose() * (y - z * m_u);

  CHECK(std::abs(fit.params.value_of("depth") - gls(0)) < 2e-3);
  CHECK(std::abs(fit.params.value_of("temp") - gls(1)) < 2e-3);
  CHECK(std::abs(fit.params.at("depth").se - std::sqrt(c(0, 0))) < 1e-5);
  CHECK(std::abs(fit.params.at("temp").se - std::sqrt(c(1, 1))) < 1e-5);
  CHECK(std::abs(fit.beta_cov(0, 1) - c(0, 1)) < 1e-5);
  CHECK(fit.params.at("mu").se == 0.0);
}

TEST_CASE("replicating every observation shrinks coefficient errors by root two") {
  SpatioTemporalDataset data = panel_data(12, 2, 95u, 1);
  std::mt19937_64 rng(96u);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int i = 0; i < data.n_rows(); ++i)
    data.response(i) = 0.5 * data.covariates(i, 0) + noise(rng);

  ParameterSet params = process_params(0.05, 0.0, 0.3, 0.05);
  params.add({"sd_obs", 2.0, Transform::positive});
  for (auto& p : params.items) p.fixed = true;
  params.add({"depth", 0.0, Transform::identity});

  const ModelFrame frame = build_frame(data, {});
  const FitResult fit = fit_model(frame, params);

  const int n = data.n_rows();
  SpatioTemporalDataset doubled = data;
  doubled.coords.conservativeResize(2 * n, 2);
  doubled.coords.bottomRows(n) = data.coords;
  doubled.response.conservativeResize(2 * n);
  doubled.response.tail(n) = data.response;
  doubled.covariates.conservativeResize(2 * n, 1);
  doubled.covariates.bottomRows(n) = data.covariates;
  for (int i = 0; i < n; ++i) doubled.times.push_back(data.times[static_cast<std::size_t>(i)]);

  const ModelFrame frame2 = build_frame(doubled, {});
  const FitResult fit2 = fit_model(frame2, params);

  const double ratio = fit.params.at("depth").se / fit2.params.at("depth").se;
  CHECK(ratio > 0.95 * std::numbers::sqrt2);
  CHECK(ratio < 1.05 * std::numbers::sqrt2);
}

TEST_CASE("random effect standard errors match the dense inverse") {
  SpatioTemporalDataset data = panel_data(8, 2, 105u, 0);
  ModelFrame frame = build_frame(data, {});
  std::mt19937_64 rng(106u);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < frame.data.n_rows(); ++i) frame.data.response(i) = noise(rng);
  ParameterSet params = process_params(0.7, 0.2, 0.5, 0.6);
  params.add({"sd_obs", 0.5, Transform::positive});

  const ModelInstance inst = instantiate(frame, params);
  MarginalLikelihood lik(frame);
  const Evaluation ev = lik.evaluate(params);
  const Vector se = lik.effect_standard_errors(inst, ev.inner.mode);

  const Matrix z = incidence(frame);
  Matrix h = Matrix(inst.process.precision()) + z.transpose() * z / (0.5 * 0.5);
  const Matrix hinv = h.inverse();
  for (int k = 0; k < frame.n_effects(); ++k)
    CHECK(std::abs(se(k) - std::sqrt(hinv(k, k))) < 1e-8);
}

TEST_CASE("a fully fixed parameter set is evaluated, not optimized") {
  SpatioTemporalDataset data = panel_data(6, 2, 115u, 0);
  ModelFrame frame = build_frame(data, {});
  std::mt19937_64 rng(116u);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < frame.data.n_rows(); ++i) frame.data.response(i) = noise(rng);
  ParameterSet params = process_params(0.5, 0.0, 0.4, 0.5);
  params.add({"sd_obs", 0.8, Transform::positive});
  for (auto& p : params.items) p.fixed = true;

  const FitResult fit = fit_model(frame, params);
  CHECK(fit.converged);
  CHECK(fit.convergence == "relative convergence");
  CHECK(fit.outer_iterations == 0);
  for (const auto& p : fit.params.items) CHECK(p.se == 0.0);

  MarginalLikelihood lik(frame);
  CHECK(std::abs(fit.nll - lik.evaluate(params).nll) < 1e-12);
}

TEST_CASE("hitting the outer iteration cap is reported honestly") {
  SpatioTemporalDataset data = panel_data(10, 2, 125u, 0);
  ModelFrame frame = build_frame(data, {});
  ParameterSet truth = process_params(0.8, 1.0, 0.5, 0.6);
  truth.add({"sd_obs", 0.5, Transform::positive});
  const ModelInstance inst = instantiate(frame, truth);
  Vector y = incidence(frame) * simulate_effects(inst.process, 126u);
  std::mt19937_64 rng(127u);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
  frame.data.response = y;

  FitConfig config;
  config.max_outer_iterations = 1;
  config.standard_errors = false;
  const FitResult fit = fit_model(frame, config);
  CHECK(!fit.converged);
  CHECK(fit.convergence == "iteration limit");
}

TEST_CASE("default parameters are sensible for each family") {
  SpatioTemporalDataset data = panel_data(6, 3, 135u, 1);
  std::mt19937_64 rng(136u);
  std::normal_distribution<double> noise(2.0, 1.5);
  for (int i = 0; i < data.n_rows(); ++i) data.response(i) = noise(rng);
  const ModelFrame frame = build_frame(data, {});
  const ParameterSet ps = default_parameters(frame);
  CHECK(ps.at("nu").fixed);
  CHECK(ps.at("nu").value == 0.5);
  CHECK(!ps.at("ar1").fixed);
  CHECK(ps.at("ar1").value == 0.5);
  CHECK(std::abs(ps.value_of("mu") - data.response.mean()) < 1e-12);
  CHECK(ps.has("sd_obs"));
  CHECK(!ps.has("overdispersion"));
  CHECK(ps.value_of("depth") == 0.0);
  CHECK(ps.value_of("sd_spatial") == ps.value_of("sd_time"));

  ModelSettings nb;
  nb.family = Family::negative_binomial;
  nb.link = Link::log;
  SpatioTemporalDataset counts = panel_data(6, 3, 137u, 0);
  std::poisson_distribution<int> draw(5.0);
  for (int i = 0; i < counts.n_rows(); ++i) counts.response(i) = draw(rng);
  const ModelFrame nb_frame = build_frame(counts, nb);
  const ParameterSet nb_ps = default_parameters(nb_frame);
  CHECK(nb_ps.value_of("overdispersion") == 1.0);
  CHECK(std::abs(nb_ps.value_of("mu") - std::log(counts.response.mean())) < 1e-12);

  SpatioTemporalDataset one_year = panel_data(8, 1, 138u, 0);
  for (int i = 0; i < one_year.n_rows(); ++i) one_year.response(i) = noise(rng);
  const ModelFrame one_frame = build_frame(one_year, {});
  const ParameterSet one_ps = default_parameters(one_frame);
  CHECK(one_ps.at("ar1").fixed);
  CHECK(one_ps.at("ar1").value == 0.0);

  SpatioTemporalDataset constant = panel_data(6, 2, 139u, 0);
  constant.response.setConstant(3.0);
  const ModelFrame const_frame = build_frame(constant, {});
  CHECK(default_parameters(const_frame).value_of("sd_spatial") == 0.1);
}

TEST_CASE("covariates may not shadow model parameter names") {
  SpatioTemporalDataset data = panel_data(5, 2, 145u, 1);
  data.covariate_names = {"mu"};
  const ModelFrame frame = build_frame(data, {});
  CHECK_THROWS_AS(default_parameters(frame), DataError);
}

TEST_CASE("the smoothness parameter cannot be freed after framing") {
  SpatioTemporalDataset data = panel_data(5, 2, 155u, 0);
  const ModelFrame frame = build_frame(data, {});
  ParameterSet ps = default_parameters(frame);
  ps.at("nu").fixed = false;
  CHECK_THROWS_AS(fit_model(frame, ps), DataError);
}

TEST_CASE("families without a log-concave linear predictor still evaluate") {
  SpatioTemporalDataset data = panel_data(6, 2, 165u, 0);
  ModelSettings settings;
  settings.family = Family::gaussian;
  settings.link = Link::log;
  ModelFrame frame = build_frame(data, settings);
  std::mt19937_64 rng(166u);
  std::normal_distribution<double> noise(0.0, 0.4);
  for (int i = 0; i < frame.data.n_rows(); ++i)
    frame.data.response(i) = std::exp(0.3 + noise(rng)) + noise(rng);
  ParameterSet params = process_params(0.3, 0.2, 0.3, 0.3);
  params.add({"sd_obs", 0.5, Transform::positive});

  MarginalLikelihood lik(frame);
  const Evaluation ev = lik.evaluate(params);
  CHECK(std::isfinite(ev.nll));
}

TEST_CASE("a family's own parameter must be present") {
  SpatioTemporalDataset data = panel_data(5, 2, 175u, 0);
  const ModelFrame frame = build_frame(data, {});
  const ParameterSet params = process_params(0.5, 0.0, 0.3, 0.5);  // no sd_obs
  CHECK_THROWS_AS(instantiate(frame, params), DataError);
}
