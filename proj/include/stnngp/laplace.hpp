#pragma once

#include <Eigen/SparseCholesky>

#include <string>
#include <vector>

#include "stnngp/model.hpp"
#include "stnngp/parameters.hpp"

namespace stnngp {

struct FitConfig {
  int max_inner_iterations = 100;
  double inner_gradient_tol = 1e-8;
  int max_outer_iterations = 500;
  double outer_relative_tol = 1e-8;
  double outer_gradient_tol = 1e-4;
  bool standard_errors = true;
};

/// One parameter point expanded into the pieces the likelihood evaluates.
struct ModelInstance {
  TemporalParams temporal;
  Calibration cal;
  ResponseFamily response;
  Link link = Link::identity;
  Vector beta;
  Vector eta_fixed;  // covariate part of the linear predictor, one per row
  ProcessModel process;
};

/// Starting values in the reporting order: sd_spatial, nu (always fixed),
/// mu, ar1, sd_time, the family's own parameter if any, then one coefficient
/// per covariate under its column name. With a single time the lag-1
/// autocorrelation is unidentifiable, so it is fixed at zero.
ParameterSet default_parameters(const ModelFrame& frame);

ModelInstance instantiate(const ModelFrame& frame, const ParameterSet& params);

struct InnerFit {
  Vector mode;
  double joint_nll = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

struct Evaluation {
  double nll = 0.0;      // Laplace-approximate marginal
  double log_det = 0.0;  // log determinant of the joint curvature at the mode
  InnerFit inner;
};

struct FitResult {
  ParameterSet params;
  Matrix beta_cov;               // covariance of the covariate coefficients
  Vector mode;                   // random effects at the optimum
  Vector mode_se;
  double nll = 0.0;
  bool converged = false;
  std::string convergence;       // "relative convergence" or "iteration limit"
  int outer_iterations = 0;
  long inner_iterations = 0;
  std::vector<double> nll_trace;  // accepted objective values, including the start
  std::vector<std::string> warnings;
};

/// The Laplace-approximate negative log marginal likelihood of one frame.
/// The sparse curvature pattern is fixed by the frame, so the factorization
/// is analyzed once and reused by every evaluation; one object should serve
/// a whole fit.
class MarginalLikelihood {
 public:
  explicit MarginalLikelihood(const ModelFrame& frame, FitConfig config = {});

  const ModelFrame& frame() const { return *frame_; }
  int n_effects() const { return frame_->layout.size(); }
  long inner_iterations() const { return inner_iterations_; }

  double joint_nll(const ModelInstance& inst, const Vector& u) const;
  Vector joint_gradient(const ModelInstance& inst, const Vector& u) const;

  /// Joint curvature in the random effects: process precision plus the
  /// observed negative second derivatives, without any clamping.
  Eigen::SparseMatrix<double> joint_hessian(const ModelInstance& inst, const Vector& u) const;

  /// Newton with a line search, run until the gradient max-norm drops under
  /// the configured tolerance. The iteration count is the number of accepted
  /// steps, so starting at the mode reports zero.
  InnerFit inner_optimize(const ModelInstance& inst, Vector u);

  Evaluation evaluate(const ParameterSet& params, Vector u0);
  /// Starts the inner solver from the flat state at the process mean.
  Evaluation evaluate(const ParameterSet& params);

  /// Marginal standard deviations of the random effects at the mode, from
  /// the diagonal of the inverse joint curvature.
  Vector effect_standard_errors(const ModelInstance& inst, const Vector& mode);

 private:
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                                       Eigen::NaturalOrdering<int>>;

  double obs_loglik(const ModelInstance& inst, const Vector& u) const;
  void factorize(const Eigen::SparseMatrix<double>& h);

  /// Factorize with symmetric diagonal scaling, which keeps the solve
  /// accurate when parameter scales drive the curvature entries far apart.
  /// Returns the scale vector: solutions of h x = b are s .* solve(s .* b).
  Vector scaled_factorize(const Eigen::SparseMatrix<double>& h);

  const ModelFrame* frame_;
  FitConfig config_;
  Solver solver_;
  bool pattern_done_ = false;
  long inner_iterations_ = 0;
};

FitResult fit_model(const ModelFrame& frame, const ParameterSet& init, FitConfig config = {});
FitResult fit_model(const ModelFrame& frame, FitConfig config = {});

}  // namespace stnngp
