#pragma once

#include <cstdint>
#include <vector>

#include "stnngp/laplace.hpp"

namespace stnngp {

/// Point prediction on the three reported scales. The linear predictor is
/// the covariate part plus the predicted effect by construction.
struct PredictionRecord {
  double w = 0.0;
  double w_se = 0.0;
  double linear = 0.0;
  double linear_se = 0.0;
  double response = 0.0;
  double response_se = 0.0;
};

struct WPrediction {
  double w = 0.0;
  double w_se = 0.0;
};

struct PredictOptions {
  /// Times past the fitted range that may be predicted. Forecasting is off
  /// unless this is raised.
  int forecast_horizon = 0;
  /// Treat the conditioning effects as known values rather than estimates.
  /// Prediction variance is then the bare conditional variance, and points
  /// that alias a conditioning effect are reported without uncertainty.
  bool effects_are_known = false;
};

/// The fitted frame extended by forecast time slices. The leading effects
/// are the supplied values; the new slices hold the conditional-mean
/// recursion under the process law, which is their joint mode.
struct ForecastBase {
  ModelFrame frame;
  Vector mode;
};

ForecastBase extend_forecast(const ModelFrame& frame, const ParameterSet& params,
                             const Vector& effects, int horizon);

/// Effect predictions at arbitrary locations and 0-based internal times,
/// conditioning on the supplied effect values. A location coinciding with a
/// reference node, or with a transient effect active at the requested time,
/// reads that effect directly; anywhere else the effect is scored under its
/// conditional law given the reference slice. Standard errors propagate the
/// conditioning-effect uncertainty through the joint curvature unless the
/// effects are declared known.
std::vector<WPrediction> predict_w(const ModelFrame& frame, const ParameterSet& params,
                                   const Vector& effects, const Matrix& locations,
                                   const std::vector<int>& times, const PredictOptions& opt = {});

/// Same, conditioning on a fit: points that alias a fitted effect reproduce
/// the stored mode and standard error exactly.
std::vector<WPrediction> predict_w(const ModelFrame& frame, const FitResult& fit,
                                   const Matrix& locations, const std::vector<int>& times,
                                   const PredictOptions& opt = {});

struct LinearPrediction {
  double linear = 0.0;
  double linear_se = 0.0;
};

/// Combine a covariate row with an effect prediction. The coefficient
/// estimates are taken to be uncorrelated with the predicted effect, so the
/// variances add.
LinearPrediction predict_linear(const Vector& x_row, const Vector& beta, const Matrix& beta_cov,
                                const WPrediction& w);

struct ResponsePrediction {
  double response = 0.0;
  double response_se = 0.0;
};

/// Second-order delta method through the inverse link: the mean picks up
/// half the curvature times the variance, the variance the squared slope
/// term plus half the squared-curvature term.
ResponsePrediction predict_response(double linear, double linear_se, Link link);

/// Full prediction records at the given points. `covariates` must have one
/// row per point and the fitted covariate columns; pass an empty matrix
/// when the model has none.
std::vector<PredictionRecord> predict(const ModelFrame& frame, const FitResult& fit,
                                      const Matrix& locations, const std::vector<int>& times,
                                      const Matrix& covariates, const PredictOptions& opt = {});

/// Rectangular prediction raster. Rows count from the south edge, so cell
/// (0, 0) is the lower-left corner; `mask` flags the active cells row by
/// row in that order. Every active cell is predicted at its centroid, once
/// per requested time.
struct PredictionGrid {
  double x0 = 0.0;  // lower-left corner
  double y0 = 0.0;
  double dx = 1.0;  // cell sizes
  double dy = 1.0;
  int n_rows = 0;
  int n_cols = 0;
  std::vector<std::uint8_t> mask;  // row-major, south row first; empty = all active
  std::vector<int> times;
};

struct GridPoints {
  Matrix locations;        // centroids of active cells, repeated per time
  std::vector<int> times;  // parallel to locations
  std::vector<int> cells;  // row-major cell index of each point
};

GridPoints grid_points(const PredictionGrid& grid);

}  // namespace stnngp
