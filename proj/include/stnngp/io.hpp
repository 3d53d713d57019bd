#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stnngp/laplace.hpp"
#include "stnngp/predict.hpp"

namespace stnngp {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Names of the data columns a file is read by.
struct ColumnConfig {
  std::string x = "x";
  std::string y = "y";
  std::string time = "time";
  std::string response = "response";
  std::vector<std::string> covariates;
};

/// One run's worth of settings, read from a plain key-value file: one
/// `key = value` per line, dotted keys, '#' comments. Unknown keys are
/// rejected so a typo cannot silently fall back to a default.
struct RunConfig {
  ColumnConfig columns;
  ModelSettings settings;
  std::string reference_source = "data";  // "data" or a CSV of reference points
  int forecast_horizon = 0;
  std::uint64_t seed = 1;
  int n_sim = 100;
  FitConfig fit;
  std::vector<std::pair<std::string, double>> fixed;  // fix.<name> = value
  std::vector<std::pair<std::string, double>> start;  // start.<name> = value
};

RunConfig parse_config(std::istream& in, const std::string& source_name);
RunConfig read_config(const std::string& path);

/// Starting parameters for a frame under a config: model defaults, then
/// start.<name> values, then fix.<name> values with the fixed flag set.
ParameterSet configured_parameters(const ModelFrame& frame, const RunConfig& config);

/// Read observations from a comma-separated file with a header row. User
/// times are arbitrary integers; they are offset to internal indices with
/// every gap year kept as an unobserved time. Rows with a missing response
/// (empty, NA or NaN) are dropped with a warning; a missing value anywhere
/// else is an error.
SpatioTemporalDataset ingest_csv(const std::string& path, const RunConfig& config,
                                 std::vector<std::string>* warnings = nullptr);

/// Read a GeoJSON FeatureCollection of point features whose properties hold
/// the configured columns. Missing-response handling matches the CSV reader.
SpatioTemporalDataset ingest_geojson(const std::string& path, const RunConfig& config,
                                     std::vector<std::string>* warnings = nullptr);

void write_dataset_csv(const std::string& path, const SpatioTemporalDataset& data,
                       const ColumnConfig& columns);
void write_geojson(const std::string& path, const SpatioTemporalDataset& data,
                   const ColumnConfig& columns);

/// Reference locations from a CSV holding the configured coordinate columns.
Matrix read_reference_csv(const std::string& path, const RunConfig& config);

/// Prediction points from a CSV with the coordinate and time columns, plus
/// the given covariate columns when the model has any. Times are user
/// labels.
struct PredictionPoints {
  Matrix locations;
  std::vector<long long> times;
  Matrix covariates;
};

PredictionPoints read_prediction_points(const std::string& path, const RunConfig& config,
                                        const std::vector<std::string>& covariate_names);

/// Everything needed to reload a fit and continue working with it: the run
/// configuration, the data as fitted (the joint curvature, and with it every
/// prediction standard error, depends on the observations), the reference
/// set, the neighbour graph and the estimates.
struct FitArtifact {
  RunConfig config;
  SpatioTemporalDataset data;
  Matrix reference_locations;
  std::vector<std::vector<int>> dag_parents;
  FitResult fit;
};

/// Versioned single-file container (format 1, JSON). Reading a file written
/// by this build reproduces the artifact exactly, NaN standard errors
/// included.
void write_fit_artifact(const std::string& path, const FitArtifact& artifact);
FitArtifact read_fit_artifact(const std::string& path);

/// Rebuild the model frame a loaded artifact was fitted on. The neighbour
/// graph is derived from the data again and checked against the stored one,
/// so an artifact from a build with different graph rules fails loudly.
ModelFrame rebuild_frame(const FitArtifact& artifact);

/// Parameter table with columns name, par, se, fixed.
void write_parameter_table(const std::string& path, const ParameterSet& params);

/// Fitted random effects with columns kind, time, x, y, mode, se; the
/// temporal effects have no location and leave x and y empty.
void write_effect_table(const std::string& path, const ModelFrame& frame, const Vector& mode,
                        const Vector& mode_se);

/// Prediction records with columns x, y, t, w, w_se, linear, linear_se,
/// response, response_se. Times are user labels.
void write_prediction_csv(const std::string& path, const Matrix& locations,
                          const std::vector<long long>& times,
                          const std::vector<PredictionRecord>& records);

/// Response replicates in long form: rep, x, y, t, value.
void write_simulation_csv(const std::string& path, const SpatioTemporalDataset& data,
                          const Matrix& replicates);

/// Residuals with columns x, y, t, observed, pit.
void write_pit_csv(const std::string& path, const SpatioTemporalDataset& data, const Vector& pit);

/// One layer of grid values as an ESRI ASCII grid. `cell_values` holds one
/// value per cell, row-major from the south row up, matching the grid
/// struct; cells to skip hold the NODATA value -9999. The format has a
/// single cell size, so dx must equal dy.
void write_esri_grid(const std::string& path, const PredictionGrid& grid,
                     const Vector& cell_values);

}  // namespace stnngp
