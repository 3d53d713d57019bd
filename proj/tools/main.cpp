#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "stnngp/io.hpp"
#include "stnngp/predict.hpp"
#include "stnngp/simulate.hpp"

using namespace stnngp;

namespace {

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

SpatioTemporalDataset load_dataset(const std::string& path, const RunConfig& config) {
  std::vector<std::string> warnings;
  SpatioTemporalDataset data = ends_with(path, ".geojson") || ends_with(path, ".json")
                                   ? ingest_geojson(path, config, &warnings)
                                   : ingest_csv(path, config, &warnings);
  print_warnings(warnings);
  return data;
}

ModelFrame frame_from_config(SpatioTemporalDataset data, const RunConfig& config) {
  if (config.reference_source == "data") return build_frame(std::move(data), config.settings);
  const Matrix refs = read_reference_csv(config.reference_source, config);
  return build_frame(std::move(data), config.settings, refs);
}

int internal_time(const SpatioTemporalDataset& data, long long label) {
  const long long first = data.time_labels.front();
  if (label < first)
    throw DataError("prediction time " + std::to_string(label) + " is before the fitted range");
  return static_cast<int>(label - first);
}

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("could not parse '" + item + "' in " + what);
    }
  }
  return out;
}

std::vector<long long> parse_label_list(const std::string& text, const std::string& what) {
  std::vector<long long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw UsageError("could not parse '" + item + "' in " + what);
    }
  }
  return out;
}

// The console table rounds to six significant digits; the CSV written by
// --table keeps full precision.
void print_parameter_summary(const FitResult& fit) {
  const auto six = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  std::size_t width = 4;
  for (const auto& p : fit.params.items) width = std::max(width, p.name.size());
  std::cout << std::left << std::setw(static_cast<int>(width) + 2) << "name" << std::right
            << std::setw(14) << "par" << std::setw(14) << "se" << std::setw(7) << "fixed" << '\n';
  for (const auto& p : fit.params.items)
    std::cout << std::left << std::setw(static_cast<int>(width) + 2) << p.name << std::right
              << std::setw(14) << six(p.value) << std::setw(14) << six(p.se) << std::setw(7)
              << (p.fixed ? "true" : "false") << '\n';
  std::cout << "nll " << format_double(fit.nll) << '\n';
  std::cout << "convergence " << fit.convergence << " (" << fit.outer_iterations << " steps)\n";
}

int run_fit(const std::string& data_path, const std::string& config_path,
            const std::string& artifact_path, const std::string& table_path,
            const std::string& effects_path) {
  const RunConfig config = config_path.empty() ? RunConfig{} : read_config(config_path);
  ModelFrame frame = frame_from_config(load_dataset(data_path, config), config);
  const ParameterSet init = configured_parameters(frame, config);
  const FitResult fit = fit_model(frame, init, config.fit);
  print_warnings(fit.warnings);

  FitArtifact artifact{config, frame.data, frame.refs.locations, frame.dag.persistent_parents,
                       fit};
  write_fit_artifact(artifact_path, artifact);
  if (!table_path.empty()) write_parameter_table(table_path, fit.params);
  if (!effects_path.empty()) write_effect_table(effects_path, frame, fit.mode, fit.mode_se);
  print_parameter_summary(fit);

  if (!fit.converged) {
    std::cerr << "error: fit did not converge (" << fit.convergence << ")\n";
    return 3;
  }
  return 0;
}

const char* const kGridLayers[] = {"w", "w_se", "linear", "linear_se", "response", "response_se"};

double layer_value(const PredictionRecord& r, int layer) {
  switch (layer) {
    case 0: return r.w;
    case 1: return r.w_se;
    case 2: return r.linear;
    case 3: return r.linear_se;
    case 4: return r.response;
    default: return r.response_se;
  }
}

int run_predict(const std::string& artifact_path, const std::string& points_path,
                const std::string& grid_spec, const std::string& times_spec,
                const std::string& out_path, const std::string& grid_prefix, int horizon,
                bool horizon_set) {
  const FitArtifact artifact = read_fit_artifact(artifact_path);
  const ModelFrame frame = rebuild_frame(artifact);
  PredictOptions opt;
  opt.forecast_horizon = horizon_set ? horizon : artifact.config.forecast_horizon;

  if (!points_path.empty()) {
    if (out_path.empty()) throw UsageError("point prediction needs --out");
    const PredictionPoints pts =
        read_prediction_points(points_path, artifact.config, frame.data.covariate_names);
    std::vector<int> times;
    for (long long label : pts.times) times.push_back(internal_time(frame.data, label));
    const Matrix covariates = frame.data.n_covariates() > 0 ? pts.covariates : Matrix();
    const auto records = predict(frame, artifact.fit, pts.locations, times, covariates, opt);
    write_prediction_csv(out_path, pts.locations, pts.times, records);
    return 0;
  }

  if (grid_spec.empty()) throw UsageError("predict needs --points or --grid");
  if (grid_prefix.empty()) throw UsageError("grid prediction needs --grid-prefix");
  if (times_spec.empty()) throw UsageError("grid prediction needs --times");
  if (frame.data.n_covariates() > 0)
    throw DataError(
        "grid prediction needs a model without covariates; predict at points with covariate "
        "values instead");

  const std::vector<double> spec = parse_number_list(grid_spec, "--grid");
  if (spec.size() != 5) throw UsageError("--grid takes x0,y0,cellsize,n_rows,n_cols");
  PredictionGrid grid;
  grid.x0 = spec[0];
  grid.y0 = spec[1];
  grid.dx = grid.dy = spec[2];
  grid.n_rows = static_cast<int>(spec[3]);
  grid.n_cols = static_cast<int>(spec[4]);
  const std::vector<long long> labels = parse_label_list(times_spec, "--times");
  for (long long label : labels) grid.times.push_back(internal_time(frame.data, label));

  const GridPoints pts = grid_points(grid);
  const auto records = predict(frame, artifact.fit, pts.locations, pts.times, Matrix(), opt);

  const auto& time_labels = frame.data.time_labels;
  const auto label_of = [&](int t) {
    return t < static_cast<int>(time_labels.size()) ? time_labels[static_cast<std::size_t>(t)]
                                                    : time_labels.front() + t;
  };
  std::vector<long long> record_labels;
  for (int t : pts.times) record_labels.push_back(label_of(t));
  if (!out_path.empty()) write_prediction_csv(out_path, pts.locations, record_labels, records);

  const int n_cells = grid.n_rows * grid.n_cols;
  for (std::size_t ti = 0; ti < grid.times.size(); ++ti) {
    const int t = grid.times[ti];
    for (int layer = 0; layer < 6; ++layer) {
      Vector values = Vector::Constant(n_cells, -9999.0);
      for (std::size_t i = 0; i < records.size(); ++i)
        if (pts.times[i] == t) values(pts.cells[i]) = layer_value(records[i], layer);
      const std::string path = grid_prefix + "_" + kGridLayers[layer] + "_" +
                               std::to_string(labels[ti]) + ".asc";
      write_esri_grid(path, grid, values);
    }
  }
  return 0;
}

int run_simulate(const std::string& artifact_path, const std::string& out_path, int n_sim,
                 bool n_set, std::uint64_t seed, bool seed_set, bool conditional) {
  const FitArtifact artifact = read_fit_artifact(artifact_path);
  const ModelFrame frame = rebuild_frame(artifact);
  const int n = n_set ? n_sim : artifact.config.n_sim;
  const std::uint64_t root = seed_set ? seed : artifact.config.seed;
  const Matrix sims =
      simulate_replicates(frame, artifact.fit.params, artifact.fit.mode, conditional, n, root);
  write_simulation_csv(out_path, frame.data, sims);
  return 0;
}

int run_residuals(const std::string& artifact_path, const std::string& out_path, int n_sim,
                  bool n_set, std::uint64_t seed, bool seed_set) {
  const FitArtifact artifact = read_fit_artifact(artifact_path);
  const ModelFrame frame = rebuild_frame(artifact);
  const int n = n_set ? n_sim : artifact.config.n_sim;
  const std::uint64_t root = seed_set ? seed : artifact.config.seed;

  const Matrix sims =
      simulate_replicates(frame, artifact.fit.params, artifact.fit.mode, true, n, root);
  // A stream of its own, apart from the per-replicate streams root, root+1, ...
  std::mt19937_64 rng(root ^ 0x9e3779b97f4a7c15ull);
  const bool integer_valued = frame.settings.family != Family::gaussian;
  const ResidualSet res = pit_residuals(frame.data.response, sims, integer_valued, rng);
  write_pit_csv(out_path, frame.data, res.pit);

  std::cout << "n " << frame.data.n_rows() << '\n';
  std::cout << "n_sim " << res.n_sim << '\n';
  std::cout << "ks_statistic " << format_double(ks_uniform_statistic(res.pit)) << '\n';
  std::cout << "ks_pvalue " << format_double(ks_uniform_pvalue(res.pit)) << '\n';
  std::cout << "dispersion_direction " << format_double(pit_dispersion_direction(res.pit))
            << '\n';
  return 0;
}

int run_graph(const std::string& data_path, const std::string& config_path,
              const std::string& dot_path) {
  const RunConfig config = config_path.empty() ? RunConfig{} : read_config(config_path);
  const ModelFrame frame = frame_from_config(load_dataset(data_path, config), config);
  std::ofstream out(dot_path, std::ios::binary);
  if (!out) throw DataError("could not write '" + dot_path + "'");
  out << to_dot(frame.dag, frame.refs);

  std::size_t n_edges = 0;
  for (const auto& parents : frame.dag.persistent_parents) n_edges += parents.size();
  std::cout << "n_references " << frame.refs.locations.rows() << '\n';
  std::cout << "n_edges " << n_edges << '\n';
  std::cout << "mean_edge_distance " << format_double(frame.geometry.mean_edge_distance) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal nearest-neighbour Gaussian process models"};
  app.require_subcommand(1);
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "worker threads")->capture_default_str();

  std::string data_path, config_path, artifact_path, table_path, effects_path;
  std::string points_path, grid_spec, times_spec, out_path, grid_prefix;
  int horizon = 0;
  int n_sim = 100;
  std::uint64_t seed = 1;
  bool conditional = false;

  CLI::App* fit = app.add_subcommand("fit", "Fit the model to a dataset");
  fit->add_option("--data", data_path, "observations, CSV or GeoJSON")->required();
  fit->add_option("--config", config_path, "run configuration file");
  fit->add_option("--artifact", artifact_path, "fit artifact to write")->required();
  fit->add_option("--table", table_path, "parameter table CSV");
  fit->add_option("--effects", effects_path, "random-effects CSV");

  CLI::App* predict = app.add_subcommand("predict", "Predict from a fitted model");
  predict->add_option("--artifact", artifact_path, "fit artifact")->required();
  predict->add_option("--points", points_path, "prediction points CSV");
  predict->add_option("--grid", grid_spec, "x0,y0,cellsize,n_rows,n_cols");
  predict->add_option("--times", times_spec, "comma-separated times for --grid");
  predict->add_option("--out", out_path, "prediction CSV to write");
  predict->add_option("--grid-prefix", grid_prefix, "path prefix for ASCII grid layers");
  CLI::Option* horizon_opt = predict->add_option("--horizon", horizon, "forecast horizon");

  CLI::App* simulate = app.add_subcommand("simulate", "Simulate responses from a fitted model");
  simulate->add_option("--artifact", artifact_path, "fit artifact")->required();
  simulate->add_option("--out", out_path, "simulation CSV to write")->required();
  CLI::Option* sim_n = simulate->add_option("--n", n_sim, "number of replicates");
  CLI::Option* sim_seed = simulate->add_option("--seed", seed, "root seed");
  simulate->add_flag("--conditional", conditional, "hold the fitted effects");

  CLI::App* residuals = app.add_subcommand("residuals", "Simulation-based PIT residuals");
  residuals->add_option("--artifact", artifact_path, "fit artifact")->required();
  residuals->add_option("--out", out_path, "PIT CSV to write")->required();
  CLI::Option* res_n = residuals->add_option("--n", n_sim, "number of simulations");
  CLI::Option* res_seed = residuals->add_option("--seed", seed, "root seed");

  CLI::App* graph = app.add_subcommand("graph", "Write the neighbour graph as DOT");
  graph->add_option("--data", data_path, "observations, CSV or GeoJSON")->required();
  graph->add_option("--config", config_path, "run configuration file");
  graph->add_option("--dot", out_path, "DOT file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (threads > 0) Eigen::setNbThreads(threads);

  try {
    if (app.got_subcommand(fit))
      return run_fit(data_path, config_path, artifact_path, table_path, effects_path);
    if (app.got_subcommand(predict))
      return run_predict(artifact_path, points_path, grid_spec, times_spec, out_path, grid_prefix,
                         horizon, horizon_opt->count() > 0);
    if (app.got_subcommand(simulate))
      return run_simulate(artifact_path, out_path, n_sim, sim_n->count() > 0, seed,
                          sim_seed->count() > 0, conditional);
    if (app.got_subcommand(residuals))
      return run_residuals(artifact_path, out_path, n_sim, res_n->count() > 0, seed,
                           res_seed->count() > 0);
    if (app.got_subcommand(graph)) return run_graph(data_path, config_path, out_path);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return 1;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  }
  return 1;
}
