#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "stnngp/io.hpp"
#include "stnngp/simulate.hpp"
#include "testutil.hpp"

using namespace stnngp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("stnngp_cli_" + std::to_string(++counter) + "_" +
                                   std::to_string(static_cast<unsigned>(::getpid())));
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out << text;
}

struct Cmd {
  int code = -1;
  std::string out;
  std::string err;
};

Cmd run_cli(const fs::path& dir, const std::string& args) {
  const fs::path out_file = dir / "_stdout.txt";
  const fs::path err_file = dir / "_stderr.txt";
  const std::string cmd = std::string(CLI_PATH) + " " + args + " >" + out_file.string() + " 2>" +
                          err_file.string();
  const int rc = std::system(cmd.c_str());
  Cmd result;
  if (WIFEXITED(rc)) result.code = WEXITSTATUS(rc);
  result.out = slurp(out_file);
  result.err = slurp(err_file);
  return result;
}

double stdout_value(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " ", 0) == 0) return std::stod(line.substr(key.size() + 1));
  FAIL("missing stdout line: " << key);
  return 0.0;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

SpatioTemporalDataset blank_panel(int n_stations, int n_years, long long first_label,
                                  unsigned seed) {
  SpatioTemporalDataset data;
  const Matrix stations = testutil::random_points(n_stations, 2, seed);
  const int n = n_stations * n_years;
  data.coords.resize(n, 2);
  data.times.resize(static_cast<std::size_t>(n));
  data.response = Vector::Zero(n);
  data.covariates.resize(n, 0);
  data.n_times = n_years;
  for (int t = 0; t < n_years; ++t) {
    data.time_labels.push_back(first_label + t);
    for (int s = 0; s < n_stations; ++s) {
      data.coords.row(t * n_stations + s) = stations.row(s);
      data.times[static_cast<std::size_t>(t * n_stations + s)] = t;
    }
  }
  return data;
}

ParameterSet gaussian_truth() {
  ParameterSet ps;
  ps.add({"sd_spatial", 0.8, Transform::positive});
  ps.add({"mu", 0.4, Transform::identity});
  ps.add({"ar1", 0.5, Transform::correlation});
  ps.add({"sd_time", 0.4, Transform::positive});
  ps.add({"sd_obs", 0.5, Transform::positive});
  return ps;
}

/// Simulated gaussian panel written as a CSV, plus a config whose starting
/// values sit at the truth so the test fit converges quickly.
fs::path write_gaussian_case(const fs::path& dir) {
  SpatioTemporalDataset data = blank_panel(8, 3, 1997, 90u);
  const ModelFrame frame = build_frame(data, {});
  const SimulatedData sim = simulate_dataset(frame, gaussian_truth(), Vector(), false, 901u);
  data.response = sim.response;
  ColumnConfig columns;
  write_dataset_csv((dir / "data.csv").string(), data, columns);
  spit(dir / "run.cfg",
       "model.family = gaussian\n"
       "model.link = identity\n"
       "start.sd_spatial = 0.8\n"
       "start.mu = 0.4\n"
       "start.ar1 = 0.5\n"
       "start.sd_time = 0.4\n"
       "start.sd_obs = 0.5\n"
       "sim.seed = 11\n");
  return dir / "data.csv";
}

}  // namespace

TEST_CASE("the command line runs the whole workflow") {
  const fs::path dir = scratch_dir();
  write_gaussian_case(dir);
  const std::string base = " --data " + (dir / "data.csv").string() + " --config " +
                           (dir / "run.cfg").string();

  const Cmd fit = run_cli(dir, "fit" + base + " --artifact " + (dir / "fit.json").string() +
                                   " --table " + (dir / "params.csv").string() + " --effects " +
                                   (dir / "effects.csv").string());
  CHECK(fit.code == 0);
  CHECK(fit.out.find("name") != std::string::npos);
  CHECK(fit.out.find("sd_spatial") != std::string::npos);
  CHECK(fit.out.find("convergence relative convergence") != std::string::npos);
  REQUIRE(fs::exists(dir / "fit.json"));
  CHECK(slurp(dir / "params.csv").rfind("name,par,se,fixed\n", 0) == 0);
  CHECK(slurp(dir / "effects.csv").rfind("kind,time,x,y,mode,se\n", 0) == 0);

  // Byte-identical rerun.
  const Cmd fit2 = run_cli(dir, "fit" + base + " --artifact " + (dir / "fit2.json").string() +
                                    " --table " + (dir / "params2.csv").string());
  CHECK(fit2.code == 0);
  CHECK(slurp(dir / "fit.json") == slurp(dir / "fit2.json"));
  CHECK(slurp(dir / "params.csv") == slurp(dir / "params2.csv"));

  spit(dir / "points.csv",
       "x,y,time\n"
       "0.25,0.3,1997\n"
       "0.6,0.7,1999\n"
       "0.5,0.5,1999\n");
  const std::string predict_base = "predict --artifact " + (dir / "fit.json").string() +
                                   " --points " + (dir / "points.csv").string();
  const Cmd pred = run_cli(dir, predict_base + " --out " + (dir / "pred.csv").string());
  CHECK(pred.code == 0);
  {
    std::istringstream in(slurp(dir / "pred.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,t,w,w_se,linear,linear_se,response,response_se");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      const auto cells = split_fields(line);
      REQUIRE(cells.size() == 9);
      // Identity link: the response columns repeat the linear columns.
      CHECK(cells[7] == cells[5]);
      CHECK(cells[8] == cells[6]);
    }
    CHECK(rows == 3);
  }
  const Cmd pred2 = run_cli(dir, predict_base + " --out " + (dir / "pred2.csv").string());
  CHECK(pred2.code == 0);
  CHECK(slurp(dir / "pred.csv") == slurp(dir / "pred2.csv"));

  // Forecasting needs an explicit horizon.
  spit(dir / "future.csv", "x,y,time\n0.5,0.5,2000\n");
  const std::string future_base = "predict --artifact " + (dir / "fit.json").string() +
                                  " --points " + (dir / "future.csv").string() + " --out " +
                                  (dir / "future_pred.csv").string();
  const Cmd no_horizon = run_cli(dir, future_base);
  CHECK(no_horizon.code == 2);
  CHECK(no_horizon.err.find("beyond the fitted range") != std::string::npos);
  const Cmd with_horizon = run_cli(dir, future_base + " --horizon 1");
  CHECK(with_horizon.code == 0);

  const Cmd grid = run_cli(dir, "predict --artifact " + (dir / "fit.json").string() +
                                    " --grid 0,0,0.5,2,2 --times 1997,1999 --grid-prefix " +
                                    (dir / "g").string());
  CHECK(grid.code == 0);
  for (const char* layer : {"w", "w_se", "linear", "linear_se", "response", "response_se"})
    for (const char* year : {"1997", "1999"}) {
      const fs::path file = dir / ("g_" + std::string(layer) + "_" + year + ".asc");
      REQUIRE(fs::exists(file));
    }
  const std::string asc = slurp(dir / "g_w_1997.asc");
  CHECK(asc.rfind("ncols 2\nnrows 2\n", 0) == 0);
  CHECK(asc.find("NODATA_value -9999\n") != std::string::npos);

  const std::string sim_base = "simulate --artifact " + (dir / "fit.json").string() +
                               " --n 5 --conditional";
  const Cmd sim = run_cli(dir, sim_base + " --seed 3 --out " + (dir / "s1.csv").string());
  CHECK(sim.code == 0);
  {
    std::istringstream in(slurp(dir / "s1.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "rep,x,y,t,value");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5 * 24);
  }
  const Cmd sim2 = run_cli(dir, sim_base + " --seed 3 --out " + (dir / "s2.csv").string());
  const Cmd sim3 = run_cli(dir, sim_base + " --seed 4 --out " + (dir / "s3.csv").string());
  CHECK(sim2.code == 0);
  CHECK(sim3.code == 0);
  CHECK(slurp(dir / "s1.csv") == slurp(dir / "s2.csv"));
  CHECK(slurp(dir / "s1.csv") != slurp(dir / "s3.csv"));

  const Cmd graph = run_cli(dir, "graph" + base + " --dot " + (dir / "graph.dot").string());
  CHECK(graph.code == 0);
  CHECK(slurp(dir / "graph.dot").rfind("digraph", 0) == 0);
  CHECK(graph.out.find("mean_edge_distance ") != std::string::npos);
  CHECK(stdout_value(graph.out, "n_references") == 8.0);

  fs::remove_all(dir);
}

TEST_CASE("residuals from self-simulated data look uniform") {
  const fs::path dir = scratch_dir();

  SpatioTemporalDataset data = blank_panel(10, 3, 1, 50u);
  ModelSettings settings;
  settings.family = Family::poisson;
  settings.link = Link::log;
  const ModelFrame frame = build_frame(data, settings);
  ParameterSet truth;
  truth.add({"sd_spatial", 0.4, Transform::positive});
  truth.add({"mu", 0.6, Transform::identity});
  truth.add({"ar1", 0.5, Transform::correlation});
  truth.add({"sd_time", 0.3, Transform::positive});
  const SimulatedData sim = simulate_dataset(frame, truth, Vector(), false, 502u);
  data.response = sim.response;
  write_dataset_csv((dir / "data.csv").string(), data, ColumnConfig{});
  spit(dir / "run.cfg",
       "model.family = poisson\n"
       "model.link = log\n"
       "fix.sd_spatial = 0.4\n"
       "fix.mu = 0.6\n"
       "fix.ar1 = 0.5\n"
       "fix.sd_time = 0.3\n");

  const Cmd fit = run_cli(dir, "fit --data " + (dir / "data.csv").string() + " --config " +
                                   (dir / "run.cfg").string() + " --artifact " +
                                   (dir / "fit.json").string());
  CHECK(fit.code == 0);

  const Cmd res = run_cli(dir, "residuals --artifact " + (dir / "fit.json").string() +
                                   " --n 100 --seed 9 --out " + (dir / "pit.csv").string());
  CHECK(res.code == 0);
  CHECK(stdout_value(res.out, "n") == 30.0);
  CHECK(stdout_value(res.out, "n_sim") == 100.0);
  CHECK(stdout_value(res.out, "ks_pvalue") > 0.01);
  const double d = stdout_value(res.out, "ks_statistic");
  CHECK(d > 0.0);
  CHECK(d < 1.0);
  {
    std::istringstream in(slurp(dir / "pit.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,t,observed,pit");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 30);
  }
  fs::remove_all(dir);
}

TEST_CASE("failures map to the documented exit codes") {
  const fs::path dir = scratch_dir();
  write_gaussian_case(dir);

  const Cmd usage = run_cli(dir, "predict --artifact nothere.json");
  CHECK(usage.code == 2);  // artifact opened before the points check
  const Cmd missing = run_cli(dir, "fit --data " + (dir / "nothere.csv").string() +
                                       " --artifact " + (dir / "f.json").string());
  CHECK(missing.code == 2);
  CHECK(missing.err.find("could not open") != std::string::npos);

  spit(dir / "bad.cfg", "model.family = gaussian\nmodle.link = identity\n");
  const Cmd bad_cfg = run_cli(dir, "fit --data " + (dir / "data.csv").string() + " --config " +
                                       (dir / "bad.cfg").string() + " --artifact " +
                                       (dir / "f.json").string());
  CHECK(bad_cfg.code == 2);
  CHECK(bad_cfg.err.find("unknown config key") != std::string::npos);

  const Cmd fit = run_cli(dir, "fit --data " + (dir / "data.csv").string() + " --config " +
                                   (dir / "run.cfg").string() + " --artifact " +
                                   (dir / "fit.json").string());
  REQUIRE(fit.code == 0);
  std::string artifact_text = slurp(dir / "fit.json");
  spit(dir / "broken.json", artifact_text.substr(0, artifact_text.size() / 2));
  const Cmd broken = run_cli(dir, "simulate --artifact " + (dir / "broken.json").string() +
                                      " --out " + (dir / "s.csv").string());
  CHECK(broken.code == 2);
  CHECK(broken.err.find("could not parse fit artifact") != std::string::npos);

  const Cmd no_mode = run_cli(dir, "predict --artifact " + (dir / "fit.json").string());
  CHECK(no_mode.code == 1);
  CHECK(no_mode.err.find("--points or --grid") != std::string::npos);

  spit(dir / "slow.cfg",
       "start.mu = 5\n"
       "fit.max_outer = 1\n");
  const Cmd stuck = run_cli(dir, "fit --data " + (dir / "data.csv").string() + " --config " +
                                     (dir / "slow.cfg").string() + " --artifact " +
                                     (dir / "f3.json").string());
  CHECK(stuck.code == 3);
  CHECK(stuck.err.find("did not converge") != std::string::npos);
  REQUIRE(fs::exists(dir / "f3.json"));

  fs::remove_all(dir);
}
