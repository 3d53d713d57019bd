#include "stnngp/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace stnngp {

using nlohmann::json;

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

std::string strip(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool parse_double_text(const std::string& text, double& out) {
  std::string t = strip(text);
  if (!t.empty() && t[0] == '+') t.erase(0, 1);
  const char* begin = t.data();
  const char* end = begin + t.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && !t.empty();
}

bool parse_int_text(const std::string& text, long long& out) {
  std::string t = strip(text);
  if (!t.empty() && t[0] == '+') t.erase(0, 1);
  const char* begin = t.data();
  const char* end = begin + t.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && !t.empty();
}

bool is_missing(const std::string& cell) {
  const std::string t = strip(cell);
  if (t.empty()) return true;
  std::string lower;
  for (char c : t) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "na" || lower == "nan";
}

/// Comma-separated fields; double quotes wrap a field, doubled quotes
/// escape one inside it.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(value);
  while (std::getline(ss, cur, ',')) {
    const std::string item = strip(cur);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

CovFamily cov_from_string(const std::string& name) {
  if (name == "exponential") return CovFamily::exponential;
  if (name == "matern") return CovFamily::matern;
  throw DataError("unknown covariance family '" + name + "' (exponential, matern)");
}

std::string to_string(CovFamily family) {
  return family == CovFamily::exponential ? "exponential" : "matern";
}

DistanceMetric metric_from_string(const std::string& name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "haversine") return DistanceMetric::haversine;
  throw DataError("unknown distance metric '" + name + "' (euclidean, haversine)");
}

std::string to_string(DistanceMetric metric) {
  return metric == DistanceMetric::euclidean ? "euclidean" : "haversine";
}

Transform transform_from_string(const std::string& name) {
  if (name == "identity") return Transform::identity;
  if (name == "positive") return Transform::positive;
  if (name == "correlation") return Transform::correlation;
  throw DataError("unknown parameter transform '" + name + "'");
}

std::string to_string(Transform transform) {
  switch (transform) {
    case Transform::identity: return "identity";
    case Transform::positive: return "positive";
    default: return "correlation";
  }
}

struct ConfigLine {
  std::string key;
  std::string value;
  int line = 0;
};

double config_double(const ConfigLine& cl) {
  double v = 0.0;
  if (!parse_double_text(cl.value, v))
    throw DataError("line " + std::to_string(cl.line) + ": '" + cl.value +
                    "' is not a number for key '" + cl.key + "'");
  return v;
}

long long config_int(const ConfigLine& cl) {
  long long v = 0;
  if (!parse_int_text(cl.value, v))
    throw DataError("line " + std::to_string(cl.line) + ": '" + cl.value +
                    "' is not an integer for key '" + cl.key + "'");
  return v;
}

void apply_config_line(RunConfig& config, const ConfigLine& cl) {
  const std::string& key = cl.key;
  if (key == "data.x") {
    config.columns.x = cl.value;
  } else if (key == "data.y") {
    config.columns.y = cl.value;
  } else if (key == "data.time") {
    config.columns.time = cl.value;
  } else if (key == "data.response") {
    config.columns.response = cl.value;
  } else if (key == "data.covariates") {
    config.columns.covariates = split_list(cl.value);
  } else if (key == "model.family") {
    config.settings.family = family_from_string(cl.value);
  } else if (key == "model.link") {
    config.settings.link = link_from_string(cl.value);
  } else if (key == "model.covariance") {
    config.settings.covariance = cov_from_string(cl.value);
  } else if (key == "model.smoothness") {
    config.settings.smoothness = config_double(cl);
  } else if (key == "model.n_parents") {
    config.settings.n_parents = static_cast<int>(config_int(cl));
  } else if (key == "model.metric") {
    config.settings.metric = metric_from_string(cl.value);
  } else if (key == "refs.source") {
    config.reference_source = cl.value;
  } else if (key == "predict.horizon") {
    config.forecast_horizon = static_cast<int>(config_int(cl));
  } else if (key == "sim.seed") {
    const long long s = config_int(cl);
    if (s < 0) throw DataError("line " + std::to_string(cl.line) + ": sim.seed must not be negative");
    config.seed = static_cast<std::uint64_t>(s);
  } else if (key == "sim.n") {
    config.n_sim = static_cast<int>(config_int(cl));
  } else if (key == "fit.max_inner") {
    config.fit.max_inner_iterations = static_cast<int>(config_int(cl));
  } else if (key == "fit.max_outer") {
    config.fit.max_outer_iterations = static_cast<int>(config_int(cl));
  } else if (key == "fit.inner_tol") {
    config.fit.inner_gradient_tol = config_double(cl);
  } else if (key == "fit.outer_tol") {
    config.fit.outer_relative_tol = config_double(cl);
  } else if (key == "fit.gradient_tol") {
    config.fit.outer_gradient_tol = config_double(cl);
  } else if (key.rfind("fix.", 0) == 0) {
    config.fixed.emplace_back(key.substr(4), config_double(cl));
  } else if (key.rfind("start.", 0) == 0) {
    config.start.emplace_back(key.substr(6), config_double(cl));
  } else {
    throw DataError("unknown config key '" + key + "' (line " + std::to_string(cl.line) + ")");
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("could not open '" + path + "'");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("could not write '" + path + "'");
  return out;
}

/// Header fields mapped to their column index; a name appearing twice maps
/// to -2 so lookups can reject it.
std::unordered_map<std::string, int> header_map(const std::vector<std::string>& fields) {
  std::unordered_map<std::string, int> map;
  for (std::size_t j = 0; j < fields.size(); ++j) {
    const std::string name = strip(fields[j]);
    const auto ins = map.emplace(name, static_cast<int>(j));
    if (!ins.second) ins.first->second = -2;
  }
  return map;
}

int find_column(const std::unordered_map<std::string, int>& header, const std::string& name,
                const std::string& path) {
  const auto it = header.find(name);
  if (it == header.end()) throw DataError("column '" + name + "' not found in '" + path + "'");
  if (it->second == -2) throw DataError("column '" + name + "' appears twice in '" + path + "'");
  return it->second;
}

double numeric_cell(const std::vector<std::string>& fields, int col, const std::string& name,
                    int line) {
  const std::string& cell = fields[static_cast<std::size_t>(col)];
  if (is_missing(cell))
    throw DataError("line " + std::to_string(line) + ", column '" + name + "': missing value");
  double v = 0.0;
  if (!parse_double_text(cell, v))
    throw DataError("line " + std::to_string(line) + ", column '" + name + "': could not parse '" +
                    strip(cell) + "' as a number");
  return v;
}

long long integer_cell(const std::vector<std::string>& fields, int col, const std::string& name,
                       int line) {
  const std::string& cell = fields[static_cast<std::size_t>(col)];
  if (is_missing(cell))
    throw DataError("line " + std::to_string(line) + ", column '" + name + "': missing value");
  long long v = 0;
  if (!parse_int_text(cell, v))
    throw DataError("line " + std::to_string(line) + ", column '" + name + "': could not parse '" +
                    strip(cell) + "' as an integer");
  return v;
}

/// Raw rows before the time axis is established.
struct RawRows {
  std::vector<double> x, y, response;
  std::vector<long long> labels;
  std::vector<std::vector<double>> covariates;  // per row
  int n_dropped = 0;
};

SpatioTemporalDataset assemble_dataset(RawRows rows, const RunConfig& config,
                                       const std::string& source,
                                       std::vector<std::string>* warnings) {
  const int n = static_cast<int>(rows.x.size());
  if (n == 0) throw DataError("no usable rows in '" + source + "'");
  if (rows.n_dropped > 0 && warnings != nullptr)
    warnings->push_back("dropped " + std::to_string(rows.n_dropped) +
                        " rows with missing response");

  long long lo = rows.labels[0], hi = rows.labels[0];
  for (long long t : rows.labels) {
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  const long long span = hi - lo + 1;
  if (span > 100000)
    throw DataError("time range spans " + std::to_string(span) +
                    " steps; check the time column");

  SpatioTemporalDataset data;
  data.coords.resize(n, 2);
  data.times.resize(static_cast<std::size_t>(n));
  data.response.resize(n);
  const int p = static_cast<int>(config.columns.covariates.size());
  data.covariates.resize(n, p);
  data.covariate_names = config.columns.covariates;
  data.n_times = static_cast<int>(span);
  for (long long t = lo; t <= hi; ++t) data.time_labels.push_back(t);
  for (int i = 0; i < n; ++i) {
    data.coords(i, 0) = rows.x[static_cast<std::size_t>(i)];
    data.coords(i, 1) = rows.y[static_cast<std::size_t>(i)];
    data.times[static_cast<std::size_t>(i)] = static_cast<int>(rows.labels[static_cast<std::size_t>(i)] - lo);
    data.response(i) = rows.response[static_cast<std::size_t>(i)];
    for (int j = 0; j < p; ++j)
      data.covariates(i, j) = rows.covariates[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return data;
}

json num_to_json(double value) {
  if (std::isfinite(value)) return value;
  if (std::isnan(value)) return "nan";
  return value > 0 ? "inf" : "-inf";
}

double num_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw DataError("fit artifact holds a malformed number");
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(num_to_json(v(i)));
  return arr;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& item : j) v(i++) = num_from_json(item);
  return v;
}

json matrix_to_json(const Matrix& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  json flat = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(num_to_json(m(i, j)));
  out["data"] = flat;
  return out;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& flat = j.at("data");
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw DataError("fit artifact holds a malformed matrix");
  Matrix m(rows, cols);
  Eigen::Index k = 0;
  for (const auto& item : flat) {
    m(k / cols, k % cols) = num_from_json(item);
    ++k;
  }
  return m;
}

json pairs_to_json(const std::vector<std::pair<std::string, double>>& pairs) {
  json arr = json::array();
  for (const auto& [name, value] : pairs) arr.push_back(json::array({name, num_to_json(value)}));
  return arr;
}

std::vector<std::pair<std::string, double>> pairs_from_json(const json& j) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& item : j)
    out.emplace_back(item.at(0).get<std::string>(), num_from_json(item.at(1)));
  return out;
}

json config_to_json(const RunConfig& config) {
  json j;
  j["data"] = {{"x", config.columns.x},
               {"y", config.columns.y},
               {"time", config.columns.time},
               {"response", config.columns.response},
               {"covariates", config.columns.covariates}};
  j["model"] = {{"family", stnngp::to_string(config.settings.family)},
                {"link", stnngp::to_string(config.settings.link)},
                {"covariance", to_string(config.settings.covariance)},
                {"smoothness", config.settings.smoothness},
                {"n_parents", config.settings.n_parents},
                {"metric", to_string(config.settings.metric)}};
  j["refs"] = {{"source", config.reference_source}};
  j["predict"] = {{"horizon", config.forecast_horizon}};
  j["sim"] = {{"seed", config.seed}, {"n", config.n_sim}};
  j["fit"] = {{"max_inner", config.fit.max_inner_iterations},
              {"max_outer", config.fit.max_outer_iterations},
              {"inner_tol", config.fit.inner_gradient_tol},
              {"outer_tol", config.fit.outer_relative_tol},
              {"gradient_tol", config.fit.outer_gradient_tol},
              {"standard_errors", config.fit.standard_errors}};
  j["fix"] = pairs_to_json(config.fixed);
  j["start"] = pairs_to_json(config.start);
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig config;
  const json& d = j.at("data");
  config.columns.x = d.at("x").get<std::string>();
  config.columns.y = d.at("y").get<std::string>();
  config.columns.time = d.at("time").get<std::string>();
  config.columns.response = d.at("response").get<std::string>();
  config.columns.covariates = d.at("covariates").get<std::vector<std::string>>();
  const json& m = j.at("model");
  config.settings.family = family_from_string(m.at("family").get<std::string>());
  config.settings.link = link_from_string(m.at("link").get<std::string>());
  config.settings.covariance = cov_from_string(m.at("covariance").get<std::string>());
  config.settings.smoothness = m.at("smoothness").get<double>();
  config.settings.n_parents = m.at("n_parents").get<int>();
  config.settings.metric = metric_from_string(m.at("metric").get<std::string>());
  config.reference_source = j.at("refs").at("source").get<std::string>();
  config.forecast_horizon = j.at("predict").at("horizon").get<int>();
  config.seed = j.at("sim").at("seed").get<std::uint64_t>();
  config.n_sim = j.at("sim").at("n").get<int>();
  const json& f = j.at("fit");
  config.fit.max_inner_iterations = f.at("max_inner").get<int>();
  config.fit.max_outer_iterations = f.at("max_outer").get<int>();
  config.fit.inner_gradient_tol = f.at("inner_tol").get<double>();
  config.fit.outer_relative_tol = f.at("outer_tol").get<double>();
  config.fit.outer_gradient_tol = f.at("gradient_tol").get<double>();
  config.fit.standard_errors = f.at("standard_errors").get<bool>();
  config.fixed = pairs_from_json(j.at("fix"));
  config.start = pairs_from_json(j.at("start"));
  return config;
}

json dataset_to_json(const SpatioTemporalDataset& data) {
  json j;
  j["coords"] = matrix_to_json(data.coords);
  j["times"] = data.times;
  j["response"] = vector_to_json(data.response);
  j["covariates"] = matrix_to_json(data.covariates);
  j["covariate_names"] = data.covariate_names;
  j["n_times"] = data.n_times;
  j["time_labels"] = data.time_labels;
  return j;
}

SpatioTemporalDataset dataset_from_json(const json& j) {
  SpatioTemporalDataset data;
  data.coords = matrix_from_json(j.at("coords"));
  data.times = j.at("times").get<std::vector<int>>();
  data.response = vector_from_json(j.at("response"));
  data.covariates = matrix_from_json(j.at("covariates"));
  data.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
  data.n_times = j.at("n_times").get<int>();
  data.time_labels = j.at("time_labels").get<std::vector<long long>>();
  return data;
}

json fit_to_json(const FitResult& fit) {
  json j;
  json params = json::array();
  for (const auto& p : fit.params.items)
    params.push_back({{"name", p.name},
                      {"value", num_to_json(p.value)},
                      {"transform", to_string(p.transform)},
                      {"fixed", p.fixed},
                      {"se", num_to_json(p.se)}});
  j["parameters"] = params;
  j["beta_cov"] = matrix_to_json(fit.beta_cov);
  j["mode"] = vector_to_json(fit.mode);
  j["mode_se"] = vector_to_json(fit.mode_se);
  j["nll"] = num_to_json(fit.nll);
  j["converged"] = fit.converged;
  j["convergence"] = fit.convergence;
  j["outer_iterations"] = fit.outer_iterations;
  j["inner_iterations"] = fit.inner_iterations;
  json trace = json::array();
  for (double v : fit.nll_trace) trace.push_back(num_to_json(v));
  j["nll_trace"] = trace;
  j["warnings"] = fit.warnings;
  return j;
}

FitResult fit_from_json(const json& j) {
  FitResult fit;
  for (const auto& item : j.at("parameters")) {
    Parameter p;
    p.name = item.at("name").get<std::string>();
    p.value = num_from_json(item.at("value"));
    p.transform = transform_from_string(item.at("transform").get<std::string>());
    p.fixed = item.at("fixed").get<bool>();
    p.se = num_from_json(item.at("se"));
    fit.params.add(p);
  }
  fit.beta_cov = matrix_from_json(j.at("beta_cov"));
  fit.mode = vector_from_json(j.at("mode"));
  fit.mode_se = vector_from_json(j.at("mode_se"));
  fit.nll = num_from_json(j.at("nll"));
  fit.converged = j.at("converged").get<bool>();
  fit.convergence = j.at("convergence").get<std::string>();
  fit.outer_iterations = j.at("outer_iterations").get<int>();
  fit.inner_iterations = j.at("inner_iterations").get<long>();
  for (const auto& item : j.at("nll_trace")) fit.nll_trace.push_back(num_from_json(item));
  fit.warnings = j.at("warnings").get<std::vector<std::string>>();
  return fit;
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& source_name) {
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string text = strip(line);
    if (text.empty() || text[0] == '#') continue;
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw DataError(source_name + " line " + std::to_string(line_no) +
                      ": expected 'key = value'");
    ConfigLine cl{strip(text.substr(0, eq)), strip(text.substr(eq + 1)), line_no};
    if (cl.key.empty())
      throw DataError(source_name + " line " + std::to_string(line_no) + ": empty key");
    apply_config_line(config, cl);
  }
  return config;
}

RunConfig read_config(const std::string& path) {
  std::ifstream in = open_input(path);
  return parse_config(in, path);
}

ParameterSet configured_parameters(const ModelFrame& frame, const RunConfig& config) {
  ParameterSet params = default_parameters(frame);
  const auto apply = [&](const std::pair<std::string, double>& entry, bool fix) {
    const auto& [name, value] = entry;
    if (name == "nu")
      throw DataError("the smoothness is set by model.smoothness, not as a parameter override");
    if (!params.has(name)) throw DataError("unknown parameter '" + name + "' in config override");
    params.at(name).value = value;
    if (fix) params.at(name).fixed = true;
  };
  for (const auto& entry : config.start) apply(entry, false);
  for (const auto& entry : config.fixed) apply(entry, true);
  return params;
}

SpatioTemporalDataset ingest_csv(const std::string& path, const RunConfig& config,
                                 std::vector<std::string>* warnings) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> head = split_csv(line);
  const auto header = header_map(head);
  const ColumnConfig& cols = config.columns;
  const int cx = find_column(header, cols.x, path);
  const int cy = find_column(header, cols.y, path);
  const int ct = find_column(header, cols.time, path);
  const int cr = find_column(header, cols.response, path);
  std::vector<int> cc;
  for (const auto& name : cols.covariates) cc.push_back(find_column(header, name, path));

  RawRows rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (strip(line).empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != head.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(head.size()) + " fields, got " +
                      std::to_string(fields.size()));
    if (is_missing(fields[static_cast<std::size_t>(cr)])) {
      ++rows.n_dropped;
      continue;
    }
    rows.x.push_back(numeric_cell(fields, cx, cols.x, line_no));
    rows.y.push_back(numeric_cell(fields, cy, cols.y, line_no));
    rows.labels.push_back(integer_cell(fields, ct, cols.time, line_no));
    rows.response.push_back(numeric_cell(fields, cr, cols.response, line_no));
    std::vector<double> cov;
    for (std::size_t j = 0; j < cc.size(); ++j)
      cov.push_back(numeric_cell(fields, cc[j], cols.covariates[j], line_no));
    rows.covariates.push_back(std::move(cov));
  }
  return assemble_dataset(std::move(rows), config, path, warnings);
}

SpatioTemporalDataset ingest_geojson(const std::string& path, const RunConfig& config,
                                     std::vector<std::string>* warnings) {
  std::ifstream in = open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& err) {
    throw DataError("could not parse '" + path + "': " + err.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
    throw DataError("'" + path + "' is not a GeoJSON FeatureCollection");
  if (!doc.contains("features") || !doc["features"].is_array())
    throw DataError("'" + path + "' has no feature array");

  const ColumnConfig& cols = config.columns;
  RawRows rows;
  int index = 0;
  for (const auto& feature : doc["features"]) {
    ++index;
    const std::string label = "feature " + std::to_string(index);
    if (!feature.is_object() || !feature.contains("geometry") || feature["geometry"].is_null())
      throw DataError(label + ": no geometry");
    const json& geom = feature["geometry"];
    const std::string type = geom.value("type", "");
    if (type != "Point")
      throw DataError(label + ": geometry type '" + type + "' is not a point");
    const json& coords = geom.at("coordinates");
    if (!coords.is_array() || coords.size() < 2 || !coords[0].is_number() ||
        !coords[1].is_number())
      throw DataError(label + ": malformed point coordinates");
    if (!feature.contains("properties") || !feature["properties"].is_object())
      throw DataError(label + ": no properties");
    const json& props = feature["properties"];

    if (!props.contains(cols.time))
      throw DataError(label + ": missing property '" + cols.time + "'");
    const json& time = props[cols.time];
    if (!time.is_number_integer())
      throw DataError(label + ": property '" + cols.time + "' is not an integer time");

    const bool response_missing =
        !props.contains(cols.response) || props[cols.response].is_null() ||
        (props[cols.response].is_string() &&
         is_missing(props[cols.response].get<std::string>()));
    if (response_missing) {
      ++rows.n_dropped;
      continue;
    }
    if (!props[cols.response].is_number())
      throw DataError(label + ": property '" + cols.response + "' is not a number");

    rows.x.push_back(coords[0].get<double>());
    rows.y.push_back(coords[1].get<double>());
    rows.labels.push_back(time.get<long long>());
    rows.response.push_back(props[cols.response].get<double>());
    std::vector<double> cov;
    for (const auto& name : cols.covariates) {
      if (!props.contains(name) || !props[name].is_number())
        throw DataError(label + ": missing property '" + name + "'");
      cov.push_back(props[name].get<double>());
    }
    rows.covariates.push_back(std::move(cov));
  }
  return assemble_dataset(std::move(rows), config, path, warnings);
}

void write_dataset_csv(const std::string& path, const SpatioTemporalDataset& data,
                       const ColumnConfig& columns) {
  std::ofstream out = open_output(path);
  out << columns.x << ',' << columns.y << ',' << columns.time << ',' << columns.response;
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << '\n';
  for (int i = 0; i < data.n_rows(); ++i) {
    const long long label = data.time_labels[static_cast<std::size_t>(data.times[static_cast<std::size_t>(i)])];
    out << format_double(data.coords(i, 0)) << ',' << format_double(data.coords(i, 1)) << ','
        << label << ',' << format_double(data.response(i));
    for (int j = 0; j < data.n_covariates(); ++j) out << ',' << format_double(data.covariates(i, j));
    out << '\n';
  }
}

void write_geojson(const std::string& path, const SpatioTemporalDataset& data,
                   const ColumnConfig& columns) {
  json features = json::array();
  for (int i = 0; i < data.n_rows(); ++i) {
    json props;
    props[columns.time] =
        data.time_labels[static_cast<std::size_t>(data.times[static_cast<std::size_t>(i)])];
    props[columns.response] = data.response(i);
    for (int j = 0; j < data.n_covariates(); ++j)
      props[data.covariate_names[static_cast<std::size_t>(j)]] = data.covariates(i, j);
    features.push_back({{"type", "Feature"},
                        {"geometry",
                         {{"type", "Point"},
                          {"coordinates", json::array({data.coords(i, 0), data.coords(i, 1)})}}},
                        {"properties", props}});
  }
  const json doc = {{"type", "FeatureCollection"}, {"features", features}};
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
}

Matrix read_reference_csv(const std::string& path, const RunConfig& config) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> head = split_csv(line);
  const auto header = header_map(head);
  const int cx = find_column(header, config.columns.x, path);
  const int cy = find_column(header, config.columns.y, path);

  std::vector<double> x, y;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (strip(line).empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != head.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(head.size()) + " fields, got " +
                      std::to_string(fields.size()));
    x.push_back(numeric_cell(fields, cx, config.columns.x, line_no));
    y.push_back(numeric_cell(fields, cy, config.columns.y, line_no));
  }
  if (x.empty()) throw DataError("no reference points in '" + path + "'");
  Matrix refs(static_cast<Eigen::Index>(x.size()), 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    refs(static_cast<Eigen::Index>(i), 0) = x[i];
    refs(static_cast<Eigen::Index>(i), 1) = y[i];
  }
  return refs;
}

PredictionPoints read_prediction_points(const std::string& path, const RunConfig& config,
                                        const std::vector<std::string>& covariate_names) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> head = split_csv(line);
  const auto header = header_map(head);
  const int cx = find_column(header, config.columns.x, path);
  const int cy = find_column(header, config.columns.y, path);
  const int ct = find_column(header, config.columns.time, path);
  std::vector<int> cc;
  for (const auto& name : covariate_names) cc.push_back(find_column(header, name, path));

  std::vector<double> x, y;
  std::vector<long long> t;
  std::vector<std::vector<double>> cov;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (strip(line).empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != head.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(head.size()) + " fields, got " +
                      std::to_string(fields.size()));
    x.push_back(numeric_cell(fields, cx, config.columns.x, line_no));
    y.push_back(numeric_cell(fields, cy, config.columns.y, line_no));
    t.push_back(integer_cell(fields, ct, config.columns.time, line_no));
    std::vector<double> row;
    for (std::size_t j = 0; j < cc.size(); ++j)
      row.push_back(numeric_cell(fields, cc[j], covariate_names[j], line_no));
    cov.push_back(std::move(row));
  }
  if (x.empty()) throw DataError("no prediction points in '" + path + "'");

  PredictionPoints pts;
  pts.locations.resize(static_cast<Eigen::Index>(x.size()), 2);
  pts.covariates.resize(static_cast<Eigen::Index>(x.size()),
                        static_cast<Eigen::Index>(covariate_names.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    pts.locations(static_cast<Eigen::Index>(i), 0) = x[i];
    pts.locations(static_cast<Eigen::Index>(i), 1) = y[i];
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      pts.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov[i][j];
  }
  pts.times = std::move(t);
  return pts;
}

void write_fit_artifact(const std::string& path, const FitArtifact& artifact) {
  json j;
  j["format"] = "stnngp-fit";
  j["version"] = 1;
  j["config"] = config_to_json(artifact.config);
  j["data"] = dataset_to_json(artifact.data);
  j["references"] = matrix_to_json(artifact.reference_locations);
  j["dag"] = artifact.dag_parents;
  j["fit"] = fit_to_json(artifact.fit);
  std::ofstream out = open_output(path);
  out << j.dump() << '\n';
}

FitArtifact read_fit_artifact(const std::string& path) {
  std::ifstream in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& err) {
    throw DataError("could not parse fit artifact '" + path + "': " + err.what());
  }
  if (!j.is_object() || j.value("format", "") != "stnngp-fit")
    throw DataError("'" + path + "' is not a fit artifact");
  const int version = j.value("version", 0);
  if (version != 1)
    throw DataError("fit artifact version " + std::to_string(version) +
                    " is not supported; this build reads version 1");
  try {
    FitArtifact artifact;
    artifact.config = config_from_json(j.at("config"));
    artifact.data = dataset_from_json(j.at("data"));
    artifact.reference_locations = matrix_from_json(j.at("references"));
    artifact.dag_parents = j.at("dag").get<std::vector<std::vector<int>>>();
    artifact.fit = fit_from_json(j.at("fit"));
    return artifact;
  } catch (const json::exception& err) {
    throw DataError("fit artifact '" + path + "' is malformed: " + err.what());
  }
}

ModelFrame rebuild_frame(const FitArtifact& artifact) {
  ModelFrame frame =
      build_frame(artifact.data, artifact.config.settings, artifact.reference_locations);
  if (frame.dag.persistent_parents != artifact.dag_parents)
    throw DataError("the stored neighbour graph does not match this build; refit the model");
  return frame;
}

void write_parameter_table(const std::string& path, const ParameterSet& params) {
  std::ofstream out = open_output(path);
  out << "name,par,se,fixed\n";
  for (const auto& p : params.items)
    out << p.name << ',' << format_double(p.value) << ',' << format_double(p.se) << ','
        << (p.fixed ? "true" : "false") << '\n';
}

void write_effect_table(const std::string& path, const ModelFrame& frame, const Vector& mode,
                        const Vector& mode_se) {
  if (mode.size() != frame.n_effects())
    throw DataError("effect vector does not match the model frame");
  const bool have_se = mode_se.size() == mode.size();
  std::ofstream out = open_output(path);
  out << "kind,time,x,y,mode,se\n";
  const EffectLayout& layout = frame.layout;
  for (int t = 0; t < layout.n_times(); ++t) {
    const long long label = frame.data.time_labels[static_cast<std::size_t>(t)];
    const auto row = [&](const char* kind, const std::string& x, const std::string& y, int k) {
      out << kind << ',' << label << ',' << x << ',' << y << ',' << format_double(mode(k)) << ','
          << (have_se ? format_double(mode_se(k)) : std::string()) << '\n';
    };
    for (int i = 0; i < layout.n_ref; ++i)
      row("w", format_double(frame.refs.locations(i, 0)), format_double(frame.refs.locations(i, 1)),
          layout.w_index(t, i));
    const auto& active = layout.active[static_cast<std::size_t>(t)];
    for (std::size_t slot = 0; slot < active.size(); ++slot) {
      const int tr = active[slot];
      row("v", format_double(frame.transient_locations(tr, 0)),
          format_double(frame.transient_locations(tr, 1)),
          layout.v_index(t, static_cast<int>(slot)));
    }
    row("eps", "", "", layout.eps_index(t));
  }
}

void write_prediction_csv(const std::string& path, const Matrix& locations,
                          const std::vector<long long>& times,
                          const std::vector<PredictionRecord>& records) {
  if (static_cast<std::size_t>(locations.rows()) != records.size() ||
      times.size() != records.size())
    throw DataError("prediction outputs do not line up");
  std::ofstream out = open_output(path);
  out << "x,y,t,w,w_se,linear,linear_se,response,response_se\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << format_double(locations(static_cast<Eigen::Index>(i), 0)) << ','
        << format_double(locations(static_cast<Eigen::Index>(i), 1)) << ',' << times[i] << ','
        << format_double(r.w) << ',' << format_double(r.w_se) << ',' << format_double(r.linear)
        << ',' << format_double(r.linear_se) << ',' << format_double(r.response) << ','
        << format_double(r.response_se) << '\n';
  }
}

void write_simulation_csv(const std::string& path, const SpatioTemporalDataset& data,
                          const Matrix& replicates) {
  if (replicates.cols() != data.n_rows())
    throw DataError("simulation columns do not match the data rows");
  std::ofstream out = open_output(path);
  out << "rep,x,y,t,value\n";
  for (Eigen::Index r = 0; r < replicates.rows(); ++r)
    for (int i = 0; i < data.n_rows(); ++i) {
      const long long label =
          data.time_labels[static_cast<std::size_t>(data.times[static_cast<std::size_t>(i)])];
      out << (r + 1) << ',' << format_double(data.coords(i, 0)) << ','
          << format_double(data.coords(i, 1)) << ',' << label << ','
          << format_double(replicates(r, i)) << '\n';
    }
}

void write_pit_csv(const std::string& path, const SpatioTemporalDataset& data, const Vector& pit) {
  if (pit.size() != data.n_rows()) throw DataError("residuals do not match the data rows");
  std::ofstream out = open_output(path);
  out << "x,y,t,observed,pit\n";
  for (int i = 0; i < data.n_rows(); ++i) {
    const long long label =
        data.time_labels[static_cast<std::size_t>(data.times[static_cast<std::size_t>(i)])];
    out << format_double(data.coords(i, 0)) << ',' << format_double(data.coords(i, 1)) << ','
        << label << ',' << format_double(data.response(i)) << ',' << format_double(pit(i))
        << '\n';
  }
}

void write_esri_grid(const std::string& path, const PredictionGrid& grid,
                     const Vector& cell_values) {
  if (grid.dx != grid.dy)
    throw DataError("ESRI ASCII grids need square cells; got dx " + format_double(grid.dx) +
                    " and dy " + format_double(grid.dy));
  if (cell_values.size() != static_cast<Eigen::Index>(grid.n_rows) * grid.n_cols)
    throw DataError("grid values do not match the grid shape");
  std::ofstream out = open_output(path);
  out << "ncols " << grid.n_cols << '\n';
  out << "nrows " << grid.n_rows << '\n';
  out << "xllcorner " << format_double(grid.x0) << '\n';
  out << "yllcorner " << format_double(grid.y0) << '\n';
  out << "cellsize " << format_double(grid.dx) << '\n';
  out << "NODATA_value -9999\n";
  for (int r = grid.n_rows - 1; r >= 0; --r) {
    for (int c = 0; c < grid.n_cols; ++c) {
      if (c > 0) out << ' ';
      const double v = cell_values(static_cast<Eigen::Index>(r) * grid.n_cols + c);
      if (v == -9999.0)
        out << "-9999";
      else
        out << format_double(v);
    }
    out << '\n';
  }
}

}  // namespace stnngp
