#include "stnngp/model.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace stnngp {

namespace {

std::vector<double> coord_key(const Matrix& locations, Eigen::Index row) {
  std::vector<double> key(static_cast<std::size_t>(locations.cols()));
  for (Eigen::Index j = 0; j < locations.cols(); ++j)
    key[static_cast<std::size_t>(j)] = locations(row, j);
  return key;
}

void fill_default_times(SpatioTemporalDataset& data) {
  if (data.n_times == 0) {
    int max_t = 0;
    for (int t : data.times) max_t = std::max(max_t, t);
    data.n_times = data.times.empty() ? 1 : max_t + 1;
  }
  if (data.time_labels.empty()) {
    data.time_labels.resize(static_cast<std::size_t>(data.n_times));
    for (int t = 0; t < data.n_times; ++t)
      data.time_labels[static_cast<std::size_t>(t)] = t;
  }
}

}  // namespace

void validate(const SpatioTemporalDataset& data, const ModelSettings& settings) {
  const int n = data.n_rows();
  if (n < 1) throw DataError("dataset has no rows");
  if (data.coords.cols() < 1) throw DataError("dataset has no coordinate columns");
  if (static_cast<int>(data.times.size()) != n)
    throw DataError("time column length does not match the coordinates");
  if (static_cast<int>(data.response.size()) != n)
    throw DataError("response length does not match the coordinates");
  if (!data.coords.allFinite()) throw DataError("non-finite coordinate");
  if (!data.response.allFinite()) throw DataError("non-finite response");

  if (data.n_times < 1) throw DataError("dataset needs at least one time");
  if (static_cast<int>(data.time_labels.size()) != data.n_times)
    throw DataError("time labels do not match the number of times");
  for (int i = 0; i < n; ++i) {
    const int t = data.times[static_cast<std::size_t>(i)];
    if (t < 0 || t >= data.n_times)
      throw DataError("row " + std::to_string(i + 1) + ": time index " + std::to_string(t) +
                      " is outside 0.." + std::to_string(data.n_times - 1));
  }

  const int p = data.n_covariates();
  if (p > 0) {
    if (data.covariates.rows() != n)
      throw DataError("covariate rows do not match the coordinates");
    if (!data.covariates.allFinite()) throw DataError("non-finite covariate");
  }
  if (static_cast<int>(data.covariate_names.size()) != p)
    throw DataError("covariate names do not match the covariate columns");
  std::set<std::string> seen;
  for (int j = 0; j < p; ++j) {
    const std::string& name = data.covariate_names[static_cast<std::size_t>(j)];
    if (name.empty()) throw DataError("covariate " + std::to_string(j + 1) + " has no name");
    if (!seen.insert(name).second) throw DataError("duplicate covariate '" + name + "'");
    const double lo = data.covariates.col(j).minCoeff();
    const double hi = data.covariates.col(j).maxCoeff();
    if (lo == hi)
      throw DataError("covariate '" + name +
                      "' is constant; its effect would alias the process mean");
  }

  if (!family_link_compatible(settings.family, settings.link))
    throw DataError("family " + to_string(settings.family) + " does not support the " +
                    to_string(settings.link) + " link");
  if (settings.n_parents < 1) throw DataError("n_parents must be at least 1");
  if (!(settings.smoothness > 0.0)) throw DataError("smoothness must be positive");

  for (int i = 0; i < n; ++i) {
    try {
      check_support(data.response(i), settings.family);
    } catch (const DataError& err) {
      throw DataError("row " + std::to_string(i + 1) + ": " + err.what());
    }
  }
}

ModelFrame build_frame(SpatioTemporalDataset data, const ModelSettings& settings) {
  fill_default_times(data);
  validate(data, settings);
  const DedupeResult unique = dedupe_locations(data.coords);
  return build_frame(std::move(data), settings, unique.unique_locations);
}

ModelFrame build_frame(SpatioTemporalDataset data, const ModelSettings& settings,
                       const Matrix& reference_locations) {
  fill_default_times(data);
  validate(data, settings);
  if (reference_locations.rows() < 1) throw DataError("empty reference set");
  if (reference_locations.cols() != data.coords.cols())
    throw DataError("reference locations and data differ in dimension");

  ModelFrame frame;
  frame.settings = settings;
  frame.refs = order_locations(dedupe_locations(reference_locations).unique_locations);
  frame.dag = build_persistent_graph(frame.refs, settings.n_parents, settings.metric);
  frame.geometry =
      calibrate(frame.dag, frame.refs, 1.0, frame.covariance_spec(), settings.metric);

  std::map<std::vector<double>, int> ref_index;
  for (Eigen::Index i = 0; i < frame.refs.locations.rows(); ++i)
    ref_index.emplace(coord_key(frame.refs.locations, i), static_cast<int>(i));

  // Unique data locations keep first-appearance order; the ones off the
  // reference set become transient ids 0, 1, ... in that order.
  const DedupeResult unique = dedupe_locations(data.coords);
  const int n_unique = static_cast<int>(unique.unique_locations.rows());
  std::vector<int> unique_ref(static_cast<std::size_t>(n_unique), -1);
  std::vector<int> unique_transient(static_cast<std::size_t>(n_unique), -1);
  std::vector<Eigen::Index> transient_rows;
  for (int k = 0; k < n_unique; ++k) {
    const auto it = ref_index.find(coord_key(unique.unique_locations, k));
    if (it != ref_index.end()) {
      unique_ref[static_cast<std::size_t>(k)] = it->second;
    } else {
      unique_transient[static_cast<std::size_t>(k)] = static_cast<int>(transient_rows.size());
      transient_rows.push_back(k);
    }
  }
  frame.transient_locations.resize(static_cast<Eigen::Index>(transient_rows.size()),
                                   data.coords.cols());
  for (std::size_t j = 0; j < transient_rows.size(); ++j)
    frame.transient_locations.row(static_cast<Eigen::Index>(j)) =
        unique.unique_locations.row(transient_rows[j]);

  frame.systems = build_spatial_systems(frame.refs, frame.dag, frame.transient_locations,
                                        frame.covariance_spec(), frame.geometry,
                                        settings.metric);

  std::vector<std::set<int>> active(static_cast<std::size_t>(data.n_times));
  for (int i = 0; i < data.n_rows(); ++i) {
    const int k = unique.row_to_node[static_cast<std::size_t>(i)];
    const int tr = unique_transient[static_cast<std::size_t>(k)];
    if (tr >= 0) active[static_cast<std::size_t>(data.times[static_cast<std::size_t>(i)])].insert(tr);
  }
  std::vector<std::vector<int>> active_lists(active.size());
  for (std::size_t t = 0; t < active.size(); ++t)
    active_lists[t].assign(active[t].begin(), active[t].end());
  frame.layout = make_layout(static_cast<int>(frame.refs.locations.rows()),
                             std::move(active_lists));

  frame.row_effect.resize(static_cast<std::size_t>(data.n_rows()));
  for (int i = 0; i < data.n_rows(); ++i) {
    const int t = data.times[static_cast<std::size_t>(i)];
    const int k = unique.row_to_node[static_cast<std::size_t>(i)];
    const int ref = unique_ref[static_cast<std::size_t>(k)];
    if (ref >= 0) {
      frame.row_effect[static_cast<std::size_t>(i)] = frame.layout.w_index(t, ref);
    } else {
      const int slot = frame.layout.slot_of(t, unique_transient[static_cast<std::size_t>(k)]);
      frame.row_effect[static_cast<std::size_t>(i)] = frame.layout.v_index(t, slot);
    }
  }

  frame.data = std::move(data);
  return frame;
}

}  // namespace stnngp
