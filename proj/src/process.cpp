#include "stnngp/process.hpp"

#include <algorithm>

namespace stnngp {

SpatialSystems build_spatial_systems(const ReferenceSet& refs, const NeighbourDag& dag,
                                     const Matrix& transient_locations,
                                     const CovarianceSpec& spec, const Calibration& cal,
                                     DistanceMetric metric) {
  SpatialSystems out;
  const int n = static_cast<int>(refs.locations.rows());
  out.nodes.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    NodeSystem& node = out.nodes[static_cast<std::size_t>(i)];
    node.parents = dag.persistent_parents[static_cast<std::size_t>(i)];
    if (node.parents.empty()) continue;
    Matrix ploc(node.parents.size(), refs.locations.cols());
    for (std::size_t j = 0; j < node.parents.size(); ++j)
      ploc.row(static_cast<Eigen::Index>(j)) = refs.locations.row(node.parents[j]);
    const KrigingSystem sys =
        kriging_system(refs.locations.row(i).transpose(), ploc, spec, cal, metric);
    node.weights = sys.weights;
    node.deficit = sys.deficit;
    node.weight_sum = sys.weights.sum();
  }

  if (transient_locations.rows() > 0) {
    const auto parent_lists =
        build_transient_parents(transient_locations, refs, dag.n_parents, metric);
    out.transients.resize(static_cast<std::size_t>(transient_locations.rows()));
    for (Eigen::Index i = 0; i < transient_locations.rows(); ++i) {
      TransientSystem& tr = out.transients[static_cast<std::size_t>(i)];
      tr.location = transient_locations.row(i).transpose();
      tr.parents = parent_lists[static_cast<std::size_t>(i)];
      Matrix ploc(tr.parents.size(), refs.locations.cols());
      for (std::size_t j = 0; j < tr.parents.size(); ++j)
        ploc.row(static_cast<Eigen::Index>(j)) = refs.locations.row(tr.parents[j]);
      const KrigingSystem sys = kriging_system(tr.location, ploc, spec, cal, metric);
      tr.weights = sys.weights;
      tr.deficit = sys.deficit;
      tr.weight_sum = sys.weights.sum();
      if (std::abs(tr.weight_sum) >= 1e-12) tr.blup = tr.weights / tr.weight_sum;
    }
  }
  return out;
}

int EffectLayout::slot_of(int t, int transient_id) const {
  const auto& ids = active[static_cast<std::size_t>(t)];
  const auto it = std::lower_bound(ids.begin(), ids.end(), transient_id);
  if (it == ids.end() || *it != transient_id) return -1;
  return static_cast<int>(it - ids.begin());
}

EffectLayout make_layout(int n_ref, std::vector<std::vector<int>> active_transients) {
  if (n_ref < 1) throw DataError("layout needs at least one reference node");
  if (active_transients.empty()) throw DataError("layout needs at least one time");
  EffectLayout layout;
  layout.n_ref = n_ref;
  layout.active = std::move(active_transients);
  layout.offsets.resize(layout.active.size() + 1);
  layout.offsets[0] = 0;
  for (std::size_t t = 0; t < layout.active.size(); ++t) {
    const auto& ids = layout.active[t];
    if (!std::is_sorted(ids.begin(), ids.end()) ||
        std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw DataError("active transient ids must be sorted and unique");
    layout.offsets[t + 1] =
        layout.offsets[t] + n_ref + static_cast<int>(ids.size()) + 1;
  }
  return layout;
}

Vector pack_state(const EffectLayout& layout, const RandomEffectState& state) {
  const int T = layout.n_times();
  if (state.eps.size() != T || state.ref_effects.rows() != T ||
      state.ref_effects.cols() != layout.n_ref ||
      static_cast<int>(state.transient_effects.size()) != T)
    throw DataError("state does not match the effect layout");
  Vector u(layout.size());
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < layout.n_ref; ++i) u(layout.w_index(t, i)) = state.ref_effects(t, i);
    const Vector& v = state.transient_effects[static_cast<std::size_t>(t)];
    if (v.size() != static_cast<Eigen::Index>(layout.active[static_cast<std::size_t>(t)].size()))
      throw DataError("state does not match the effect layout");
    for (Eigen::Index k = 0; k < v.size(); ++k) u(layout.v_index(t, static_cast<int>(k))) = v(k);
    u(layout.eps_index(t)) = state.eps(t);
  }
  return u;
}

RandomEffectState unpack_state(const EffectLayout& layout, const Vector& u) {
  if (u.size() != layout.size()) throw DataError("effect vector does not match the layout");
  const int T = layout.n_times();
  RandomEffectState state;
  state.eps.resize(T);
  state.ref_effects.resize(T, layout.n_ref);
  state.transient_effects.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < layout.n_ref; ++i) state.ref_effects(t, i) = u(layout.w_index(t, i));
    const std::size_t m = layout.active[static_cast<std::size_t>(t)].size();
    Vector& v = state.transient_effects[static_cast<std::size_t>(t)];
    v.resize(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) v(static_cast<Eigen::Index>(k)) = u(layout.v_index(t, static_cast<int>(k)));
    state.eps(t) = u(layout.eps_index(t));
  }
  return state;
}

namespace {

void check_row_var(double var) {
  if (!(var > 0.0))
    throw NumericError(
        "zero conditional variance in the effect model; coincident locations must share one effect");
}

}  // namespace

ProcessModel build_process_model(const EffectLayout& layout, const SpatialSystems& systems,
                                 const TemporalParams& temporal, double marginal_variance) {
  validate(temporal);
  if (!(marginal_variance > 0.0)) throw DataError("marginal spatial variance must be positive");
  if (static_cast<int>(systems.nodes.size()) != layout.n_ref)
    throw DataError("spatial systems do not match the layout");

  const int n_u = layout.size();
  const int T = layout.n_times();
  const double phi = temporal.autocorr;

  ProcessModel model;
  model.offset = Vector::Zero(n_u);
  model.row_var.resize(n_u);
  model.part.resize(static_cast<std::size_t>(n_u));

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n_u) * 36u);

  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < layout.n_ref; ++i) {
      const NodeSystem& node = systems.nodes[static_cast<std::size_t>(i)];
      const int row = layout.w_index(t, i);
      trip.emplace_back(row, row, 1.0);
      for (std::size_t j = 0; j < node.parents.size(); ++j) {
        const int p = node.parents[j];
        const double c = node.weights(static_cast<Eigen::Index>(j));
        trip.emplace_back(row, layout.w_index(t, p), -c);
        if (t > 0) trip.emplace_back(row, layout.w_index(t - 1, p), phi * c);
      }
      trip.emplace_back(row, layout.eps_index(t), node.weight_sum - 1.0);
      if (t > 0) {
        trip.emplace_back(row, layout.w_index(t - 1, i), -phi);
        trip.emplace_back(row, layout.eps_index(t - 1), -phi * (node.weight_sum - 1.0));
      }
      const double var = marginal_variance * node.deficit;
      check_row_var(var);
      model.row_var(row) = var;
      model.part[static_cast<std::size_t>(row)] = RowPart::persistent;
    }

    const auto& ids = layout.active[static_cast<std::size_t>(t)];
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const TransientSystem& tr = systems.transients.at(static_cast<std::size_t>(ids[k]));
      const int row = layout.v_index(t, static_cast<int>(k));
      trip.emplace_back(row, row, 1.0);
      if (t > 0 && tr.blup.size() == 0) throw NumericError("degenerate BLUP");
      for (std::size_t j = 0; j < tr.parents.size(); ++j) {
        const int p = tr.parents[j];
        const double c = tr.weights(static_cast<Eigen::Index>(j));
        trip.emplace_back(row, layout.w_index(t, p), -c);
        if (t > 0)
          trip.emplace_back(row, layout.w_index(t - 1, p),
                            phi * (c - tr.blup(static_cast<Eigen::Index>(j))));
      }
      trip.emplace_back(row, layout.eps_index(t), tr.weight_sum - 1.0);
      if (t > 0) trip.emplace_back(row, layout.eps_index(t - 1), -phi * (tr.weight_sum - 1.0));
      const double var = marginal_variance * tr.deficit;
      check_row_var(var);
      model.row_var(row) = var;
      model.part[static_cast<std::size_t>(row)] = RowPart::transient;
    }

    const int row = layout.eps_index(t);
    trip.emplace_back(row, row, 1.0);
    if (t == 0) {
      model.offset(row) = temporal.mean;
      model.row_var(row) =
          temporal.innovation_sd * temporal.innovation_sd / (1.0 - phi * phi);
    } else {
      trip.emplace_back(row, layout.eps_index(t - 1), -phi);
      model.offset(row) = (1.0 - phi) * temporal.mean;
      model.row_var(row) = temporal.innovation_sd * temporal.innovation_sd;
    }
    model.part[static_cast<std::size_t>(row)] = RowPart::temporal;
  }

  model.rows.resize(n_u, n_u);
  model.rows.setFromTriplets(trip.begin(), trip.end());
  model.rows.makeCompressed();

  model.lognorm = 0.0;
  for (int i = 0; i < n_u; ++i)
    model.lognorm -= 0.5 * std::log(2.0 * std::numbers::pi * model.row_var(i));
  return model;
}

Eigen::SparseMatrix<double> ProcessModel::precision() const {
  Eigen::SparseMatrix<double> scaled = rows;
  for (int outer = 0; outer < scaled.outerSize(); ++outer)
    for (Eigen::SparseMatrix<double>::InnerIterator it(scaled, outer); it; ++it)
      it.valueRef() /= row_var(it.row());
  Eigen::SparseMatrix<double> q = Eigen::SparseMatrix<double>(rows.transpose()) * scaled;
  q.makeCompressed();
  return q;
}

void forward_substitute(const ProcessModel& model, const EffectLayout& layout, int from_time,
                        Vector& u, const Vector& noise) {
  if (u.size() != model.offset.size() || u.size() != layout.size())
    throw DataError("effect vector does not match the model");
  if (noise.size() != 0 && noise.size() != u.size())
    throw DataError("noise vector does not match the model");
  if (from_time < 0 || from_time > layout.n_times())
    throw DataError("substitution start time out of range");

  const Eigen::SparseMatrix<double, Eigen::RowMajor> rows(model.rows);
  auto resolve = [&](int k) {
    double value = model.offset(k) + (noise.size() ? noise(k) : 0.0);
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows, k); it; ++it)
      if (it.col() != k) value -= it.value() * u(it.col());
    u(k) = value;
  };
  for (int t = from_time; t < layout.n_times(); ++t) {
    resolve(layout.eps_index(t));
    for (int i = 0; i < layout.n_ref; ++i) resolve(layout.w_index(t, i));
    const int m = static_cast<int>(layout.active[static_cast<std::size_t>(t)].size());
    for (int s = 0; s < m; ++s) resolve(layout.v_index(t, s));
  }
}

ProcessParts process_loglik(const ProcessModel& model, const Vector& u) {
  if (u.size() != model.offset.size()) throw DataError("effect vector does not match the model");
  const Vector res = model.rows * u - model.offset;
  ProcessParts parts;
  for (Eigen::Index i = 0; i < res.size(); ++i) {
    const double contrib = -0.5 * (std::log(2.0 * std::numbers::pi * model.row_var(i)) +
                                   res(i) * res(i) / model.row_var(i));
    switch (model.part[static_cast<std::size_t>(i)]) {
      case RowPart::temporal: parts.temporal += contrib; break;
      case RowPart::persistent: parts.persistent += contrib; break;
      case RowPart::transient: parts.transient += contrib; break;
    }
  }
  return parts;
}

}  // namespace stnngp
