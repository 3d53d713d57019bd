#pragma once

#include <Eigen/SparseCore>
#include <vector>

#include "stnngp/covariance.hpp"
#include "stnngp/graph.hpp"
#include "stnngp/timeseries.hpp"
#include "stnngp/types.hpp"

namespace stnngp {

/// Kriging system of one reference node against its persistent parents.
/// Node 0 has no parents; its deficit is 1 (the full marginal variance).
struct NodeSystem {
  std::vector<int> parents;
  Vector weights;
  double deficit = 1.0;
  double weight_sum = 0.0;
};

/// Kriging system of a transient location against its reference parents,
/// plus the normalized weights used to predict the previous-time value.
/// blup is empty when the weight sum is numerically zero; rows that need it
/// then fail instead of dividing by it.
struct TransientSystem {
  Vector location;
  std::vector<int> parents;
  Vector weights;
  double deficit = 1.0;
  double weight_sum = 0.0;
  Vector blup;
};

struct SpatialSystems {
  std::vector<NodeSystem> nodes;
  std::vector<TransientSystem> transients;
};

/// Solve every kriging system once. Weights and deficits depend only on the
/// graph geometry and the calibrated range, not on the model parameters, so
/// this runs once per model frame.
SpatialSystems build_spatial_systems(const ReferenceSet& refs, const NeighbourDag& dag,
                                     const Matrix& transient_locations,
                                     const CovarianceSpec& spec, const Calibration& cal,
                                     DistanceMetric metric = DistanceMetric::euclidean);

/// Index map for the stacked effect vector. Effects are eliminated time
/// slice by time slice; within a slice the reference effects come first,
/// then the transient effects active at that time, then the temporal effect.
/// A default-constructed layout has no times and no effects.
struct EffectLayout {
  int n_ref = 0;
  std::vector<std::vector<int>> active;  // transient ids per time, ascending
  std::vector<int> offsets{0};           // slice starts, one past-the-end entry

  int n_times() const { return static_cast<int>(active.size()); }
  int size() const { return offsets.back(); }
  int slice_size(int t) const { return offsets[t + 1] - offsets[t]; }
  int w_index(int t, int node) const { return offsets[t] + node; }
  int v_index(int t, int slot) const { return offsets[t] + n_ref + slot; }
  int eps_index(int t) const { return offsets[t + 1] - 1; }
  int slot_of(int t, int transient_id) const;  // -1 when inactive at t
};

EffectLayout make_layout(int n_ref, std::vector<std::vector<int>> active_transients);

/// Effects in their natural shapes, convertible to and from the stacked
/// vector the solvers work with.
struct RandomEffectState {
  Vector eps;
  Matrix ref_effects;                     // n_times x n_ref
  std::vector<Vector> transient_effects;  // per time, matching layout.active
};

Vector pack_state(const EffectLayout& layout, const RandomEffectState& state);
RandomEffectState unpack_state(const EffectLayout& layout, const Vector& u);

enum class RowPart { temporal, persistent, transient };

/// The random-effects log-density as a Gaussian in residual form: one row
/// per effect, residual r = rows*u - offset, log-density
/// lognorm - 0.5 * sum(r_i^2 / row_var_i). The precision matrix of u is
/// rows' * diag(row_var)^-1 * rows.
struct ProcessModel {
  Eigen::SparseMatrix<double> rows;
  Vector offset;
  Vector row_var;
  std::vector<RowPart> part;
  double lognorm = 0.0;

  Eigen::SparseMatrix<double> precision() const;
};

ProcessModel build_process_model(const EffectLayout& layout, const SpatialSystems& systems,
                                 const TemporalParams& temporal, double marginal_variance);

struct ProcessParts {
  double temporal = 0.0;
  double persistent = 0.0;
  double transient = 0.0;
  double total() const { return temporal + persistent + transient; }
};

ProcessParts process_loglik(const ProcessModel& model, const Vector& u);

/// Solve rows * u = offset + noise by substitution, filling the slices from
/// `from_time` on and leaving earlier entries as given. Within a slice the
/// temporal effect resolves first, then the reference effects in graph
/// order, then the transients. `noise` holds one already-scaled residual
/// per row; pass an empty vector for the conditional-mean recursion.
void forward_substitute(const ProcessModel& model, const EffectLayout& layout, int from_time,
                        Vector& u, const Vector& noise);

}  // namespace stnngp
