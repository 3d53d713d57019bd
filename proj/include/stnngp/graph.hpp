#pragma once

#include <string>
#include <vector>

#include "stnngp/geometry.hpp"
#include "stnngp/types.hpp"

namespace stnngp {

/// Reference locations sorted south-west to north-east (ascending coordinate
/// sum, coordinate-wise tie-break). Row i of `locations` is node i.
struct ReferenceSet {
  Matrix locations;      // n x d
  Vector ordering_key;   // coordinate sums, ascending
};

/// Directed acyclic graph over the reference nodes: every edge points from a
/// node to an earlier node in the ordering. Transient parent sets for
/// off-reference locations are stored separately by the model frame.
struct NeighbourDag {
  std::vector<std::vector<int>> persistent_parents;  // per node, indices < node
  int n_parents = 0;                                 // requested parent count
};

struct DedupeResult {
  Matrix unique_locations;       // in order of first appearance
  std::vector<int> row_to_node;  // original row -> unique index
};

/// Merge exact-coordinate duplicates, keeping first-appearance order.
DedupeResult dedupe_locations(const Matrix& locations);

/// Sort locations into the reference ordering. Input must be deduplicated.
ReferenceSet order_locations(const Matrix& locations);

/// Node i gets the min(i, n_parents) nearest earlier nodes. Distance ties
/// break toward the lower node index.
NeighbourDag build_persistent_graph(const ReferenceSet& refs, int n_parents,
                                    DistanceMetric metric = DistanceMetric::euclidean);

/// Each observation location gets the min(|refs|, n_parents) nearest reference
/// nodes, nearest first; a coincident reference node is always first.
std::vector<std::vector<int>> build_transient_parents(
    const Matrix& obs_locations, const ReferenceSet& refs, int n_parents,
    DistanceMetric metric = DistanceMetric::euclidean);

/// Mean length over all persistent directed edges. Errors on an edgeless graph.
double mean_edge_distance(const NeighbourDag& dag, const ReferenceSet& refs,
                          DistanceMetric metric = DistanceMetric::euclidean);

/// k nearest rows of `points` to `query`, nearest first, index tie-break.
/// Exact: brute force for small point sets, kd-tree above (euclidean only;
/// haversine always scans since coordinate splits cannot bound great-circle
/// distance).
std::vector<int> k_nearest(const Vector& query, const Matrix& points, int k,
                           DistanceMetric metric = DistanceMetric::euclidean);

/// DOT rendering of the persistent graph, one edge per child->parent.
std::string to_dot(const NeighbourDag& dag, const ReferenceSet& refs);

}  // namespace stnngp
