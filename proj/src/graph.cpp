#include "stnngp/graph.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <sstream>

namespace stnngp {

namespace {

// Candidate ordering: nearer first, lower index on exact distance ties.
struct Candidate {
  double dist;
  int index;
};
inline bool better(const Candidate& a, const Candidate& b) {
  return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
}

// Exact kNN with incremental insertion so the persistent graph can query the
// already-ordered prefix. Unbalanced, which is fine for the sizes involved.
class KdTree {
 public:
  explicit KdTree(const Matrix& pts) : pts_(pts), dim_(static_cast<int>(pts.cols())) {
    nodes_.reserve(static_cast<size_t>(pts.rows()));
  }

  void insert(int point) {
    if (root_ < 0) {
      root_ = make_node(point, 0);
      return;
    }
    int cur = root_;
    for (;;) {
      Node& n = nodes_[static_cast<size_t>(cur)];
      const bool go_left = pts_(point, n.axis) < pts_(n.point, n.axis);
      int& child = go_left ? n.left : n.right;
      if (child < 0) {
        child = make_node(point, (n.axis + 1) % dim_);
        return;
      }
      cur = child;
    }
  }

  std::vector<int> knn(const Vector& q, int k) const {
    heap_.clear();
    k_ = k;
    search(root_, q);
    std::sort(heap_.begin(), heap_.end(), better);
    std::vector<int> out(heap_.size());
    for (size_t i = 0; i < heap_.size(); ++i) out[i] = heap_[i].index;
    return out;
  }

 private:
  struct Node {
    int point;
    int axis;
    int left = -1;
    int right = -1;
  };

  int make_node(int point, int axis) {
    nodes_.push_back(Node{point, axis});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void search(int node, const Vector& q) const {
    if (node < 0) return;
    const Node& n = nodes_[static_cast<size_t>(node)];
    Candidate c{(q - pts_.row(n.point).transpose()).norm(), n.point};
    if (static_cast<int>(heap_.size()) < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), better);
    } else if (better(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
    const double diff = q(n.axis) - pts_(n.point, n.axis);
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q);
    // Ties across the split plane must still be visited for the index tie-break.
    if (static_cast<int>(heap_.size()) < k_ || std::abs(diff) <= heap_.front().dist)
      search(far, q);
  }

  const Matrix& pts_;
  int dim_;
  std::vector<Node> nodes_;
  int root_ = -1;
  mutable std::vector<Candidate> heap_;  // max-heap on `better`
  mutable int k_ = 0;
};

constexpr int kBruteForceLimit = 2000;

std::vector<int> knn_scan(const Vector& q, const Matrix& pts, int limit, int k,
                          DistanceMetric metric) {
  std::vector<Candidate> cands(static_cast<size_t>(limit));
  for (int i = 0; i < limit; ++i)
    cands[static_cast<size_t>(i)] = {point_distance(q, pts.row(i).transpose(), metric), i};
  const int kk = std::min(k, limit);
  std::partial_sort(cands.begin(), cands.begin() + kk, cands.end(), better);
  std::vector<int> out(static_cast<size_t>(kk));
  for (int i = 0; i < kk; ++i) out[static_cast<size_t>(i)] = cands[static_cast<size_t>(i)].index;
  return out;
}

}  // namespace

DedupeResult dedupe_locations(const Matrix& locations) {
  DedupeResult res;
  res.row_to_node.resize(static_cast<size_t>(locations.rows()));
  std::map<std::vector<double>, int> seen;
  std::vector<int> unique_rows;
  for (Eigen::Index r = 0; r < locations.rows(); ++r) {
    std::vector<double> key(locations.row(r).begin(), locations.row(r).end());
    auto [it, inserted] = seen.emplace(std::move(key), static_cast<int>(unique_rows.size()));
    if (inserted) unique_rows.push_back(static_cast<int>(r));
    res.row_to_node[static_cast<size_t>(r)] = it->second;
  }
  res.unique_locations.resize(static_cast<Eigen::Index>(unique_rows.size()), locations.cols());
  for (size_t i = 0; i < unique_rows.size(); ++i)
    res.unique_locations.row(static_cast<Eigen::Index>(i)) = locations.row(unique_rows[i]);
  return res;
}

ReferenceSet order_locations(const Matrix& locations) {
  if (locations.rows() == 0) throw DataError("empty reference set");
  const Eigen::Index n = locations.rows();
  std::vector<int> order(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  Vector key = locations.rowwise().sum();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (key(a) != key(b)) return key(a) < key(b);
    for (Eigen::Index c = 0; c < locations.cols(); ++c)
      if (locations(a, c) != locations(b, c)) return locations(a, c) < locations(b, c);
    return a < b;  // first appearance
  });
  ReferenceSet refs;
  refs.locations.resize(n, locations.cols());
  refs.ordering_key.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    refs.locations.row(i) = locations.row(order[static_cast<size_t>(i)]);
    refs.ordering_key(i) = key(order[static_cast<size_t>(i)]);
  }
  return refs;
}

NeighbourDag build_persistent_graph(const ReferenceSet& refs, int n_parents,
                                    DistanceMetric metric) {
  if (n_parents < 1) throw DataError("n_parents must be at least 1");
  const int n = static_cast<int>(refs.locations.rows());
  NeighbourDag dag;
  dag.n_parents = n_parents;
  dag.persistent_parents.resize(static_cast<size_t>(n));
  const bool use_tree = metric == DistanceMetric::euclidean && n > kBruteForceLimit;
  KdTree tree(refs.locations);
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      const Vector q = refs.locations.row(i).transpose();
      dag.persistent_parents[static_cast<size_t>(i)] =
          use_tree ? tree.knn(q, std::min(i, n_parents))
                   : knn_scan(q, refs.locations, i, n_parents, metric);
    }
    if (use_tree) tree.insert(i);
  }
  return dag;
}

std::vector<int> k_nearest(const Vector& query, const Matrix& points, int k,
                           DistanceMetric metric) {
  const int n = static_cast<int>(points.rows());
  if (metric == DistanceMetric::euclidean && n > kBruteForceLimit) {
    KdTree tree(points);
    for (int i = 0; i < n; ++i) tree.insert(i);
    return tree.knn(query, std::min(k, n));
  }
  return knn_scan(query, points, n, k, metric);
}

std::vector<std::vector<int>> build_transient_parents(const Matrix& obs_locations,
                                                      const ReferenceSet& refs,
                                                      int n_parents, DistanceMetric metric) {
  if (refs.locations.rows() == 0) throw DataError("empty reference set");
  const int n = static_cast<int>(refs.locations.rows());
  const bool use_tree = metric == DistanceMetric::euclidean && n > kBruteForceLimit;
  KdTree tree(refs.locations);
  if (use_tree)
    for (int i = 0; i < n; ++i) tree.insert(i);
  std::vector<std::vector<int>> parents(static_cast<size_t>(obs_locations.rows()));
  for (Eigen::Index r = 0; r < obs_locations.rows(); ++r) {
    const Vector q = obs_locations.row(r).transpose();
    parents[static_cast<size_t>(r)] = use_tree ? tree.knn(q, std::min(n_parents, n))
                                               : knn_scan(q, refs.locations, n, n_parents, metric);
  }
  return parents;
}

double mean_edge_distance(const NeighbourDag& dag, const ReferenceSet& refs,
                          DistanceMetric metric) {
  double total = 0.0;
  long count = 0;
  for (size_t i = 0; i < dag.persistent_parents.size(); ++i) {
    const Vector child = refs.locations.row(static_cast<Eigen::Index>(i)).transpose();
    for (int p : dag.persistent_parents[i]) {
      total += point_distance(child, refs.locations.row(p).transpose(), metric);
      ++count;
    }
  }
  if (count == 0) throw DataError("degenerate graph");
  return total / static_cast<double>(count);
}

std::string to_dot(const NeighbourDag& dag, const ReferenceSet& refs) {
  std::ostringstream out;
  out << "digraph persistent {\n";
  for (Eigen::Index i = 0; i < refs.locations.rows(); ++i) {
    out << "  n" << i << " [label=\"" << i << " (";
    for (Eigen::Index c = 0; c < refs.locations.cols(); ++c) {
      if (c) out << ", ";
      out << refs.locations(i, c);
    }
    out << ")\"];\n";
  }
  for (size_t i = 0; i < dag.persistent_parents.size(); ++i)
    for (int p : dag.persistent_parents[i]) out << "  n" << i << " -> n" << p << ";\n";
  out << "}\n";
  return out.str();
}

}  // namespace stnngp
