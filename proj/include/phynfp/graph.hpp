#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace phynfp {

using NodeId = Eigen::Index;

struct Edge {
  NodeId src;
  NodeId dst;
  bool operator==(const Edge&) const = default;
};

/// A neighboring node together with the index of the connecting edge.
struct Neighbor {
  NodeId node;
  std::size_t edge;
  bool operator==(const Neighbor&) const = default;
};

/// Directed flow network with a uniform-width feature vector on every edge.
///
/// Immutable after construction. Self-loops and repeated (src, dst) pairs are
/// rejected. Upstream/downstream adjacency is precomputed in ascending node order.
class DirectedGraph {
 public:
  DirectedGraph() = default;

  /// `edge_features` has one row per edge. Empty `node_ids` yields labels "0".."n-1".
  DirectedGraph(std::size_t num_nodes, std::vector<Edge> edges, Eigen::MatrixXd edge_features,
                std::vector<std::string> node_ids = {}, std::vector<std::string> feature_names = {});

  /// Builds a graph from string labels. Internal ids follow the lexicographic order of labels.
  static DirectedGraph from_labels(std::vector<std::string> labels,
                                   const std::vector<std::pair<std::string, std::string>>& edges,
                                   Eigen::MatrixXd edge_features,
                                   std::vector<std::string> feature_names = {});

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  Eigen::Index feature_width() const { return edge_features_.cols(); }

  const std::vector<Edge>& edges() const { return edges_; }
  const Eigen::MatrixXd& edge_features() const { return edge_features_; }
  const std::vector<std::string>& node_ids() const { return node_ids_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  /// Internal id of an external label; throws IndexError.
  NodeId node_index(const std::string& label) const;
  /// Column of a named edge feature; throws SchemaError.
  Eigen::Index feature_index(const std::string& name) const;

  std::span<const Neighbor> upstream(NodeId i) const;
  std::span<const Neighbor> downstream(NodeId i) const;

  bool operator==(const DirectedGraph& other) const;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  Eigen::MatrixXd edge_features_;
  std::vector<std::string> node_ids_;
  std::vector<std::string> feature_names_;
  std::vector<std::vector<Neighbor>> upstream_;
  std::vector<std::vector<Neighbor>> downstream_;
};

/// Nodes j with an edge (j, i), ascending by j.
std::vector<Neighbor> upstream_neighbors(const DirectedGraph& g, NodeId i);
/// Nodes j with an edge (i, j), ascending by j.
std::vector<Neighbor> downstream_neighbors(const DirectedGraph& g, NodeId i);

/// Every edge (s, d) becomes (d, s); edge order and features are kept.
DirectedGraph reverse_topology(const DirectedGraph& g);

/// Applies a node relabeling: node i of `g` becomes node perm[i].
DirectedGraph permute_nodes(const DirectedGraph& g, std::span<const NodeId> perm);

/// Loads an edge CSV (`src,dst,f1,...,fq`).
DirectedGraph load_graph(const std::filesystem::path& edge_file);
/// As above, with the node set taken from the `node` column of `node_file`
/// (a node list or a node-series CSV). Edges must only reference listed nodes.
DirectedGraph load_graph(const std::filesystem::path& edge_file,
                         const std::filesystem::path& node_file);

void save_graph(const DirectedGraph& g, const std::filesystem::path& edge_file);

/// Per-node observations over time: shape (T, |V|, p), stored with row t*|V| + i.
struct NodeSeries {
  Eigen::Index steps = 0;
  Eigen::Index nodes = 0;
  Eigen::MatrixXd values;  // (steps * nodes) x p
  std::vector<std::string> variable_names;

  Eigen::Index variables() const { return values.cols(); }
  auto frame(Eigen::Index t) { return values.middleRows(t * nodes, nodes); }
  auto frame(Eigen::Index t) const { return values.middleRows(t * nodes, nodes); }
};

/// Flux targets, shape (T, |V|).
struct Targets {
  Eigen::MatrixXd values;
  Eigen::Index steps() const { return values.rows(); }
};

NodeSeries load_node_series(const std::filesystem::path& file, const DirectedGraph& g);
Targets load_targets(const std::filesystem::path& file, const DirectedGraph& g);
void save_node_series(const NodeSeries& series, const DirectedGraph& g,
                      const std::filesystem::path& file);
void save_targets(const Targets& targets, const DirectedGraph& g, const std::filesystem::path& file);

}  // namespace phynfp
