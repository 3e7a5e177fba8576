#include "phynfp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "phynfp/csv.hpp"
#include "phynfp/errors.hpp"

namespace phynfp {
namespace {

std::vector<std::string> default_labels(std::size_t n) {
  const std::size_t width = std::to_string(n == 0 ? 0 : n - 1).size();
  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto digits = std::to_string(i);
    labels[i] = "v" + std::string(width - digits.size(), '0') + digits;
  }
  return labels;
}

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw ValueError("non-finite value in " + where);
}

}  // namespace

DirectedGraph::DirectedGraph(std::size_t num_nodes, std::vector<Edge> edges,
                             Eigen::MatrixXd edge_features, std::vector<std::string> node_ids,
                             std::vector<std::string> feature_names)
    : num_nodes_(num_nodes),
      edges_(std::move(edges)),
      edge_features_(std::move(edge_features)),
      node_ids_(std::move(node_ids)),
      feature_names_(std::move(feature_names)) {
  if (edge_features_.rows() == 0 && edge_features_.cols() == 0) {
    edge_features_.resize(static_cast<Eigen::Index>(edges_.size()), 0);
  }
  if (edge_features_.rows() != static_cast<Eigen::Index>(edges_.size())) {
    throw SchemaError("edge feature rows (" + std::to_string(edge_features_.rows()) +
                      ") must equal edge count (" + std::to_string(edges_.size()) + ")");
  }
  if (node_ids_.empty()) node_ids_ = default_labels(num_nodes_);
  if (node_ids_.size() != num_nodes_) throw SchemaError("node label count differs from node count");
  if (std::set<std::string>(node_ids_.begin(), node_ids_.end()).size() != node_ids_.size()) {
    throw SchemaError("duplicate node label");
  }
  if (feature_names_.empty()) {
    for (Eigen::Index k = 0; k < edge_features_.cols(); ++k) feature_names_.push_back("f" + std::to_string(k + 1));
  }
  if (static_cast<Eigen::Index>(feature_names_.size()) != edge_features_.cols()) {
    throw SchemaError("feature name count differs from feature width");
  }
  if (!edge_features_.allFinite()) throw ValueError("non-finite edge feature");

  std::set<std::pair<NodeId, NodeId>> seen;
  upstream_.assign(num_nodes_, {});
  downstream_.assign(num_nodes_, {});
  const auto n = static_cast<NodeId>(num_nodes_);
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto [s, d] = edges_[e];
    if (s < 0 || s >= n || d < 0 || d >= n) {
      throw SchemaError("edge " + std::to_string(e) + " references a node outside [0, " +
                        std::to_string(n) + ")");
    }
    if (s == d) throw SchemaError("self-loop at node " + node_ids_[s]);
    if (!seen.emplace(s, d).second) {
      throw SchemaError("duplicate edge " + node_ids_[s] + " -> " + node_ids_[d]);
    }
    upstream_[d].push_back({s, e});
    downstream_[s].push_back({d, e});
  }
  auto by_node = [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; };
  for (auto& list : upstream_) std::sort(list.begin(), list.end(), by_node);
  for (auto& list : downstream_) std::sort(list.begin(), list.end(), by_node);
}

DirectedGraph DirectedGraph::from_labels(std::vector<std::string> labels,
                                         const std::vector<std::pair<std::string, std::string>>& edges,
                                         Eigen::MatrixXd edge_features,
                                         std::vector<std::string> feature_names) {
  std::sort(labels.begin(), labels.end());
  if (std::adjacent_find(labels.begin(), labels.end()) != labels.end()) {
    throw SchemaError("duplicate node label");
  }
  std::map<std::string, NodeId> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], static_cast<NodeId>(i));
  std::vector<Edge> resolved;
  resolved.reserve(edges.size());
  for (const auto& [s, d] : edges) {
    auto si = index.find(s);
    auto di = index.find(d);
    if (si == index.end() || di == index.end()) {
      throw SchemaError("edge " + s + " -> " + d + " references an unknown node");
    }
    resolved.push_back({si->second, di->second});
  }
  const std::size_t n = labels.size();
  return DirectedGraph(n, std::move(resolved), std::move(edge_features), std::move(labels),
                       std::move(feature_names));
}

NodeId DirectedGraph::node_index(const std::string& label) const {
  auto it = std::lower_bound(node_ids_.begin(), node_ids_.end(), label);
  if (it != node_ids_.end() && *it == label) return static_cast<NodeId>(it - node_ids_.begin());
  // Labels passed to the raw constructor need not be sorted.
  it = std::find(node_ids_.begin(), node_ids_.end(), label);
  if (it == node_ids_.end()) throw IndexError("unknown node label '" + label + "'");
  return static_cast<NodeId>(it - node_ids_.begin());
}

Eigen::Index DirectedGraph::feature_index(const std::string& name) const {
  auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
  if (it == feature_names_.end()) throw SchemaError("unknown edge feature '" + name + "'");
  return static_cast<Eigen::Index>(it - feature_names_.begin());
}

std::span<const Neighbor> DirectedGraph::upstream(NodeId i) const {
  if (i < 0 || i >= static_cast<NodeId>(num_nodes_)) throw IndexError("node id out of range");
  return upstream_[static_cast<std::size_t>(i)];
}

std::span<const Neighbor> DirectedGraph::downstream(NodeId i) const {
  if (i < 0 || i >= static_cast<NodeId>(num_nodes_)) throw IndexError("node id out of range");
  return downstream_[static_cast<std::size_t>(i)];
}

bool DirectedGraph::operator==(const DirectedGraph& other) const {
  return num_nodes_ == other.num_nodes_ && edges_ == other.edges_ && node_ids_ == other.node_ids_ &&
         feature_names_ == other.feature_names_ &&
         edge_features_.rows() == other.edge_features_.rows() &&
         edge_features_.cols() == other.edge_features_.cols() &&
         edge_features_ == other.edge_features_;
}

std::vector<Neighbor> upstream_neighbors(const DirectedGraph& g, NodeId i) {
  auto span = g.upstream(i);
  return {span.begin(), span.end()};
}

std::vector<Neighbor> downstream_neighbors(const DirectedGraph& g, NodeId i) {
  auto span = g.downstream(i);
  return {span.begin(), span.end()};
}

DirectedGraph reverse_topology(const DirectedGraph& g) {
  std::vector<Edge> flipped;
  flipped.reserve(g.num_edges());
  for (const auto& e : g.edges()) flipped.push_back({e.dst, e.src});
  return DirectedGraph(g.num_nodes(), std::move(flipped), g.edge_features(), g.node_ids(),
                       g.feature_names());
}

DirectedGraph permute_nodes(const DirectedGraph& g, std::span<const NodeId> perm) {
  if (perm.size() != g.num_nodes()) throw ShapeError("permutation length differs from node count");
  std::vector<std::string> labels(g.num_nodes());
  for (std::size_t i = 0; i < perm.size(); ++i) labels[static_cast<std::size_t>(perm[i])] = g.node_ids()[i];
  std::vector<Edge> edges;
  for (const auto& e : g.edges()) edges.push_back({perm[e.src], perm[e.dst]});
  return DirectedGraph(g.num_nodes(), std::move(edges), g.edge_features(), std::move(labels),
                       g.feature_names());
}

namespace {

DirectedGraph graph_from_table(const csv::Table& table, std::set<std::string> labels,
                               bool labels_fixed, const std::string& source) {
  if (table.header.size() < 2 || table.header[0] != "src" || table.header[1] != "dst") {
    throw SchemaError(source + ": edge header must start with src,dst");
  }
  const auto q = static_cast<Eigen::Index>(table.header.size() - 2);
  std::vector<std::string> feature_names(table.header.begin() + 2, table.header.end());
  Eigen::MatrixXd features(static_cast<Eigen::Index>(table.rows.size()), q);
  std::vector<std::pair<std::string, std::string>> edges;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    for (std::size_t c = 0; c < 2; ++c) {
      if (labels_fixed && !labels.count(row[c])) {
        throw SchemaError(source + ": edge references unknown node '" + row[c] + "'");
      }
      labels.insert(row[c]);
    }
    edges.emplace_back(row[0], row[1]);
    for (Eigen::Index k = 0; k < q; ++k) {
      const double v = csv::parse_double(row[static_cast<std::size_t>(k) + 2], source);
      require_finite(v, source + " row " + std::to_string(r + 1));
      features(static_cast<Eigen::Index>(r), k) = v;
    }
  }
  return DirectedGraph::from_labels({labels.begin(), labels.end()}, edges, std::move(features),
                                    std::move(feature_names));
}

}  // namespace

DirectedGraph load_graph(const std::filesystem::path& edge_file) {
  return graph_from_table(csv::read(edge_file), {}, false, edge_file.string());
}

DirectedGraph load_graph(const std::filesystem::path& edge_file,
                         const std::filesystem::path& node_file) {
  const auto nodes = csv::read(node_file);
  const auto col = nodes.column("node");
  std::set<std::string> labels;
  for (const auto& row : nodes.rows) labels.insert(row[col]);
  return graph_from_table(csv::read(edge_file), std::move(labels), true, edge_file.string());
}

void save_graph(const DirectedGraph& g, const std::filesystem::path& edge_file) {
  std::ofstream out(edge_file);
  if (!out) throw IoError("cannot write " + edge_file.string());
  std::vector<std::string> header{"src", "dst"};
  header.insert(header.end(), g.feature_names().begin(), g.feature_names().end());
  csv::write_row(out, header);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto& edge = g.edges()[e];
    std::vector<std::string> row{g.node_ids()[static_cast<std::size_t>(edge.src)],
                                 g.node_ids()[static_cast<std::size_t>(edge.dst)]};
    for (Eigen::Index k = 0; k < g.feature_width(); ++k) {
      row.push_back(csv::format(g.edge_features()(static_cast<Eigen::Index>(e), k)));
    }
    csv::write_row(out, row);
  }
}

namespace {

// Maps the `time` column onto a dense 0..T-1 axis and checks every (time, node) pair
// appears exactly once.
struct DenseIndex {
  std::vector<long long> times;
  std::vector<std::pair<Eigen::Index, NodeId>> cells;  // per row
};

DenseIndex index_rows(const csv::Table& table, const DirectedGraph& g, const std::string& source) {
  const auto tcol = table.column("time");
  const auto ncol = table.column("node");
  std::set<long long> time_set;
  std::vector<long long> raw(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    raw[r] = csv::parse_int(table.rows[r][tcol], source);
    time_set.insert(raw[r]);
  }
  DenseIndex idx;
  idx.times.assign(time_set.begin(), time_set.end());
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const auto steps = static_cast<Eigen::Index>(idx.times.size());
  std::vector<char> seen(static_cast<std::size_t>(steps * n), 0);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto t = static_cast<Eigen::Index>(
        std::lower_bound(idx.times.begin(), idx.times.end(), raw[r]) - idx.times.begin());
    NodeId node = 0;
    try {
      node = g.node_index(table.rows[r][ncol]);
    } catch (const IndexError&) {
      throw SchemaError(source + ": unknown node '" + table.rows[r][ncol] + "'");
    }
    auto& flag = seen[static_cast<std::size_t>(t * n + node)];
    if (flag) throw SchemaError(source + ": duplicate (time, node) row");
    flag = 1;
    idx.cells.emplace_back(t, node);
  }
  if (table.rows.size() != static_cast<std::size_t>(steps * n)) {
    throw SchemaError(source + ": series is not dense over (time, node)");
  }
  return idx;
}

}  // namespace

NodeSeries load_node_series(const std::filesystem::path& file, const DirectedGraph& g) {
  const auto table = csv::read(file);
  const auto source = file.string();
  const auto idx = index_rows(table, g, source);
  NodeSeries series;
  series.steps = static_cast<Eigen::Index>(idx.times.size());
  series.nodes = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<std::size_t> value_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (table.header[c] != "time" && table.header[c] != "node") {
      value_cols.push_back(c);
      series.variable_names.push_back(table.header[c]);
    }
  }
  if (value_cols.empty()) throw SchemaError(source + ": no value columns");
  series.values.resize(series.steps * series.nodes, static_cast<Eigen::Index>(value_cols.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto [t, node] = idx.cells[r];
    for (std::size_t k = 0; k < value_cols.size(); ++k) {
      const double v = csv::parse_double(table.rows[r][value_cols[k]], source);
      require_finite(v, source + " row " + std::to_string(r + 1));
      series.values(t * series.nodes + node, static_cast<Eigen::Index>(k)) = v;
    }
  }
  return series;
}

Targets load_targets(const std::filesystem::path& file, const DirectedGraph& g) {
  const auto table = csv::read(file);
  const auto source = file.string();
  const auto idx = index_rows(table, g, source);
  const auto ycol = table.column("y");
  Targets targets;
  targets.values.resize(static_cast<Eigen::Index>(idx.times.size()),
                        static_cast<Eigen::Index>(g.num_nodes()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto [t, node] = idx.cells[r];
    const double v = csv::parse_double(table.rows[r][ycol], source);
    require_finite(v, source + " row " + std::to_string(r + 1));
    targets.values(t, node) = v;
  }
  return targets;
}

void save_node_series(const NodeSeries& series, const DirectedGraph& g,
                      const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  std::vector<std::string> header{"time", "node"};
  for (Eigen::Index k = 0; k < series.variables(); ++k) {
    header.push_back(static_cast<std::size_t>(k) < series.variable_names.size()
                         ? series.variable_names[static_cast<std::size_t>(k)]
                         : "v" + std::to_string(k + 1));
  }
  csv::write_row(out, header);
  for (Eigen::Index t = 0; t < series.steps; ++t) {
    for (Eigen::Index i = 0; i < series.nodes; ++i) {
      std::vector<std::string> row{std::to_string(t), g.node_ids()[static_cast<std::size_t>(i)]};
      for (Eigen::Index k = 0; k < series.variables(); ++k) {
        row.push_back(csv::format(series.values(t * series.nodes + i, k)));
      }
      csv::write_row(out, row);
    }
  }
}

void save_targets(const Targets& targets, const DirectedGraph& g, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  csv::write_row(out, {"time", "node", "y"});
  for (Eigen::Index t = 0; t < targets.steps(); ++t) {
    for (Eigen::Index i = 0; i < targets.values.cols(); ++i) {
      csv::write_row(out, {std::to_string(t), g.node_ids()[static_cast<std::size_t>(i)],
                           csv::format(targets.values(t, i))});
    }
  }
}

}  // namespace phynfp
