#include "phynfp/models.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "phynfp/errors.hpp"

namespace phynfp {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::river: return "river";
    case Variant::traffic: return "traffic";
    case Variant::gcn: return "gcn";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "river") return Variant::river;
  if (name == "traffic") return Variant::traffic;
  if (name == "gcn") return Variant::gcn;
  throw ConfigError("unknown model variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (num_features < 1) throw ConfigError("num_features must be >= 1");
  if (edge_features < 0) throw ConfigError("edge_features must be >= 0");
  if (phi_hidden < 1) throw ConfigError("phi_hidden must be >= 1");
}

ad::SparseRowMajor normalized_adjacency(const DirectedGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<Eigen::Triplet<double>> trip;
  for (NodeId i = 0; i < n; ++i) {
    const auto up = g.upstream(i);
    const double w = 1.0 / static_cast<double>(up.size() + 1);
    trip.emplace_back(i, i, w);
    for (const auto& nb : up) trip.emplace_back(i, nb.node, w);
  }
  ad::SparseRowMajor a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

GraphContext::GraphContext(DirectedGraph g)
    : graph(std::move(g)), stencil(graph), gcn_adjacency(normalized_adjacency(graph)) {
  edge_inputs = graph.edge_features();
  for (Eigen::Index k = 0; k < edge_inputs.cols(); ++k) {
    auto col = edge_inputs.col(k);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    const double std = var > 0.0 ? std::sqrt(var) : 1.0;
    col = (col.array() - mean) / std;
  }
}

Eigen::MatrixXd flatten_window(const NodeSeries& series, Eigen::Index t_end, int window) {
  if (window < 1 || t_end - window + 1 < 0 || t_end >= series.steps) {
    throw ShapeError("window does not fit inside the series");
  }
  const auto p = series.variables();
  Eigen::MatrixXd x(series.nodes, window * p);
  for (int w = 0; w < window; ++w) {
    x.middleCols(w * p, p) = series.frame(t_end - window + 1 + w);
  }
  return x;
}

TapedOperator constant_operator(ad::Tape& tape, const DifferenceOperator<double>& op) {
  return {&op.stencil(), tape.constant(op.edge_coefficients())};
}

ad::Tensor EdgeMlp::operator()(const ad::Tensor& edge_inputs) const {
  auto hidden = ad::tanh(ad::add_bias(ad::matmul(edge_inputs, w1), b1));
  return ad::add_bias(ad::matmul(hidden, w2), b2);
}

ad::Tensor river_layer(const ad::Tensor& h, const TapedOperator& d1, const TapedOperator& d2,
                       const RiverLayerParams& p) {
  if (h.cols() != p.w1.rows() || p.w1.rows() != p.w1.cols() || p.w2.rows() != p.w1.rows() ||
      p.w2.cols() != p.w2.rows()) {
    throw ShapeError("river_layer: weights must be d x d with d = embedding width");
  }
  auto transport = ad::cwise_product(h, ad::matmul(apply(d1, h), p.w1));
  auto elevation = ad::scale(p.g_hat, ad::matmul(apply(d2, h), p.w2));
  return h - ad::scale(p.delta_t, transport + elevation);
}

ad::Tensor traffic_layer(const ad::Tensor& h, const ad::Tensor& v, const TapedOperator& d1,
                         const TrafficLayerParams& p) {
  if (h.rows() != v.rows() || h.cols() != v.cols()) throw ShapeError("traffic_layer: h and v differ in shape");
  if (h.cols() != p.w1.rows() || p.w1.rows() != p.w1.cols() || p.w2.rows() != p.w1.rows() ||
      p.w2.cols() != p.w2.rows()) {
    throw ShapeError("traffic_layer: weights must be d x d with d = embedding width");
  }
  auto velocity_term = ad::cwise_product(h, ad::matmul(apply(d1, v), p.w1));
  auto density_term = ad::cwise_product(v, ad::matmul(apply(d1, h), p.w2));
  return h - ad::scale(p.delta_t, velocity_term + density_term);
}

ad::Tensor gcn_layer(const ad::Tensor& h, const ad::SparseRowMajor& a_norm, const ad::Tensor& w) {
  if (h.cols() != w.rows()) throw ShapeError("gcn_layer: weight rows differ from embedding width");
  return ad::relu(ad::matmul(ad::sparse_apply(a_norm, h), w));
}

std::pair<TapedOperator, TapedOperator> build_operators(const GraphContext& ctx, const ad::Tensor& edge_inputs,
                                                        const EdgeMapParams& params) {
  if (edge_inputs.rows() != static_cast<Eigen::Index>(ctx.graph.num_edges()) ||
      edge_inputs.cols() != params.phi1.w1.rows()) {
    throw ShapeError("build_operators: edge feature width does not match the edge maps");
  }
  auto dx = ad::add_constant(ad::softplus(params.phi1(edge_inputs)), kMinSpacing);
  auto inv_dx = ad::reciprocal(dx);
  TapedOperator d1{&ctx.stencil, inv_dx};
  TapedOperator d2{&ctx.stencil, inv_dx};
  if (params.phi2.w1.valid()) d2.coeff = ad::cwise_product(params.phi2(edge_inputs), inv_dx);
  return {d1, d2};
}

// ---------------------------------------------------------------------------

FluxModel::FluxModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_parameters();
}

FluxModel::FluxModel(ModelConfig cfg, std::vector<ad::Parameter> params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_parameters();
  if (params.size() != params_.size()) throw SchemaError("checkpoint parameter count does not match the model");
  for (auto& p : params) {
    auto& mine = parameter(p.name);
    if (mine.value.rows() != p.value.rows() || mine.value.cols() != p.value.cols()) {
      throw SchemaError("checkpoint parameter '" + p.name + "' has the wrong shape");
    }
    mine.value = std::move(p.value);
  }
}

void FluxModel::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound) {
  params_.push_back({name, Eigen::MatrixXd::Zero(rows, cols)});
  if (bound == 0.0) return;
  // Deterministic stream per parameter: seed mixed with its position.
  std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + params_.size());
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto& m = params_.back().value;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
}

void FluxModel::init_parameters() {
  params_.clear();
  auto glorot = [](Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  };
  const Eigen::Index in = cfg_.input_width();
  const Eigen::Index d = cfg_.hidden;
  const Eigen::Index q = cfg_.edge_features;
  const Eigen::Index ph = cfg_.phi_hidden;

  if (cfg_.variant == Variant::traffic) {
    add("embed_h.w1", in, d, glorot(in, d));
    add("embed_h.w2", d, d, glorot(d, d));
    add("embed_v.w1", in, d, glorot(in, d));
    add("embed_v.w2", d, d, glorot(d, d));
  } else {
    add("embed.w", in, d, glorot(in, d));
  }

  if (cfg_.variant != Variant::gcn) {
    add("delta_t", 1, 1, 0.0);
    params_.back().value(0, 0) = cfg_.delta_t_init;
    const int maps = cfg_.variant == Variant::river ? 2 : 1;
    for (int m = 1; m <= maps; ++m) {
      const std::string pre = "phi" + std::to_string(m);
      add(pre + ".w1", q, ph, glorot(std::max<Eigen::Index>(q, 1), ph));
      add(pre + ".b1", 1, ph, 0.0);
      add(pre + ".w2", ph, 1, glorot(ph, 1));
      add(pre + ".b2", 1, 1, 0.0);
    }
    if (cfg_.variant == Variant::river) {
      add("g_hat", 1, 1, 0.0);
      params_.back().value(0, 0) = cfg_.g_hat_init;
    }
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l);
    if (cfg_.variant == Variant::gcn) {
      add(pre + ".w", d, d, glorot(d, d));
    } else {
      add(pre + ".w1", d, d, glorot(d, d));
      add(pre + ".w2", d, d, glorot(d, d));
    }
  }
  add("readout.w", d, 1, glorot(d, 1));
  add("readout.b", 1, 1, 0.0);
}

std::size_t FluxModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw SchemaError("model has no parameter '" + name + "'");
}

ad::Parameter& FluxModel::parameter(const std::string& name) { return params_[index_of(name)]; }
const ad::Parameter& FluxModel::parameter(const std::string& name) const { return params_[index_of(name)]; }

std::vector<ad::Parameter*> FluxModel::parameter_ptrs() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

double FluxModel::delta_t() const {
  if (cfg_.variant == Variant::gcn) return std::numeric_limits<double>::quiet_NaN();
  return parameter("delta_t").value(0, 0);
}

namespace {

EdgeMlp bind_mlp(ad::Tape& tape, const FluxModel& m, const std::string& pre) {
  return {tape.parameter(m.parameter(pre + ".w1")), tape.parameter(m.parameter(pre + ".b1")),
          tape.parameter(m.parameter(pre + ".w2")), tape.parameter(m.parameter(pre + ".b2"))};
}

}  // namespace

FluxModel::Pass FluxModel::forward(ad::Tape& tape, const GraphContext& ctx, const Eigen::MatrixXd& inputs) const {
  const auto n = ctx.nodes();
  if (n == 0 || inputs.rows() % n != 0) throw ShapeError("forward: input rows must be a multiple of |V|");
  if (inputs.cols() != cfg_.input_width()) {
    throw ShapeError("forward: expected " + std::to_string(cfg_.input_width()) + " input columns, got " +
                     std::to_string(inputs.cols()));
  }
  if (cfg_.variant != Variant::gcn && ctx.edge_inputs.cols() != cfg_.edge_features) {
    throw ShapeError("forward: graph edge feature width differs from the model's");
  }
  Pass pass;
  auto x = tape.constant(inputs);
  auto bind = [&](const std::string& name) { return tape.parameter(parameter(name)); };

  ad::Tensor h;
  if (cfg_.variant == Variant::traffic) {
    h = ad::matmul(ad::tanh(ad::matmul(x, bind("embed_h.w1"))), bind("embed_h.w2"));
  } else {
    h = ad::matmul(x, bind("embed.w"));
  }
  pass.embeddings.push_back(h);

  if (cfg_.variant == Variant::gcn) {
    for (int l = 0; l < cfg_.layers; ++l) {
      h = gcn_layer(h, ctx.gcn_adjacency, bind("layer" + std::to_string(l) + ".w"));
      pass.embeddings.push_back(h);
    }
  } else {
    auto delta_t = bind("delta_t");
    auto edges = tape.constant(ctx.edge_inputs);
    EdgeMapParams maps;
    maps.phi1 = bind_mlp(tape, *this, "phi1");
    if (cfg_.variant == Variant::river) maps.phi2 = bind_mlp(tape, *this, "phi2");
    const auto [d1, d2] = build_operators(ctx, edges, maps);
    if (cfg_.variant == Variant::river) {
      auto g_hat = bind("g_hat");
      for (int l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l);
        h = river_layer(h, d1, d2, {bind(pre + ".w1"), bind(pre + ".w2"), delta_t, g_hat});
        pass.embeddings.push_back(h);
      }
    } else {
      auto v = ad::matmul(ad::tanh(ad::matmul(x, bind("embed_v.w1"))), bind("embed_v.w2"));
      for (int l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l);
        h = traffic_layer(h, v, d1, {bind(pre + ".w1"), bind(pre + ".w2"), delta_t});
        pass.embeddings.push_back(h);
      }
    }
  }
  pass.prediction = ad::add_scalar(ad::matmul(h, bind("readout.w")), bind("readout.b"));
  return pass;
}

Eigen::VectorXd FluxModel::predict(const GraphContext& ctx, const Eigen::MatrixXd& inputs) const {
  ad::Tape tape;
  return forward(tape, ctx, inputs).prediction.value().col(0);
}

std::vector<Eigen::MatrixXd> FluxModel::layer_embeddings(const GraphContext& ctx, const Eigen::MatrixXd& inputs) const {
  ad::Tape tape;
  const auto pass = forward(tape, ctx, inputs);
  std::vector<Eigen::MatrixXd> out;
  for (const auto& h : pass.embeddings) out.push_back(h.value());
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> FluxModel::edge_spacing(const GraphContext& ctx) const {
  if (cfg_.variant == Variant::gcn) throw ContractError("the GCN baseline has no edge maps");
  ad::Tape tape;
  auto edges = tape.constant(ctx.edge_inputs);
  const auto phi1 = bind_mlp(tape, *this, "phi1");
  Eigen::VectorXd dx = ad::add_constant(ad::softplus(phi1(edges)), kMinSpacing).value().col(0);
  Eigen::VectorXd dz = Eigen::VectorXd::Zero(dx.size());
  if (cfg_.variant == Variant::river) dz = bind_mlp(tape, *this, "phi2")(edges).value().col(0);
  return {dx, dz};
}

}  // namespace phynfp
