#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "phynfp/diffops.hpp"
#include "phynfp/graph.hpp"
#include "phynfp/tensor.hpp"

namespace phynfp {

enum class Variant { river, traffic, gcn };

std::string to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::river;
  int layers = 3;         // L
  int hidden = 16;        // d
  int window = 24;        // W
  int horizon = 6;        // n
  int num_features = 1;   // p, node variables per time step
  int edge_features = 0;  // q
  int phi_hidden = 8;
  double delta_t_init = 0.7;
  double g_hat_init = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  int input_width() const { return window * num_features; }
};

/// Everything a model needs from one graph orientation. Built once; taped ops keep
/// pointers into it, so it must outlive every tape that uses it.
struct GraphContext {
  DirectedGraph graph;
  UpwindStencil stencil;
  Eigen::MatrixXd edge_inputs;         // edge features standardized per column
  ad::SparseRowMajor gcn_adjacency;    // row-normalized incoming adjacency with self-loops

  explicit GraphContext(DirectedGraph g);
  Eigen::Index nodes() const { return static_cast<Eigen::Index>(graph.num_nodes()); }
};

/// D_norm^{-1} (A_in + I): row i averages node i and its upstream neighbors.
ad::SparseRowMajor normalized_adjacency(const DirectedGraph& g);

/// Flattens X[t-W+1 .. t] into |V| x (W*p); column w*p + k holds variable k at
/// window position w (w = W-1 is the latest step).
Eigen::MatrixXd flatten_window(const NodeSeries& series, Eigen::Index t_end, int window);

/// Difference operator with taped per-edge coefficients.
struct TapedOperator {
  const UpwindStencil* stencil = nullptr;
  ad::Tensor coeff;  // E x 1
};

inline ad::Tensor apply(const TapedOperator& op, const ad::Tensor& h) {
  return ad::stencil_apply(*op.stencil, op.coeff, h);
}

/// Wraps a constant DifferenceOperator for use in the taped layers.
TapedOperator constant_operator(ad::Tape& tape, const DifferenceOperator<double>& op);
TapedOperator constant_operator(ad::Tape& tape, DifferenceOperator<double>&& op) = delete;

struct RiverLayerParams {
  ad::Tensor w1, w2;     // d x d
  ad::Tensor delta_t;    // 1 x 1
  ad::Tensor g_hat;      // 1 x 1
};

struct TrafficLayerParams {
  ad::Tensor w1, w2;
  ad::Tensor delta_t;
};

/// Two-layer MLP q -> hidden -> 1 with tanh, weights on the tape.
struct EdgeMlp {
  ad::Tensor w1, b1, w2, b2;
  ad::Tensor operator()(const ad::Tensor& edge_inputs) const;
};

struct EdgeMapParams {
  EdgeMlp phi1;  // spacing
  EdgeMlp phi2;  // elevation difference; unused by the traffic variant
};

/// h' = h - dt * ( h .* ((D1 h) W1) + g_hat * ((D2 h) W2) ).
ad::Tensor river_layer(const ad::Tensor& h, const TapedOperator& d1, const TapedOperator& d2,
                       const RiverLayerParams& p);

/// h' = h - dt * ( h .* ((D1 v) W1) + v .* ((D1 h) W2) ).
ad::Tensor traffic_layer(const ad::Tensor& h, const ad::Tensor& v, const TapedOperator& d1,
                         const TrafficLayerParams& p);

/// relu(A_norm h W).
ad::Tensor gcn_layer(const ad::Tensor& h, const ad::SparseRowMajor& a_norm, const ad::Tensor& w);

/// dx = softplus(phi1(e)) + 1e-3 and dz = phi2(e), assembled into D1 (coefficients
/// 1/dx) and D2 (coefficients dz/dx) on the tape.
std::pair<TapedOperator, TapedOperator> build_operators(const GraphContext& ctx, const ad::Tensor& edge_inputs,
                                                        const EdgeMapParams& params);

inline constexpr double kMinSpacing = 1e-3;

/// Flux predictor: input embedding, L message-passing layers, shared per-node readout.
///
/// Variants: `river` (difference operators D1/D2 from learned edge maps), `traffic`
/// (D1 only, separate density/velocity embeddings, velocity held at v0) and `gcn`
/// (normalized-adjacency baseline). A single learnable dt is shared by all layers.
class FluxModel {
 public:
  explicit FluxModel(ModelConfig cfg);
  /// Restores a model from saved parameters; names and shapes must match `cfg`.
  FluxModel(ModelConfig cfg, std::vector<ad::Parameter> params);

  FluxModel(const FluxModel&) = default;
  FluxModel& operator=(const FluxModel&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<ad::Parameter*> parameter_ptrs();
  ad::Parameter& parameter(const std::string& name);
  const ad::Parameter& parameter(const std::string& name) const;

  /// Learned time step; NaN for the GCN baseline.
  double delta_t() const;

  struct Pass {
    ad::Tensor prediction;               // (B*|V|) x 1
    std::vector<ad::Tensor> embeddings;  // h^0 .. h^L
  };
  /// `inputs` stacks B flattened windows: (B*|V|) x (W*p).
  Pass forward(ad::Tape& tape, const GraphContext& ctx, const Eigen::MatrixXd& inputs) const;

  Eigen::VectorXd predict(const GraphContext& ctx, const Eigen::MatrixXd& inputs) const;
  std::vector<Eigen::MatrixXd> layer_embeddings(const GraphContext& ctx, const Eigen::MatrixXd& inputs) const;

  /// Per-edge (dx, dz) the river/traffic edge maps currently produce.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> edge_spacing(const GraphContext& ctx) const;

 private:
  void init_parameters();
  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound);
  std::size_t index_of(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<ad::Parameter> params_;
};

}  // namespace phynfp
