#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <deque>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "phynfp/diffops.hpp"

namespace phynfp::ad {

using Matrix = Eigen::MatrixXd;
using SparseRowMajor = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// A named trainable array that outlives any single tape.
struct Parameter {
  std::string name;
  Matrix value;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
///
/// Scalars are 1x1, node vectors are n x 1. Batched graph tensors stack B copies
/// of a |V|-row block on top of each other.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of Tape::backward.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `t`; zeros when `t` did not participate.
  Matrix operator[](const Tensor& t) const;
  /// Gradient w.r.t. a parameter bound on the tape; zeros when unused.
  Matrix of(const Parameter& p) const;

 private:
  friend class Tape;
  std::vector<Matrix> grads_;
  std::vector<Eigen::Index> rows_, cols_;
  std::vector<std::pair<const Parameter*, std::size_t>> bound_;
};

/// Append-only record of a forward computation.
///
/// Nodes are created in evaluation order, so inputs always precede outputs;
/// backward walks the list once in reverse. Fan-out accumulates additively.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor variable(Matrix value);
  /// Records the current value of `p` as a gradient-carrying leaf.
  Tensor parameter(const Parameter& p);

  /// Records an op output. `fn` reads grad(self) and accumulates into its inputs.
  Tensor record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn);

  /// Reverse sweep from a 1x1 loss. Throws ContractError otherwise.
  Gradients backward(const Tensor& loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Accumulator of node `id`; only meaningful inside a backward sweep.
  Matrix& grad(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  Tensor push(Matrix value, bool requires_grad);

  std::deque<Node> nodes_;
  std::vector<Matrix> grads_;
  std::vector<std::pair<const Parameter*, std::size_t>> bound_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Operands must live on the same tape.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

enum class Ewise { add, sub, mul };
/// Same-shape elementwise op; no broadcasting.
Tensor ewise(Ewise op, const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return ewise(Ewise::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ewise(Ewise::sub, a, b); }
inline Tensor cwise_product(const Tensor& a, const Tensor& b) { return ewise(Ewise::mul, a, b); }

/// s * a for a 1x1 tensor s.
Tensor scale(const Tensor& s, const Tensor& a);
Tensor scale(double s, const Tensor& a);
/// a + s for a 1x1 tensor s, added to every entry.
Tensor add_scalar(const Tensor& a, const Tensor& s);
Tensor add_constant(const Tensor& a, double c);
/// a + 1 * row for a 1 x cols(a) row.
Tensor add_bias(const Tensor& a, const Tensor& row);
Tensor reciprocal(const Tensor& a);

enum class Activation { tanh, softplus, relu };
Tensor activation(Activation kind, const Tensor& a);
inline Tensor tanh(const Tensor& a) { return activation(Activation::tanh, a); }
inline Tensor softplus(const Tensor& a) { return activation(Activation::softplus, a); }
inline Tensor relu(const Tensor& a) { return activation(Activation::relu, a); }

/// Constant sparse operator applied to every |V|-row block of h. Adjoint: S^T g.
Tensor sparse_apply(const SparseRowMajor& op, const Tensor& h);
inline Tensor sparse_apply(const DifferenceOperator<double>& op, const Tensor& h) {
  return sparse_apply(op.matrix(), h);
}

/// Difference operator whose per-edge coefficients are themselves on the tape:
/// out_i = sum over stencil terms of weight * coeff[edge] * (h_i - h_col).
/// Gradients flow to both h and coeff (E x 1).
Tensor stencil_apply(const UpwindStencil& stencil, const Tensor& coeff, const Tensor& h);

/// (1/n) * sum (pred - target)^2 over all n entries.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Copy of `a` that blocks gradient flow.
Tensor detach(const Tensor& a);

// ---------------------------------------------------------------------------
// Optimizer and checkpoints
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * weight_decay * p
  std::vector<bool> decay;    // per parameter; empty means every parameter decays
  long t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state);

/// Writes `parameters.json` ({name, shape, file} per parameter) and one
/// little-endian float64 blob per parameter into `dir`.
void save_parameters(const std::filesystem::path& dir, std::span<const Parameter* const> params);
std::vector<Parameter> load_parameters(const std::filesystem::path& dir);

}  // namespace phynfp::ad
