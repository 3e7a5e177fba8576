#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "phynfp/errors.hpp"
#include "phynfp/graph.hpp"

namespace phynfp {

/// One term of an upwind stencil: row `row` is differenced against `col` through
/// `edge`, with averaging weight `weight` (1/k for k upstream neighbors, 1/m for
/// the m downstream neighbors of a headwater).
struct StencilTerm {
  NodeId row;
  NodeId col;
  std::size_t edge;
  double weight;
};

/// Sparsity and averaging structure shared by every difference operator of a graph.
///
/// A row with k >= 1 upstream neighbors holds one term per upstream edge. A
/// headwater (no upstream, m >= 1 downstream) holds one term per downstream edge,
/// which on a chain reduces to differencing the first node against its successor.
/// Isolated nodes have no terms. Terms are sorted by (row, col).
class UpwindStencil {
 public:
  UpwindStencil() = default;

  explicit UpwindStencil(const DirectedGraph& g)
      : nodes_(static_cast<Eigen::Index>(g.num_nodes())), edges_(g.num_edges()) {
    row_begin_.reserve(g.num_nodes() + 1);
    for (NodeId i = 0; i < nodes_; ++i) {
      row_begin_.push_back(terms_.size());
      const auto up = g.upstream(i);
      const auto down = g.downstream(i);
      const auto& side = up.empty() ? down : up;
      for (const auto& nb : side) {
        terms_.push_back({i, nb.node, nb.edge, 1.0 / static_cast<double>(side.size())});
      }
    }
    row_begin_.push_back(terms_.size());
  }

  Eigen::Index nodes() const { return nodes_; }
  std::size_t edges() const { return edges_; }
  const std::vector<StencilTerm>& terms() const { return terms_; }
  /// Terms of row i occupy [row_begin(i), row_begin(i + 1)).
  std::size_t row_begin(NodeId i) const { return row_begin_[static_cast<std::size_t>(i)]; }

  /// Sparse matrix with, for each term, -weight*c[edge] at (row, col) and +weight*c[edge]
  /// accumulated on the diagonal.
  template <typename Scalar>
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> assemble(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& edge_coeff) const {
    std::vector<Eigen::Triplet<Scalar>> trip;
    trip.reserve(2 * terms_.size());
    for (const auto& t : terms_) {
      const Scalar c = static_cast<Scalar>(t.weight) * edge_coeff(static_cast<Eigen::Index>(t.edge));
      trip.emplace_back(t.row, t.col, -c);
      trip.emplace_back(t.row, t.row, c);
    }
    Eigen::SparseMatrix<Scalar, Eigen::RowMajor> m(nodes_, nodes_);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return m;
  }

  /// out = D x evaluated as sum_terms weight*c[edge]*(x_row - x_col), row by row.
  /// Constant columns of x give exactly zero. x may stack several graphs row-wise
  /// (rows = B * nodes); each block is treated independently.
  template <typename Scalar, typename In>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> apply(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& edge_coeff, const Eigen::MatrixBase<In>& x) const {
    if (nodes_ == 0 || x.rows() % nodes_ != 0) throw ShapeError("stencil apply: row count mismatch");
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(x.rows(), x.cols());
    const Eigen::Index blocks = x.rows() / nodes_;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const Eigen::Index off = b * nodes_;
      for (const auto& t : terms_) {
        const Scalar c = static_cast<Scalar>(t.weight) * edge_coeff(static_cast<Eigen::Index>(t.edge));
        out.row(off + t.row) += c * (x.row(off + t.row) - x.row(off + t.col));
      }
    }
    return out;
  }

 private:
  Eigen::Index nodes_ = 0;
  std::size_t edges_ = 0;
  std::vector<StencilTerm> terms_;
  std::vector<std::size_t> row_begin_;
};

enum class OperatorKind { base, d1, d2 };

/// Sparse upwind difference operator (D-hat, D1 or D2) over a graph.
///
/// Every row sums to zero. Per-edge coefficients are 1 (base), 1/dx (d1) or
/// dz/dx (d2); the spacing vectors they were built from are kept.
template <typename Scalar = double>
class DifferenceOperator {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Sparse = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  DifferenceOperator(OperatorKind kind, UpwindStencil stencil, Vector edge_coeff,
                     std::optional<Vector> dx = std::nullopt, std::optional<Vector> dz = std::nullopt)
      : kind_(kind),
        stencil_(std::move(stencil)),
        edge_coeff_(std::move(edge_coeff)),
        dx_(std::move(dx)),
        dz_(std::move(dz)) {
    if (edge_coeff_.size() != static_cast<Eigen::Index>(stencil_.edges())) {
      throw ShapeError("one coefficient per edge required");
    }
    matrix_ = stencil_.template assemble<Scalar>(edge_coeff_);
  }

  OperatorKind kind() const { return kind_; }
  Eigen::Index size() const { return stencil_.nodes(); }
  const UpwindStencil& stencil() const { return stencil_; }
  const Vector& edge_coefficients() const { return edge_coeff_; }
  const std::optional<Vector>& per_edge_dx() const { return dx_; }
  const std::optional<Vector>& per_edge_dz() const { return dz_; }
  const Sparse& matrix() const { return matrix_; }
  Dense dense() const { return Dense(matrix_); }

  /// (row, col, value) entries in row-major order.
  std::vector<Eigen::Triplet<Scalar>> entries() const {
    std::vector<Eigen::Triplet<Scalar>> out;
    for (Eigen::Index r = 0; r < matrix_.outerSize(); ++r) {
      for (typename Sparse::InnerIterator it(matrix_, r); it; ++it) out.emplace_back(it.row(), it.col(), it.value());
    }
    return out;
  }

  /// Row-by-row difference form; exact zero on constant input.
  template <typename In>
  Dense apply(const Eigen::MatrixBase<In>& x) const {
    return stencil_.template apply<Scalar>(edge_coeff_, x);
  }

  template <typename In>
  auto operator*(const Eigen::MatrixBase<In>& x) const {
    if (x.rows() != size()) throw ShapeError("operator applied to a vector of the wrong length");
    return matrix_ * x;
  }

 private:
  OperatorKind kind_;
  UpwindStencil stencil_;
  Vector edge_coeff_;
  std::optional<Vector> dx_;
  std::optional<Vector> dz_;
  Sparse matrix_;
};

template <typename Scalar = double>
DifferenceOperator<Scalar> build_base_difference(const DirectedGraph& g) {
  using Vector = typename DifferenceOperator<Scalar>::Vector;
  return DifferenceOperator<Scalar>(OperatorKind::base, UpwindStencil(g),
                                    Vector::Ones(static_cast<Eigen::Index>(g.num_edges())));
}

namespace detail {

template <typename Scalar>
void check_spacing(const DirectedGraph& g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dx) {
  if (dx.size() != static_cast<Eigen::Index>(g.num_edges())) throw ShapeError("one dx per edge required");
  for (Eigen::Index e = 0; e < dx.size(); ++e) {
    if (!(dx(e) > Scalar(0)) || !std::isfinite(static_cast<double>(dx(e)))) {
      throw ValueError("dx must be positive and finite (edge " + std::to_string(e) + ")");
    }
  }
}

}  // namespace detail

/// D1 = (1/dx) D-hat, with dx taken per edge.
template <typename Scalar = double>
DifferenceOperator<Scalar> build_d1(const DirectedGraph& g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dx) {
  detail::check_spacing(g, dx);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coeff = dx.cwiseInverse();
  return DifferenceOperator<Scalar>(OperatorKind::d1, UpwindStencil(g), std::move(coeff), dx);
}

/// D2 = (dz/dx) D-hat, with dz and dx taken per edge. dz may have either sign.
template <typename Scalar = double>
DifferenceOperator<Scalar> build_d2(const DirectedGraph& g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dx,
                                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dz) {
  detail::check_spacing(g, dx);
  if (dz.size() != dx.size()) throw ShapeError("one dz per edge required");
  if (!dz.allFinite()) throw ValueError("dz must be finite");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coeff = dz.cwiseQuotient(dx);
  return DifferenceOperator<Scalar>(OperatorKind::d2, UpwindStencil(g), std::move(coeff), dx, dz);
}

/// (I + alpha D) mu.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> apply_composite(const Eigen::MatrixBase<Derived>& mu, Scalar alpha,
                                                          const DifferenceOperator<Scalar>& D) {
  if (mu.rows() != D.size() || mu.cols() != 1) throw ShapeError("apply_composite: dimension mismatch");
  return mu + alpha * (D.matrix() * mu);
}

// ---------------------------------------------------------------------------
// Frequency response
// ---------------------------------------------------------------------------

struct FrequencyResponse {
  double omega;
  double magnitude;
};

namespace detail {
inline void check_omega(double omega) {
  if (!(omega >= 0.0 && omega <= std::numbers::pi)) throw ValueError("omega must lie in [0, pi]");
}
}  // namespace detail

/// |1 - e^{-j omega}| = 2 |sin(omega / 2)|.
inline double closed_form_diff_magnitude(double omega) {
  detail::check_omega(omega);
  return 2.0 * std::abs(std::sin(omega / 2.0));
}

/// |1 + alpha (1 - e^{-j omega})|.
inline double closed_form_composite_magnitude(double omega, double alpha) {
  detail::check_omega(omega);
  const double re = 1.0 + alpha - alpha * std::cos(omega);
  const double im = alpha * std::sin(omega);
  return std::sqrt(re * re + im * im);
}

/// Directed ring 0 -> 1 -> ... -> n-1 -> 0 (no edge features).
inline DirectedGraph directed_ring(std::size_t n) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    edges.push_back({static_cast<NodeId>(i), static_cast<NodeId>((i + 1) % n)});
  }
  return DirectedGraph(n, std::move(edges), Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0));
}

/// Directed chain 0 -> 1 -> ... -> n-1 (no edge features).
inline DirectedGraph directed_path(std::size_t n) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({static_cast<NodeId>(i), static_cast<NodeId>(i + 1)});
  return DirectedGraph(n, std::move(edges), Eigen::MatrixXd(static_cast<Eigen::Index>(n > 0 ? n - 1 : 0), 0));
}

namespace detail {

inline void check_ring_frequency(std::size_t ring_size, double omega) {
  if (ring_size < 8) throw ValueError("ring_size must be at least 8");
  check_omega(omega);
  const double k = omega * static_cast<double>(ring_size) / (2.0 * std::numbers::pi);
  if (std::abs(k - std::round(k)) > 1e-9) {
    throw ValueError("omega must be an integer multiple of 2*pi/ring_size");
  }
}

// Amplitude ratio of `op` applied to the sampled complex exponential e^{j omega n}.
template <typename Op>
double ring_gain(std::size_t ring_size, double omega, Op&& op) {
  const auto n = static_cast<Eigen::Index>(ring_size);
  Eigen::MatrixXd x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = std::cos(omega * static_cast<double>(i));
    x(i, 1) = std::sin(omega * static_cast<double>(i));
  }
  const Eigen::MatrixXd y = op(x);
  return std::sqrt(y.squaredNorm() / x.squaredNorm());
}

}  // namespace detail

/// Measured magnitude of I + alpha D-hat on a directed ring at an admissible frequency.
inline FrequencyResponse empirical_response(std::size_t ring_size, double omega, double alpha) {
  detail::check_ring_frequency(ring_size, omega);
  const auto D = build_base_difference<double>(directed_ring(ring_size));
  const double mag = detail::ring_gain(ring_size, omega, [&](const Eigen::MatrixXd& x) {
    return Eigen::MatrixXd(x + alpha * (D.matrix() * x));
  });
  return {omega, mag};
}

/// Measured magnitude of D-hat alone on a directed ring.
inline FrequencyResponse empirical_difference_response(std::size_t ring_size, double omega) {
  detail::check_ring_frequency(ring_size, omega);
  const auto D = build_base_difference<double>(directed_ring(ring_size));
  const double mag = detail::ring_gain(ring_size, omega,
                                       [&](const Eigen::MatrixXd& x) { return Eigen::MatrixXd(D.matrix() * x); });
  return {omega, mag};
}

/// Admissible frequencies 2*pi*k/ring_size within [0, pi].
inline std::vector<double> ring_frequencies(std::size_t ring_size) {
  std::vector<double> out;
  for (std::size_t k = 0; 2 * k <= ring_size; ++k) {
    out.push_back(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(ring_size));
  }
  return out;
}

}  // namespace phynfp
