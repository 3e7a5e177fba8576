#include "phynfp/tensor.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "phynfp/errors.hpp"

namespace phynfp::ad {

const Matrix& Tensor::value() const {
  if (!tape_) throw ContractError("use of an empty tensor handle");
  return tape_->value(id_);
}

bool Tensor::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Matrix Gradients::operator[](const Tensor& t) const {
  const auto id = t.id();
  if (id >= grads_.size()) throw IndexError("tensor does not belong to this tape");
  if (grads_[id].size() == 0) return Matrix::Zero(rows_[id], cols_[id]);
  return grads_[id];
}

Matrix Gradients::of(const Parameter& p) const {
  Matrix total = Matrix::Zero(p.value.rows(), p.value.cols());
  for (const auto& [param, id] : bound_) {
    if (param == &p && grads_[id].size() != 0) total += grads_[id];
  }
  return total;
}

Tensor Tape::push(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) { return push(std::move(value), false); }

Tensor Tape::variable(Matrix value) { return push(std::move(value), true); }

Tensor Tape::parameter(const Parameter& p) {
  auto t = push(p.value, true);
  bound_.emplace_back(&p, t.id());
  return t;
}

Tensor Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("op input is not on this tape");
    needs = needs || nodes_[id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(fn) : BackwardFn{}, needs});
  return Tensor(this, nodes_.size() - 1);
}

Matrix& Tape::grad(std::size_t id) {
  auto& g = grads_[id];
  if (g.size() == 0) g = Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  return g;
}

Gradients Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw ContractError("loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("backward requires a scalar loss");
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.id()] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    if (grads_[i].size() == 0 || !node.backward) continue;
    node.backward(*this, i);
  }
  Gradients out;
  out.rows_.reserve(nodes_.size());
  out.cols_.reserve(nodes_.size());
  for (const auto& node : nodes_) {
    out.rows_.push_back(node.value.rows());
    out.cols_.push_back(node.value.cols());
  }
  out.grads_ = std::move(grads_);
  out.bound_ = bound_;
  grads_.clear();
  return out;
}

namespace {

void same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) throw ContractError("operands on different tapes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

void require_scalar(const Tensor& s, const char* op) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError(std::string(op) + ": expected a 1x1 scalar");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Tensor ewise(Ewise op, const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  same_shape(a, b, "ewise");
  const auto ia = a.id(), ib = b.id();
  Tape& tape = a.tape();
  switch (op) {
    case Ewise::add:
      return tape.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad(ia) += t.grad(self);
        if (t.requires_grad(ib)) t.grad(ib) += t.grad(self);
      });
    case Ewise::sub:
      return tape.record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.grad(ia) += t.grad(self);
        if (t.requires_grad(ib)) t.grad(ib) -= t.grad(self);
      });
    case Ewise::mul:
      return tape.record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
        if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
      });
  }
  throw ContractError("unknown elementwise op");
}

Tensor scale(const Tensor& s, const Tensor& a) {
  same_tape(s, a);
  require_scalar(s, "scale");
  const auto is = s.id(), ia = a.id();
  return a.tape().record(s.value()(0, 0) * a.value(), {is, ia}, [is, ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(is)) t.grad(is)(0, 0) += g.cwiseProduct(t.value(ia)).sum();
    if (t.requires_grad(ia)) t.grad(ia) += t.value(is)(0, 0) * g;
  });
}

Tensor scale(double s, const Tensor& a) {
  const auto ia = a.id();
  return a.tape().record(s * a.value(), {ia}, [ia, s](Tape& t, std::size_t self) { t.grad(ia) += s * t.grad(self); });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  same_tape(a, s);
  require_scalar(s, "add_scalar");
  const auto ia = a.id(), is = s.id();
  Matrix out = a.value().array() + s.value()(0, 0);
  return a.tape().record(std::move(out), {ia, is}, [ia, is](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(is)) t.grad(is)(0, 0) += g.sum();
  });
}

Tensor add_constant(const Tensor& a, double c) {
  const auto ia = a.id();
  Matrix out = a.value().array() + c;
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) { t.grad(ia) += t.grad(self); });
}

Tensor add_bias(const Tensor& a, const Tensor& row) {
  same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_bias: bias must be 1 x cols");
  const auto ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Tensor reciprocal(const Tensor& a) {
  const auto ia = a.id();
  Matrix out = a.value().cwiseInverse();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.grad(ia) -= t.grad(self).cwiseProduct(y.cwiseProduct(y));
  });
}

Tensor activation(Activation kind, const Tensor& a) {
  const auto ia = a.id();
  const Matrix& x = a.value();
  Tape& tape = a.tape();
  switch (kind) {
    case Activation::tanh: {
      Matrix out = x.array().tanh();
      return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.grad(ia).array() += t.grad(self).array() * (1.0 - y.array().square());
      });
    }
    case Activation::softplus: {
      Matrix out = x.unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
      return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix sig = t.value(ia).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        t.grad(ia) += t.grad(self).cwiseProduct(sig);
      });
    }
    case Activation::relu: {
      Matrix out = x.cwiseMax(0.0);
      return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix mask = (t.value(ia).array() > 0.0).cast<double>();
        t.grad(ia) += t.grad(self).cwiseProduct(mask);
      });
    }
  }
  throw ContractError("unknown activation");
}

Tensor sparse_apply(const SparseRowMajor& op, const Tensor& h) {
  const Eigen::Index n = op.cols();
  if (op.rows() != n || n == 0 || h.rows() % n != 0) throw ShapeError("sparse_apply: operator does not match rows");
  const Eigen::Index blocks = h.rows() / n;
  Matrix out(h.rows(), h.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * n, n).noalias() = op * h.value().middleRows(b * n, n);
  const auto ih = h.id();
  // The operator is captured by pointer; it must outlive the backward sweep.
  const SparseRowMajor* opp = &op;
  return h.tape().record(std::move(out), {ih}, [ih, opp, n, blocks](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gh = t.grad(ih);
    for (Eigen::Index b = 0; b < blocks; ++b) gh.middleRows(b * n, n).noalias() += opp->transpose() * g.middleRows(b * n, n);
  });
}

Tensor stencil_apply(const UpwindStencil& stencil, const Tensor& coeff, const Tensor& h) {
  same_tape(coeff, h);
  if (coeff.cols() != 1 || coeff.rows() != static_cast<Eigen::Index>(stencil.edges())) {
    throw ShapeError("stencil_apply: one coefficient per edge required");
  }
  const Eigen::VectorXd c = coeff.value().col(0);
  Matrix out = stencil.apply<double>(c, h.value());
  const auto ic = coeff.id(), ih = h.id();
  const UpwindStencil* sp = &stencil;
  return h.tape().record(std::move(out), {ic, ih}, [ic, ih, sp](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ih);
    const Matrix& cv = t.value(ic);
    const Eigen::Index n = sp->nodes();
    const Eigen::Index blocks = x.rows() / n;
    const bool want_c = t.requires_grad(ic);
    const bool want_h = t.requires_grad(ih);
    Matrix* gc = want_c ? &t.grad(ic) : nullptr;
    Matrix* gh = want_h ? &t.grad(ih) : nullptr;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const Eigen::Index off = b * n;
      for (const auto& term : sp->terms()) {
        const auto e = static_cast<Eigen::Index>(term.edge);
        const auto gr = g.row(off + term.row);
        if (want_c) (*gc)(e, 0) += term.weight * gr.dot(x.row(off + term.row) - x.row(off + term.col));
        if (want_h) {
          const double w = term.weight * cv(e, 0);
          gh->row(off + term.row) += w * gr;
          gh->row(off + term.col) -= w * gr;
        }
      }
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  same_tape(pred, target);
  same_shape(pred, target, "mse_loss");
  const auto ip = pred.id(), it = target.id();
  const double n = static_cast<double>(pred.value().size());
  Matrix out(1, 1);
  out(0, 0) = (pred.value() - target.value()).squaredNorm() / n;
  return pred.tape().record(std::move(out), {ip, it}, [ip, it, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    const Matrix diff = t.value(ip) - t.value(it);
    if (t.requires_grad(ip)) t.grad(ip) += (2.0 * g / n) * diff;
    if (t.requires_grad(it)) t.grad(it) -= (2.0 * g / n) * diff;
  });
}

Tensor detach(const Tensor& a) { return a.tape().constant(a.value()); }

void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: one gradient per parameter required");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  if (!state.decay.empty() && state.decay.size() != params.size()) {
    throw ShapeError("adam_step: decay mask does not match parameters");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->value;
    const auto& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[k].rows() != p.rows() ||
        state.m[k].cols() != p.cols()) {
      throw ShapeError("adam_step: gradient shape differs from parameter '" + params[k]->name + "'");
    }
    if (state.weight_decay > 0.0 && (state.decay.empty() || state.decay[k])) {
      p *= 1.0 - state.lr * state.weight_decay;
    }
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= state.lr * (state.m[k].array() / bc1) / ((state.v[k].array() / bc2).sqrt() + state.eps);
  }
}

namespace {

std::string blob_name(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
  return out + ".f64";
}

}  // namespace

void save_parameters(const std::filesystem::path& dir, std::span<const Parameter* const> params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto* p : params) {
    const auto file = blob_name(p->name);
    manifest.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"file", file}});
    // Row-major on disk.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = p->value;
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  }
  std::ofstream out(dir / "parameters.json");
  if (!out) throw IoError("cannot write parameter manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::vector<Parameter> load_parameters(const std::filesystem::path& dir) {
  std::ifstream in(dir / "parameters.json");
  if (!in) throw IoError("missing parameter manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad parameter manifest: ") + e.what());
  }
  std::vector<Parameter> params;
  for (const auto& entry : manifest) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream blob(path, std::ios::binary);
    if (!blob) throw IoError("missing parameter blob " + path.string());
    blob.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (blob.gcount() != static_cast<std::streamsize>(rm.size() * sizeof(double))) {
      throw SchemaError("truncated parameter blob " + path.string());
    }
    params.push_back({entry.at("name").get<std::string>(), Matrix(rm)});
  }
  return params;
}

}  // namespace phynfp::ad
