#include "phynfp/traineval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "phynfp/errors.hpp"

namespace phynfp {

Normalizer Normalizer::fit(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw ValueError("cannot fit a normalizer on zero rows");
  Normalizer n;
  n.mean = x.colwise().mean();
  n.std.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - n.mean(c)).square().mean();
    if (var > 0.0) {
      n.std(c) = std::sqrt(var);
    } else {
      n.std(c) = 1.0;
      n.constant_columns.push_back(c);
    }
  }
  return n;
}

Eigen::MatrixXd Normalizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw ShapeError("normalizer column count mismatch");
  return (x.rowwise() - mean).array().rowwise() / std.array();
}

Eigen::MatrixXd Normalizer::invert(const Eigen::MatrixXd& z) const {
  if (z.cols() != mean.size()) throw ShapeError("normalizer column count mismatch");
  return (z.array().rowwise() * std.array()).matrix().rowwise() + mean;
}

Split chronological_split(Eigen::Index steps, double train_fraction, double val_fraction) {
  if (steps < 3) throw ValueError("series too short to split");
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || train_fraction + val_fraction >= 1.0) {
    throw ValueError("split fractions must be positive and leave room for a test range");
  }
  const auto n_train = static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(steps)));
  const auto n_val = static_cast<Eigen::Index>(std::floor(val_fraction * static_cast<double>(steps)));
  Split s;
  s.train = {0, n_train};
  s.val = {n_train, n_train + n_val};
  s.test = {n_train + n_val, steps};
  return s;
}

SampleSet make_windows(const NodeSeries& series, const Targets& targets, int window, int horizon,
                       const TimeRange& range) {
  if (window < 1 || horizon < 1) throw ValueError("window and horizon must be >= 1");
  if (targets.values.cols() != series.nodes || targets.steps() != series.steps) {
    throw ShapeError("targets and series disagree on shape");
  }
  if (range.begin < 0 || range.end > series.steps || range.begin > range.end) {
    throw IndexError("time range outside the series");
  }
  const Eigen::Index count = range.size() - window - horizon + 1;
  if (count < 1) {
    throw ValueError("series of " + std::to_string(range.size()) + " steps is shorter than W + n = " +
                     std::to_string(window + horizon));
  }
  const Eigen::Index n = series.nodes;
  const Eigen::Index p = series.variables();
  SampleSet set;
  set.samples = count;
  set.nodes = n;
  set.inputs.resize(count * n, window * p);
  set.targets.resize(count * n);
  for (Eigen::Index s = 0; s < count; ++s) {
    const Eigen::Index t = range.begin + window - 1 + s;
    set.inputs.middleRows(s * n, n) = flatten_window(series, t, window);
    set.targets.segment(s * n, n) = targets.values.row(t + horizon).transpose();
    set.t_end.push_back(t);
  }
  return set;
}

PreparedData prepare_data(const NodeSeries& series, const Targets& targets, int window, int horizon,
                          double train_fraction, double val_fraction) {
  PreparedData d;
  d.split = chronological_split(series.steps, train_fraction, val_fraction);
  const Eigen::Index n = series.nodes;
  d.features = Normalizer::fit(series.values.topRows(d.split.train.size() * n));
  Eigen::MatrixXd train_targets = targets.values.topRows(d.split.train.size()).reshaped(Eigen::AutoSize, 1);
  d.target = Normalizer::fit(train_targets);

  NodeSeries zs = series;
  zs.values = d.features.apply(series.values);
  Targets zt;
  zt.values = ((targets.values.array() - d.target.mean(0)) / d.target.std(0)).matrix();

  d.train = make_windows(zs, zt, window, horizon, d.split.train);
  d.val = make_windows(zs, zt, window, horizon, d.split.val);
  d.test = make_windows(zs, zt, window, horizon, d.split.test);
  return d;
}

namespace {

constexpr Eigen::Index kEvalChunk = 256;

std::vector<ad::Parameter> snapshot(const FluxModel& m) { return m.parameters(); }

bool decays(const std::string& name) {
  if (name == "delta_t" || name == "g_hat") return false;
  const auto dot = name.rfind('.');
  return dot == std::string::npos || name.compare(dot + 1, 1, "b") != 0;
}

}  // namespace

double evaluate_mse(const FluxModel& model, const GraphContext& ctx, const SampleSet& samples) {
  if (samples.samples == 0) throw ValueError("cannot evaluate on an empty sample set");
  if (samples.nodes != ctx.nodes()) throw ShapeError("sample node count differs from the graph");
  double sse = 0.0;
  for (Eigen::Index first = 0; first < samples.samples; first += kEvalChunk) {
    const Eigen::Index count = std::min(kEvalChunk, samples.samples - first);
    const Eigen::VectorXd pred = model.predict(ctx, samples.input_block(first, count));
    sse += (pred - samples.target_block(first, count)).squaredNorm();
  }
  return sse / static_cast<double>(samples.samples * samples.nodes);
}

TrainHistory train(FluxModel& model, const GraphContext& ctx, const SampleSet& train_set, const SampleSet& val_set,
                   const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
  if (cfg.batch_size < 0) throw ConfigError("batch_size must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  TrainHistory history;
  if (cfg.epochs == 0) return history;
  if (train_set.samples == 0) throw ValueError("empty training set");

  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  ad::AdamState adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  for (const auto& p : model.parameters()) adam.decay.push_back(decays(p.name));
  const Eigen::Index batch = cfg.batch_size == 0 ? train_set.samples : cfg.batch_size;
  const Eigen::Index n = train_set.nodes;
  const Eigen::Index width = train_set.inputs.cols();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_set.samples));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<ad::Parameter> best = snapshot(model);
  int since_best = 0;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sse = 0.0;
    for (Eigen::Index first = 0; first < train_set.samples; first += batch) {
      const Eigen::Index count = std::min(batch, train_set.samples - first);
      x.resize(count * n, width);
      y.resize(count * n);
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index s = order[static_cast<std::size_t>(first + k)];
        x.middleRows(k * n, n) = train_set.inputs.middleRows(s * n, n);
        y.segment(k * n, n) = train_set.targets.segment(s * n, n);
      }
      ad::Tape tape;
      const auto pass = model.forward(tape, ctx, x);
      const auto loss = ad::mse_loss(pass.prediction, tape.constant(y));
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) throw TrainingDivergedError(epoch);
      sse += value * static_cast<double>(count);
      const auto grads = tape.backward(loss);
      auto ptrs = model.parameter_ptrs();
      std::vector<ad::Matrix> g;
      g.reserve(ptrs.size());
      for (const auto* p : ptrs) g.push_back(grads.of(*p));
      ad::adam_step(ptrs, g, adam);
    }
    const double val = val_set.samples > 0 ? evaluate_mse(model, ctx, val_set) : sse / train_set.samples;
    if (!std::isfinite(val)) throw TrainingDivergedError(epoch);
    history.train_loss.push_back(sse / static_cast<double>(train_set.samples));
    history.val_loss.push_back(val);
    history.delta_t.push_back(model.delta_t());
    if (val < best_val) {
      best_val = val;
      best = snapshot(model);
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.parameters() = std::move(best);
  history.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return history;
}

double direction_sensitivity(double loss_forward, double loss_reverse) { return loss_reverse - loss_forward; }

double relative_ds(double ds_ref, double ds_other) {
  if (ds_ref == 0.0) throw ValueError("relative DS is undefined for a zero reference DS");
  return (ds_other - ds_ref) / ds_ref;
}

DSReport make_ds_report(double loss_forward, double loss_reverse, std::optional<double> ds_reference) {
  if (!std::isfinite(loss_forward) || !std::isfinite(loss_reverse)) throw ValueError("losses must be finite");
  DSReport r;
  r.loss_forward = loss_forward;
  r.loss_reverse = loss_reverse;
  r.ds = direction_sensitivity(loss_forward, loss_reverse);
  if (ds_reference) r.rds = relative_ds(*ds_reference, r.ds);
  return r;
}

PerturbationResponse perturbation_response(const FluxModel& model, const GraphContext& ctx, const SampleSet& samples,
                                           NodeId node, double delta, int flux_variable) {
  if (samples.samples == 0) throw ValueError("cannot perturb an empty sample set");
  if (node < 0 || node >= ctx.nodes()) throw IndexError("perturbed node out of range");
  if (!std::isfinite(delta)) throw ValueError("delta must be finite");
  const int p = model.config().num_features;
  if (flux_variable < 0 || flux_variable >= p) throw IndexError("flux variable out of range");
  const Eigen::Index col = (model.config().window - 1) * p + flux_variable;
  const Eigen::Index n = samples.nodes;

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(n);
  for (Eigen::Index first = 0; first < samples.samples; first += kEvalChunk) {
    const Eigen::Index count = std::min(kEvalChunk, samples.samples - first);
    Eigen::MatrixXd x = samples.input_block(first, count);
    const Eigen::VectorXd clean = model.predict(ctx, x);
    for (Eigen::Index s = 0; s < count; ++s) x(s * n + node, col) += delta;
    const Eigen::VectorXd diff = model.predict(ctx, x) - clean;
    for (Eigen::Index s = 0; s < count; ++s) {
      const auto block = diff.segment(s * n, n);
      sum += block;
      sum_sq += block.cwiseAbs2();
    }
  }
  const double count = static_cast<double>(samples.samples);
  PerturbationResponse r;
  r.mean = sum / count;
  r.std = (sum_sq / count - r.mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  return r;
}

Eigen::VectorXd temporal_gradient(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ValueError("temporal gradient needs at least two steps");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return ((x.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(x.rows())).transpose();
}

std::vector<Eigen::VectorXd> layer_temporal_gradients(const FluxModel& model, const GraphContext& ctx,
                                                      const SampleSet& samples) {
  if (samples.samples < 2) throw ValueError("temporal gradient needs at least two samples");
  const Eigen::Index n = samples.nodes;
  const auto layers = model.layer_embeddings(ctx, samples.inputs);
  std::vector<Eigen::VectorXd> out;
  for (const auto& h : layers) {
    const Eigen::Index d = h.cols();
    Eigen::VectorXd stat = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd series(samples.samples, n);
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index s = 0; s < samples.samples; ++s) series.row(s) = h.col(c).segment(s * n, n).transpose();
      stat += temporal_gradient(series);
    }
    out.push_back(stat / static_cast<double>(d));
  }
  return out;
}

double cross_node_spread(const Eigen::VectorXd& stat) {
  if (stat.size() == 0) throw ValueError("empty statistic");
  return (stat.array() - stat.mean()).square().mean();
}

}  // namespace phynfp
