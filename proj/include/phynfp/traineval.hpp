#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "phynfp/graph.hpp"
#include "phynfp/models.hpp"

namespace phynfp {

/// Per-column z-score statistics.
struct Normalizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
  std::vector<Eigen::Index> constant_columns;  // columns whose std was reset to 1

  /// Fits on the rows of `x`. Zero-variance columns get std = 1.
  static Normalizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const;
};

/// Half-open range of time steps [begin, end).
struct TimeRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index size() const { return end - begin; }
  bool operator==(const TimeRange&) const = default;
};

struct Split {
  TimeRange train, val, test;
  bool operator==(const Split&) const = default;
};

/// Contiguous chronological split; `val_fraction` and `test_fraction` are rounded down.
Split chronological_split(Eigen::Index steps, double train_fraction = 0.7, double val_fraction = 0.15);

/// Stacked windows: sample s occupies rows s*|V| .. s*|V|+|V|-1.
struct SampleSet {
  Eigen::Index samples = 0;
  Eigen::Index nodes = 0;
  Eigen::MatrixXd inputs;            // (S*|V|) x (W*p)
  Eigen::VectorXd targets;           // S*|V|
  std::vector<Eigen::Index> t_end;   // last window step of each sample

  Eigen::MatrixXd input_block(Eigen::Index first, Eigen::Index count) const {
    return inputs.middleRows(first * nodes, count * nodes);
  }
  Eigen::VectorXd target_block(Eigen::Index first, Eigen::Index count) const {
    return targets.segment(first * nodes, count * nodes);
  }
};

/// Samples X[t-W+1 .. t] -> y[t+n] for every t with the whole span inside `range`.
/// Throws ValueError when the range holds fewer than W + n steps.
SampleSet make_windows(const NodeSeries& series, const Targets& targets, int window, int horizon,
                       const TimeRange& range);

/// Normalized train/val/test sample sets built from raw series.
struct PreparedData {
  Split split;
  Normalizer features;  // one column per node variable
  Normalizer target;    // single column
  SampleSet train, val, test;
};

PreparedData prepare_data(const NodeSeries& series, const Targets& targets, int window, int horizon,
                          double train_fraction = 0.7, double val_fraction = 0.15);

struct TrainConfig {
  int epochs = 500;
  int patience = 20;
  int batch_size = 32;  // samples per step; 0 = full batch
  double lr = 1e-3;
  /// Decoupled decay on weight matrices; the scalars delta_t, g_hat and biases are exempt.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> delta_t;
  int best_epoch = -1;
  double wall_seconds = 0.0;

  std::size_t epochs() const { return train_loss.size(); }
};

/// Mini-batch Adam on MSE. Restores the parameters of the epoch with the lowest
/// validation loss. Throws TrainingDivergedError on a non-finite loss.
TrainHistory train(FluxModel& model, const GraphContext& ctx, const SampleSet& train_set, const SampleSet& val_set,
                   const TrainConfig& cfg);

/// Mean over samples of (1/|V|) * ||y - y_hat||^2. Throws ValueError when empty.
double evaluate_mse(const FluxModel& model, const GraphContext& ctx, const SampleSet& samples);

/// loss_reverse - loss_forward.
double direction_sensitivity(double loss_forward, double loss_reverse);
/// (ds_other - ds_ref) / ds_ref. Throws ValueError when ds_ref is zero.
double relative_ds(double ds_ref, double ds_other);

struct DSReport {
  double loss_forward = 0.0;
  double loss_reverse = 0.0;
  double ds = 0.0;
  std::optional<double> rds;
};

DSReport make_ds_report(double loss_forward, double loss_reverse, std::optional<double> ds_reference = {});

struct PerturbationResponse {
  Eigen::VectorXd mean;  // per node
  Eigen::VectorXd std;   // per node, population
};

/// Adds `delta` to variable `flux_variable` of `node` at the last step of every
/// window and reports the change of every node's prediction.
PerturbationResponse perturbation_response(const FluxModel& model, const GraphContext& ctx, const SampleSet& samples,
                                           NodeId node, double delta, int flux_variable = 0);

/// Per-column population variance over rows: `x` is steps x nodes.
Eigen::VectorXd temporal_gradient(const Eigen::MatrixXd& x);

/// For each layer l = 0..L, the per-node temporal gradient of h^l averaged over
/// channels, using the samples as consecutive time steps.
std::vector<Eigen::VectorXd> layer_temporal_gradients(const FluxModel& model, const GraphContext& ctx,
                                                      const SampleSet& samples);

/// Population variance of a per-node statistic across nodes.
double cross_node_spread(const Eigen::VectorXd& stat);

}  // namespace phynfp
