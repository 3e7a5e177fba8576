#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phynfp/cli.hpp"
#include "phynfp/traineval.hpp"
#include "river_table.hpp"
#include "test_support.hpp"

using namespace phynfp;
using phynfp::testing::random_matrix;

namespace {

double round_to(double x, int digits) {
  const double s = std::pow(10.0, digits);
  return std::round(x * s) / s;
}

// Series whose value at (t, i) is 1000 t + i, one variable; targets are -(1000 t + i).
std::pair<NodeSeries, Targets> ramp(Eigen::Index steps, Eigen::Index nodes) {
  NodeSeries s;
  s.steps = steps;
  s.nodes = nodes;
  s.values.resize(steps * nodes, 1);
  Targets y;
  y.values.resize(steps, nodes);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index i = 0; i < nodes; ++i) {
      s.values(t * nodes + i, 0) = 1000.0 * static_cast<double>(t) + static_cast<double>(i);
      y.values(t, i) = -s.values(t * nodes + i, 0);
    }
  }
  return {s, y};
}

ModelConfig tiny(Variant v, int window, int horizon, int q) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.layers = 1;
  cfg.hidden = 4;
  cfg.window = window;
  cfg.horizon = horizon;
  cfg.edge_features = q;
  cfg.phi_hidden = 3;
  cfg.seed = 5;
  return cfg;
}

// Linear benchmark on a 4-node path: y[t + 1] = A_norm x[t], where A_norm averages each
// node with its upstream neighbour.
std::pair<NodeSeries, Targets> linear_benchmark(const DirectedGraph& g, Eigen::Index steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index n = static_cast<Eigen::Index>(g.num_nodes());
  NodeSeries s;
  s.steps = steps;
  s.nodes = n;
  s.values = random_matrix(steps * n, 1, rng);
  Targets y;
  y.values = Eigen::MatrixXd::Zero(steps, n);
  const Eigen::MatrixXd a = Eigen::MatrixXd(normalized_adjacency(g));
  for (Eigen::Index t = 1; t < steps; ++t) y.values.row(t) = (a * s.frame(t - 1).col(0)).transpose();
  return {s, y};
}

}  // namespace

TEST(Windows, SampleCounts) {
  {
    auto [s, y] = ramp(30, 2);
    EXPECT_EQ(make_windows(s, y, 24, 6, {0, 30}).samples, 1);
  }
  {
    auto [s, y] = ramp(29, 2);
    EXPECT_THROW(make_windows(s, y, 24, 6, {0, 29}), ValueError);
  }
  {
    auto [s, y] = ramp(100, 2);
    EXPECT_EQ(make_windows(s, y, 24, 6, {0, 100}).samples, 71);
  }
}

TEST(Windows, ContentAlignment) {
  auto [s, y] = ramp(40, 3);
  const auto set = make_windows(s, y, 4, 2, {10, 40});
  // First sample: window covers t = 10..13, target at t = 15.
  EXPECT_EQ(set.t_end.front(), 13);
  EXPECT_EQ(set.inputs(2, 0), 10002.0);
  EXPECT_EQ(set.inputs(2, 3), 13002.0);
  EXPECT_EQ(set.targets(2), -15002.0);
  EXPECT_EQ(set.samples, 30 - 4 - 2 + 1);
  // The last target never leaves the range.
  EXPECT_EQ(set.targets(set.targets.size() - 1), -(39000.0 + 2.0));
}

TEST(Split, ChronologicalAndDisjoint) {
  const auto sp = chronological_split(1000);
  EXPECT_EQ(sp.train.begin, 0);
  EXPECT_EQ(sp.train.end, sp.val.begin);
  EXPECT_EQ(sp.val.end, sp.test.begin);
  EXPECT_EQ(sp.test.end, 1000);
  EXPECT_EQ(sp.val.size(), 150);
  EXPECT_EQ(sp.test.size(), 150);
}

TEST(Normalizer, RoundTripAndConstantColumns) {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd x = random_matrix(50, 3, rng, -4, 9);
  x.col(1).setConstant(2.5);
  const auto nz = Normalizer::fit(x);
  ASSERT_EQ(nz.constant_columns.size(), 1u);
  EXPECT_EQ(nz.constant_columns[0], 1);
  const Eigen::MatrixXd z = nz.apply(x);
  EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR((z.col(0).array() - z.col(0).mean()).square().mean(), 1.0, 1e-12);
  EXPECT_TRUE(z.col(1).isZero(0.0));
  EXPECT_LT((nz.invert(z) - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PrepareData, StatisticsUseTrainingRangeOnly) {
  auto [s, y] = ramp(200, 2);
  const auto d = prepare_data(s, y, 4, 2);
  // Train covers t < 140: the feature mean is the mean of 1000 t + i over that range.
  EXPECT_NEAR(d.features.mean(0), 1000.0 * 139.0 / 2.0 + 0.5, 1e-9);
  EXPECT_NEAR(d.target.mean(0), -(1000.0 * 139.0 / 2.0 + 0.5), 1e-9);
  EXPECT_LT(d.train.t_end.back() + 2, d.split.train.end);
  EXPECT_GE(d.val.t_end.front() - 3, d.split.val.begin);
  EXPECT_GE(d.test.t_end.front() - 3, d.split.test.begin);
}

TEST(EvaluateMse, HandValues) {
  const DirectedGraph g(2, {{0, 1}}, Eigen::MatrixXd::Zero(1, 0));
  const GraphContext ctx(g);
  FluxModel m(tiny(Variant::gcn, 1, 1, 0));
  for (auto& p : m.parameters()) p.value.setZero();
  SampleSet one;
  one.samples = 1;
  one.nodes = 2;
  one.inputs = Eigen::MatrixXd::Zero(2, 1);
  one.targets = Eigen::Vector2d(1.0, -1.0);
  EXPECT_DOUBLE_EQ(evaluate_mse(m, ctx, one), 1.0);
  one.targets.setZero();
  EXPECT_EQ(evaluate_mse(m, ctx, one), 0.0);
  SampleSet empty;
  empty.nodes = 2;
  EXPECT_THROW(evaluate_mse(m, ctx, empty), ValueError);
}

TEST(EvaluateMse, ZeroPredictorOnStandardizedTargets) {
  const DirectedGraph g(3, {{0, 1}, {1, 2}}, Eigen::MatrixXd::Zero(2, 0));
  const GraphContext ctx(g);
  auto [s, y] = linear_benchmark(g, 400, 2);
  const auto d = prepare_data(s, y, 2, 1);
  FluxModel m(tiny(Variant::gcn, 2, 1, 0));
  for (auto& p : m.parameters()) p.value.setZero();
  EXPECT_NEAR(evaluate_mse(m, ctx, d.test), d.test.targets.squaredNorm() / static_cast<double>(d.test.targets.size()),
              1e-12);
  EXPECT_NEAR(evaluate_mse(m, ctx, d.train), d.train.targets.squaredNorm() / static_cast<double>(d.train.targets.size()),
              1e-12);
}

TEST(DirectionSensitivity, WorkedExamples) {
  EXPECT_NEAR(direction_sensitivity(0.0801, 0.0906), 0.0105, 1e-12);
  EXPECT_EQ(direction_sensitivity(0.3, 0.3), 0.0);
  EXPECT_NEAR(direction_sensitivity(0.1224, 0.1149), -0.0075, 1e-12);
  EXPECT_NEAR(relative_ds(0.0105, 0.0063), -0.40, 1e-12);
  EXPECT_NEAR(relative_ds(0.0105, 0.0031), -0.705, 1e-3);
  EXPECT_EQ(relative_ds(0.02, 0.02), 0.0);
  EXPECT_THROW(relative_ds(0.0, 0.1), ValueError);
}

TEST(DirectionSensitivity, TabulatedRiverRows) {
  using phynfp::testing::kRiverRows;
  const double ref = direction_sensitivity(kRiverRows[0].forward, kRiverRows[0].reverse);
  for (const auto& row : kRiverRows) {
    const auto report = make_ds_report(row.forward, row.reverse, row.reference ? std::nullopt : std::optional(ref));
    EXPECT_DOUBLE_EQ(round_to(report.ds, 4), row.ds) << row.model;
    if (!row.reference) {
      ASSERT_TRUE(report.rds.has_value());
      EXPECT_DOUBLE_EQ(round_to(100.0 * *report.rds, 1), row.rds_percent) << row.model;
    }
  }
}

TEST(Perturbation, ZeroDeltaGivesZeroResponse) {
  const auto g = directed_path(6);
  const GraphContext ctx(g);
  std::mt19937_64 rng(3);
  SampleSet set;
  set.samples = 5;
  set.nodes = 6;
  set.inputs = random_matrix(30, 3, rng);
  set.targets = Eigen::VectorXd::Zero(30);
  const FluxModel m(tiny(Variant::river, 3, 1, 0));
  const auto r = perturbation_response(m, ctx, set, 0, 0.0);
  EXPECT_TRUE(r.mean.isZero(0.0));
  EXPECT_TRUE(r.std.isZero(0.0));
}

TEST(Perturbation, ResponseStaysWithinStencilReach) {
  const auto g = directed_path(7);
  const GraphContext ctx(g);
  std::mt19937_64 rng(4);
  SampleSet set;
  set.samples = 4;
  set.nodes = 7;
  set.inputs = random_matrix(28, 3, rng);
  set.targets = Eigen::VectorXd::Zero(28);
  auto cfg = tiny(Variant::river, 3, 1, 0);
  cfg.layers = 2;
  const FluxModel m(cfg);
  const auto r = perturbation_response(m, ctx, set, 2, 0.5);
  // Node 2 reaches 3 and 4 through two upwind layers; nothing else moves.
  for (Eigen::Index i : {2, 3, 4}) EXPECT_NE(r.mean(i), 0.0) << i;
  for (Eigen::Index i : {0, 1, 5, 6}) EXPECT_EQ(r.mean(i), 0.0) << i;
  EXPECT_THROW(perturbation_response(m, ctx, set, 7, 0.5), IndexError);
}

TEST(TemporalGradient, HandValues) {
  Eigen::MatrixXd x(2, 2);
  x << 0.0, 3.0, 2.0, 3.0;
  const auto tg = temporal_gradient(x);
  EXPECT_DOUBLE_EQ(tg(0), 1.0);
  EXPECT_EQ(tg(1), 0.0);
  EXPECT_THROW(temporal_gradient(Eigen::MatrixXd::Zero(1, 2)), ValueError);
  Eigen::Vector3d stat(1.0, 2.0, 3.0);
  EXPECT_DOUBLE_EQ(cross_node_spread(stat), 2.0 / 3.0);
}

TEST(TemporalGradient, OneEntryPerLayer) {
  const auto g = directed_path(4);
  const GraphContext ctx(g);
  std::mt19937_64 rng(6);
  SampleSet set;
  set.samples = 10;
  set.nodes = 4;
  set.inputs = random_matrix(40, 2, rng);
  set.targets = Eigen::VectorXd::Zero(40);
  auto cfg = tiny(Variant::gcn, 2, 1, 0);
  cfg.layers = 3;
  const auto tg = layer_temporal_gradients(FluxModel(cfg), ctx, set);
  ASSERT_EQ(tg.size(), 4u);
  for (const auto& v : tg) EXPECT_EQ(v.size(), 4);
}

TEST(TemporalGradient, GcnSpreadShrinksWithDepthOnRiverPreset) {
  const auto cfg = cli::load_config(std::filesystem::path(PHYNFP_PRESET_DIR) / "river-small.json",
                                    {"simulation.steps=800", "model.variant=gcn", "train.epochs=10"});
  const auto data = cli::simulate_from_config(cfg);
  const auto prepared = cli::prepare_from_config(cfg, data);
  const GraphContext ctx(data.graph);
  FluxModel model(cli::model_config(cfg, static_cast<int>(data.series.variables()),
                                    static_cast<int>(data.graph.feature_width())));
  train(model, ctx, prepared.train, prepared.val, cli::train_config(cfg));
  const auto tg = layer_temporal_gradients(model, ctx, prepared.test);
  ASSERT_EQ(tg.size(), 4u);
  for (std::size_t l = 1; l < tg.size(); ++l) {
    EXPECT_LE(cross_node_spread(tg[l]), cross_node_spread(tg[l - 1])) << "layer " << l;
  }
}

TEST(Train, ZeroEpochsLeavesModel) {
  const auto g = directed_path(4);
  const GraphContext ctx(g);
  auto [s, y] = linear_benchmark(g, 100, 1);
  const auto d = prepare_data(s, y, 2, 1);
  FluxModel m(tiny(Variant::river, 2, 1, 0));
  const auto before = m.parameters();
  TrainConfig tc;
  tc.epochs = 0;
  const auto h = train(m, ctx, d.train, d.val, tc);
  EXPECT_EQ(h.epochs(), 0u);
  EXPECT_TRUE(h.delta_t.empty());
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(m.parameters()[k].value, before[k].value);
}

TEST(Train, GcnFitsLinearBenchmark) {
  const auto g = directed_path(4);
  const GraphContext ctx(g);
  auto [s, y] = linear_benchmark(g, 400, 7);
  const auto d = prepare_data(s, y, 2, 1);
  FluxModel m(tiny(Variant::gcn, 2, 1, 0));
  TrainConfig tc;
  tc.epochs = 200;
  tc.patience = 200;
  tc.lr = 1e-2;
  tc.seed = 3;
  train(m, ctx, d.train, d.val, tc);
  const double var = (d.train.targets.array() - d.train.targets.mean()).square().mean();
  EXPECT_LT(evaluate_mse(m, ctx, d.train), 0.1 * var);
}

TEST(Train, DeterministicHistoryAndBestRestore) {
  const auto g = directed_path(4);
  const GraphContext ctx(g);
  auto [s, y] = linear_benchmark(g, 200, 9);
  const auto d = prepare_data(s, y, 2, 1);
  TrainConfig tc;
  tc.epochs = 15;
  tc.lr = 5e-3;
  tc.seed = 11;
  FluxModel a(tiny(Variant::river, 2, 1, 0)), b(tiny(Variant::river, 2, 1, 0));
  const auto ha = train(a, ctx, d.train, d.val, tc);
  const auto hb = train(b, ctx, d.train, d.val, tc);
  EXPECT_EQ(ha.train_loss, hb.train_loss);
  EXPECT_EQ(ha.val_loss, hb.val_loss);
  EXPECT_EQ(ha.delta_t, hb.delta_t);
  EXPECT_EQ(ha.best_epoch, hb.best_epoch);
  ASSERT_EQ(ha.delta_t.size(), ha.epochs());
  const auto best = static_cast<std::size_t>(ha.best_epoch);
  EXPECT_EQ(*std::min_element(ha.val_loss.begin(), ha.val_loss.end()), ha.val_loss[best]);
  EXPECT_NEAR(evaluate_mse(a, ctx, d.val), ha.val_loss[best], 1e-12);
  EXPECT_DOUBLE_EQ(a.delta_t(), ha.delta_t[best]);
}

TEST(Train, DivergenceReportsEpoch) {
  const auto g = directed_path(4);
  const GraphContext ctx(g);
  auto [s, y] = linear_benchmark(g, 100, 1);
  auto d = prepare_data(s, y, 2, 1);
  d.train.targets(0) = std::numeric_limits<double>::quiet_NaN();
  FluxModel m(tiny(Variant::gcn, 2, 1, 0));
  TrainConfig tc;
  tc.epochs = 3;
  try {
    train(m, ctx, d.train, d.val, tc);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergedError& e) {
    EXPECT_EQ(e.epoch(), 0u);
  }
}
