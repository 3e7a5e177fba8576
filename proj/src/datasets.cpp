#include "phynfp/datasets.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "phynfp/errors.hpp"

namespace phynfp {

void InflowSpec::validate() const {
  if (!(period > 0.0)) throw ConfigError("inflow period must be positive");
  if (!(ar_sigma >= 0.0)) throw ConfigError("inflow ar_sigma must be non-negative");
  if (!(std::abs(ar_coef) < 1.0)) throw ConfigError("inflow ar_coef must lie in (-1, 1)");
  if (!(min <= max)) throw ConfigError("inflow min must not exceed max");
}

std::vector<NodeId> headwaters(const DirectedGraph& g) {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < static_cast<NodeId>(g.num_nodes()); ++i) {
    if (g.upstream(i).empty()) out.push_back(i);
  }
  return out;
}

Eigen::VectorXd bed_elevation(const DirectedGraph& g, const Eigen::VectorXd& drop) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (drop.size() != static_cast<Eigen::Index>(g.num_edges())) throw ShapeError("one drop per edge required");
  // Kahn's algorithm on the reversed graph: sinks first.
  std::vector<std::size_t> pending(static_cast<std::size_t>(n));
  std::vector<NodeId> ready;
  for (NodeId i = 0; i < n; ++i) {
    pending[static_cast<std::size_t>(i)] = g.downstream(i).size();
    if (pending[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  std::size_t done = 0;
  while (!ready.empty()) {
    const NodeId i = ready.back();
    ready.pop_back();
    ++done;
    const auto down = g.downstream(i);
    if (!down.empty()) {
      double sum = 0.0;
      for (const auto& nb : down) sum += z(nb.node) + drop(static_cast<Eigen::Index>(nb.edge));
      z(i) = sum / static_cast<double>(down.size());
    }
    for (const auto& nb : g.upstream(i)) {
      if (--pending[static_cast<std::size_t>(nb.node)] == 0) ready.push_back(nb.node);
    }
  }
  if (done != static_cast<std::size_t>(n)) throw ValueError("bed elevation requires an acyclic graph");
  return z;
}

Eigen::MatrixXd inflow_series(const InflowSpec& spec, std::size_t steps, std::size_t forced, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(steps);
  const auto cols = static_cast<Eigen::Index>(forced);
  Eigen::MatrixXd v(rows, cols);
  const double innovation = spec.ar_sigma * std::sqrt(1.0 - spec.ar_coef * spec.ar_coef);
  for (Eigen::Index k = 0; k < cols; ++k) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(std::max<Eigen::Index>(cols, 1));
    double ar = spec.ar_sigma * noise(rng);
    for (Eigen::Index t = 0; t < rows; ++t) {
      ar = spec.ar_coef * ar + innovation * noise(rng);
      const double wave = spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.period + phase);
      v(t, k) = std::clamp(spec.base + wave + ar, spec.min, spec.max);
    }
  }
  return v;
}

namespace {

constexpr std::uint64_t kInflowStream = 0xA5A5'5A5A'0F0F'F0F0ULL;

Dataset drop_burn_in(const DirectedGraph& g, Simulation sim, std::size_t burn_in) {
  const Eigen::Index n = sim.observed.nodes;
  const Eigen::Index b = static_cast<Eigen::Index>(burn_in);
  Dataset d;
  d.graph = g;
  d.cfl = sim.cfl;
  d.series = std::move(sim.observed);
  d.series.steps -= b;
  d.series.values = d.series.values.bottomRows(d.series.steps * n).eval();
  d.targets.values = sim.targets.values.bottomRows(d.series.steps).eval();
  return d;
}

}  // namespace

Dataset generate_river(const DirectedGraph& g, RiverScenario sc) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  sc.sim.dx = g.edge_features().col(g.feature_index(sc.dx_feature));
  const Eigen::VectorXd drop = g.edge_features().col(g.feature_index(sc.dz_feature));
  if (sc.inflow_nodes.empty()) sc.inflow_nodes = headwaters(g);
  const std::size_t total = sc.sim.steps + sc.burn_in;

  RiverState<double> init;
  init.u = Eigen::VectorXd::Constant(n, sc.initial_u);
  init.z = bed_elevation(g, drop);
  init.g_const = sc.gravity;

  Forcing forcing{sc.inflow_nodes, inflow_series(sc.inflow, total, sc.inflow_nodes.size(), sc.sim.seed ^ kInflowStream)};
  SimConfig cfg = sc.sim;
  cfg.steps = total;
  return drop_burn_in(g, simulate(init, g, cfg, &forcing), sc.burn_in);
}

Dataset generate_traffic(const DirectedGraph& g, TrafficScenario sc) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (sc.inflow_nodes.empty()) throw ConfigError("traffic scenario needs at least one inflow node");
  sc.sim.dx = g.edge_features().col(g.feature_index(sc.dx_feature));
  const std::size_t total = sc.sim.steps + sc.burn_in;

  TrafficState<double> init;
  init.rho = Eigen::VectorXd::Constant(n, sc.initial_rho);
  init.u = Eigen::VectorXd::Constant(n, sc.initial_u);

  Forcing forcing{sc.inflow_nodes, inflow_series(sc.inflow, total, sc.inflow_nodes.size(), sc.sim.seed ^ kInflowStream)};
  SimConfig cfg = sc.sim;
  cfg.steps = total;
  return drop_burn_in(g, simulate(init, g, cfg, &forcing), sc.burn_in);
}

}  // namespace phynfp
