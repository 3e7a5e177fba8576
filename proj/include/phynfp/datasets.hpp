#pragma once

#include <string>
#include <vector>

#include "phynfp/graph.hpp"
#include "phynfp/pdesim.hpp"

namespace phynfp {

/// Boundary inflow per forced node: base + amplitude * sin(2 pi t / period + phase_k)
/// plus an AR(1) component, clamped to [min, max].
struct InflowSpec {
  double base = 0.6;
  double amplitude = 0.2;
  double period = 150.0;
  double ar_coef = 0.95;
  double ar_sigma = 0.05;
  double min = 0.1;
  double max = 1.5;

  void validate() const;
};

struct RiverScenario {
  SimConfig sim;  // dx is filled from `dx_feature`
  double gravity = 9.81;
  double initial_u = 0.6;
  std::string dx_feature = "length";
  std::string dz_feature = "drop";
  std::vector<NodeId> inflow_nodes;  // empty: every headwater
  InflowSpec inflow;
  std::size_t burn_in = 200;
};

struct TrafficScenario {
  SimConfig sim;
  double initial_rho = 0.3;
  double initial_u = 0.7;
  std::string dx_feature = "length";
  std::vector<NodeId> inflow_nodes;  // required: at least one ramp
  InflowSpec inflow{0.35, 0.15, 120.0, 0.9, 0.04, 0.0, 0.9};
  std::size_t burn_in = 200;
};

struct Dataset {
  DirectedGraph graph;
  NodeSeries series;  // observed (noisy) node variables
  Targets targets;    // clean flux variable
  CflStats cfl;
};

/// Nodes without upstream neighbors.
std::vector<NodeId> headwaters(const DirectedGraph& g);

/// Bed elevation from per-edge drops: sinks sit at 0 and every node is the mean
/// over its downstream edges of (z_dst + drop). Requires an acyclic graph.
Eigen::VectorXd bed_elevation(const DirectedGraph& g, const Eigen::VectorXd& drop);

Eigen::MatrixXd inflow_series(const InflowSpec& spec, std::size_t steps, std::size_t forced, std::uint64_t seed);

Dataset generate_river(const DirectedGraph& g, RiverScenario scenario);
Dataset generate_traffic(const DirectedGraph& g, TrafficScenario scenario);

}  // namespace phynfp
