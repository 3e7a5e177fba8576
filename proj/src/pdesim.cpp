#include "phynfp/pdesim.hpp"

#include <Eigen/SparseLU>
#include <complex>
#include <numbers>
#include <random>
#include <unsupported/Eigen/FFT>

namespace phynfp {

void SimConfig::validate(const DirectedGraph& g) const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValueError("dt must be positive");
  if (steps == 0) throw ValueError("steps must be at least 1");
  if (!(nu >= 0.0)) throw ValueError("nu must be non-negative");
  if (!(noise_sigma >= 0.0)) throw ValueError("noise_sigma must be non-negative");
  if (dx.size() != static_cast<Eigen::Index>(g.num_edges())) throw ShapeError("one dx per edge required");
  if (!((dx.array() > 0.0).all()) || !dx.allFinite()) throw ValueError("dx must be positive");
}

namespace {

void check_forcing(const Forcing* forcing, const DirectedGraph& g, const SimConfig& cfg) {
  if (!forcing) return;
  if (forcing->values.cols() != static_cast<Eigen::Index>(forcing->nodes.size()) ||
      forcing->values.rows() < static_cast<Eigen::Index>(cfg.steps)) {
    throw ShapeError("forcing must provide one value per step and forced node");
  }
  for (auto n : forcing->nodes) {
    if (n < 0 || n >= static_cast<NodeId>(g.num_nodes())) throw IndexError("forced node out of range");
  }
}

void apply_forcing(const Forcing* forcing, std::size_t step, Eigen::VectorXd& flux) {
  if (!forcing) return;
  for (std::size_t k = 0; k < forcing->nodes.size(); ++k) {
    flux(forcing->nodes[k]) = forcing->values(static_cast<Eigen::Index>(step), static_cast<Eigen::Index>(k));
  }
}

Simulation allocate(const DirectedGraph& g, const SimConfig& cfg, std::vector<std::string> names) {
  Simulation sim;
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const auto steps = static_cast<Eigen::Index>(cfg.steps);
  sim.trajectory.steps = steps;
  sim.trajectory.nodes = n;
  sim.trajectory.values.resize(steps * n, static_cast<Eigen::Index>(names.size()));
  sim.trajectory.variable_names = std::move(names);
  sim.targets.values.resize(steps, n);
  return sim;
}

// Observation noise on the listed columns only; the dynamics never see it.
void observe(Simulation& sim, const SimConfig& cfg, std::initializer_list<Eigen::Index> noisy_cols) {
  sim.observed = sim.trajectory;
  if (cfg.noise_sigma <= 0.0) return;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (Eigen::Index r = 0; r < sim.observed.values.rows(); ++r) {
    for (auto c : noisy_cols) sim.observed.values(r, c) += noise(rng);
  }
}

}  // namespace

Simulation simulate(const RiverState<double>& initial, const DirectedGraph& g, const SimConfig& cfg,
                    const Forcing* forcing) {
  cfg.validate(g);
  check_forcing(forcing, g, cfg);
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (initial.u.size() != n || initial.z.size() != n) throw ShapeError("river state length differs from node count");
  const UpwindScheme<double> scheme(g, cfg.dx);
  Simulation sim = allocate(g, cfg, {"u", "z"});
  RiverState<double> state = initial;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    state = step_sv_viscous(state, scheme, cfg, &sim.cfl, s);
    apply_forcing(forcing, s, state.u);
    auto frame = sim.trajectory.frame(static_cast<Eigen::Index>(s));
    frame.col(0) = state.u;
    frame.col(1) = state.z;
    sim.targets.values.row(static_cast<Eigen::Index>(s)) = state.u.transpose();
  }
  observe(sim, cfg, {0});
  return sim;
}

Simulation simulate(const TrafficState<double>& initial, const DirectedGraph& g, const SimConfig& cfg,
                    const Forcing* forcing) {
  cfg.validate(g);
  check_forcing(forcing, g, cfg);
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (initial.rho.size() != n || initial.u.size() != n) {
    throw ShapeError("traffic state length differs from node count");
  }
  const UpwindScheme<double> scheme(g, cfg.dx);
  Simulation sim = allocate(g, cfg, {"rho", "u"});
  TrafficState<double> state = initial;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    state = step_ar(state, scheme, cfg, &sim.cfl, s);
    apply_forcing(forcing, s, state.rho);
    auto frame = sim.trajectory.frame(static_cast<Eigen::Index>(s));
    frame.col(0) = state.rho;
    frame.col(1) = state.u;
    sim.targets.values.row(static_cast<Eigen::Index>(s)) = state.rho.transpose();
  }
  observe(sim, cfg, {0, 1});
  return sim;
}

AmplificationReport reverse_reconstruction_demo(const DirectedGraph& ring, const SimConfig& cfg, double speed,
                                                double noise_sigma) {
  cfg.validate(ring);
  const auto n = static_cast<Eigen::Index>(ring.num_nodes());
  for (NodeId i = 0; i < n; ++i) {
    if (ring.upstream(i).size() != 1 || ring.downstream(i).size() != 1) {
      throw ValueError("reverse reconstruction requires a directed ring");
    }
  }
  if (!(noise_sigma >= 0.0)) throw ValueError("noise_sigma must be non-negative");

  const UpwindScheme<double> scheme(ring, cfg.dx);
  const auto& D = scheme.d1();
  const double a = cfg.dt * speed;

  Eigen::VectorXd truth(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    truth(i) = std::sin(x) + 0.5 * std::cos(2.0 * x);
  }

  Eigen::VectorXd u = truth;
  for (std::size_t s = 0; s < cfg.steps; ++s) u = u - a * (D.matrix() * u);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) u(i) += noise_sigma * noise(rng);

  Eigen::SparseMatrix<double> step(n, n);
  step.setIdentity();
  step = step - a * Eigen::SparseMatrix<double>(D.matrix());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(step);
  if (lu.info() != Eigen::Success) throw ValueError("forward step is singular at this CFL number");
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    u = lu.solve(u);
    if (!u.allFinite()) throw InstabilityError("reverse reconstruction overflowed", s);
  }

  const Eigen::VectorXd residual = u - truth;
  AmplificationReport report;
  report.error_norm = residual.norm();
  const double rms = report.error_norm / std::sqrt(static_cast<double>(n));
  report.growth_factor = noise_sigma > 0.0 ? rms / noise_sigma : rms;

  Eigen::FFT<double> fft;
  std::vector<double> time(residual.data(), residual.data() + n);
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, time);
  double total = 0.0;
  double high = 0.0;
  for (Eigen::Index k = 0; 2 * k <= n; ++k) {
    double energy = std::norm(freq[static_cast<std::size_t>(k)]);
    if (k != 0 && 2 * k != n) energy += std::norm(freq[static_cast<std::size_t>(n - k)]);
    const double omega = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    report.spectrum.push_back({omega, energy});
    total += energy;
    if (omega > std::numbers::pi / 2.0) high += energy;
  }
  report.high_frequency_fraction = total > 0.0 ? high / total : 0.0;
  return report;
}

}  // namespace phynfp
