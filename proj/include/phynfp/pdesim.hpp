#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "phynfp/diffops.hpp"
#include "phynfp/graph.hpp"

namespace phynfp {

template <typename Scalar = double>
struct RiverState {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> u;  // velocity
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z;  // bed elevation
  Scalar g_const = Scalar(9.81);
};

template <typename Scalar = double>
struct TrafficState {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rho;  // density, >= 0
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> u;    // velocity, >= 0
};

enum class CflPolicy {
  abort,   // throw on a violating step
  record,  // count and continue
};

/// Manning-type friction on top of the simplified momentum update. Off by default.
struct FrictionModel {
  bool enabled = false;
  double manning_n = 0.03;
  double depth = 1.0;
};

/// Greenshields-style velocity relaxation for the traffic stepper:
///   u <- u + dt * rate * (u_free * (1 - rho / rho_max) - u).
/// rate = 0 keeps u frozen.
struct TrafficClosure {
  double u_free = 1.0;
  double rho_max = 1.0;
  double rate = 0.0;
};

struct SimConfig {
  double dt = 0.1;
  Eigen::VectorXd dx;  // per edge, > 0
  std::size_t steps = 1;
  double nu = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  CflPolicy cfl_policy = CflPolicy::abort;
  FrictionModel friction;
  TrafficClosure closure;

  /// Throws ValueError for dt <= 0, dx <= 0, steps == 0 or nu < 0.
  void validate(const DirectedGraph& g) const;
};

struct CflStats {
  double max_cfl = 0.0;
  std::size_t violations = 0;
  std::size_t steps = 0;
};

/// Precomputed operators for one graph and spacing: D1 = D-hat / dx and the
/// averaged second difference L (also scaled by 1/dx).
///
/// L row i: mean over upstream of (u_j - u_i) plus mean over downstream of
/// (u_j - u_i). A missing side contributes nothing, so interior chain rows are
/// (1, -2, 1) and every row sums to zero.
template <typename Scalar = double>
class UpwindScheme {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  UpwindScheme(const DirectedGraph& g, const Vector& dx) : d1_(build_d1<Scalar>(g, dx)) {
    std::vector<Eigen::Triplet<Scalar>> trip;
    for (NodeId i = 0; i < static_cast<NodeId>(g.num_nodes()); ++i) {
      for (const auto side : {g.upstream(i), g.downstream(i)}) {
        for (const auto& nb : side) {
          const Scalar c = Scalar(1) / (static_cast<Scalar>(side.size()) * dx(static_cast<Eigen::Index>(nb.edge)));
          trip.emplace_back(i, nb.node, c);
          trip.emplace_back(i, i, -c);
        }
      }
    }
    laplacian_.resize(d1_.size(), d1_.size());
    laplacian_.setFromTriplets(trip.begin(), trip.end());
  }

  const DifferenceOperator<Scalar>& d1() const { return d1_; }
  const Eigen::SparseMatrix<Scalar, Eigen::RowMajor>& laplacian() const { return laplacian_; }

  /// dt * max_i |speed_i| * D1_ii.
  Scalar cfl(Scalar dt, const Vector& speed) const {
    Scalar worst(0);
    for (Eigen::Index i = 0; i < speed.size(); ++i) {
      worst = std::max(worst, dt * std::abs(speed(i)) * d1_.matrix().coeff(i, i));
    }
    return worst;
  }

 private:
  DifferenceOperator<Scalar> d1_;
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> laplacian_;
};

namespace detail {

template <typename Scalar>
void check_cfl(const UpwindScheme<Scalar>& scheme, const SimConfig& cfg,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& speed, CflStats* stats, std::size_t step) {
  const double c = static_cast<double>(scheme.cfl(static_cast<Scalar>(cfg.dt), speed));
  if (stats) {
    stats->max_cfl = std::max(stats->max_cfl, c);
    stats->steps += 1;
  }
  if (c > 1.0 + 1e-12) {
    if (stats) stats->violations += 1;
    if (cfg.cfl_policy == CflPolicy::abort) {
      throw InstabilityError("CFL condition violated: " + std::to_string(c), step);
    }
  }
}

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& v, std::size_t step) {
  if (!v.allFinite()) throw InstabilityError("non-finite state", step);
}

}  // namespace detail

/// Simplified momentum update u' = u - dt (u .* (D1 u) + g (D1 z)), z unchanged.
template <typename Scalar>
RiverState<Scalar> step_sv(const RiverState<Scalar>& s, const UpwindScheme<Scalar>& scheme,
                           const SimConfig& cfg, CflStats* stats = nullptr, std::size_t step = 0) {
  detail::check_cfl(scheme, cfg, s.u, stats, step);
  const auto& D = scheme.d1();
  const Scalar dt = static_cast<Scalar>(cfg.dt);
  RiverState<Scalar> out = s;
  out.u = s.u - dt * (s.u.cwiseProduct(D.apply(s.u)) + s.g_const * D.apply(s.z));
  if (cfg.friction.enabled) {
    const Scalar k = s.g_const * static_cast<Scalar>(cfg.friction.manning_n * cfg.friction.manning_n /
                                                     std::pow(cfg.friction.depth, 4.0 / 3.0));
    out.u -= dt * k * s.u.cwiseProduct(s.u.cwiseAbs());
  }
  detail::check_finite(out.u, step);
  return out;
}

template <typename Scalar>
RiverState<Scalar> step_sv(const RiverState<Scalar>& s, const DirectedGraph& g, const SimConfig& cfg) {
  cfg.validate(g);
  return step_sv(s, UpwindScheme<Scalar>(g, cfg.dx.cast<Scalar>()), cfg);
}

/// step_sv plus dt * nu * (L u). nu = 0 returns the inviscid result unchanged.
template <typename Scalar>
RiverState<Scalar> step_sv_viscous(const RiverState<Scalar>& s, const UpwindScheme<Scalar>& scheme,
                                   const SimConfig& cfg, CflStats* stats = nullptr, std::size_t step = 0) {
  RiverState<Scalar> out = step_sv(s, scheme, cfg, stats, step);
  if (cfg.nu == 0.0) return out;
  out.u += static_cast<Scalar>(cfg.dt * cfg.nu) * (scheme.laplacian() * s.u);
  detail::check_finite(out.u, step);
  return out;
}

template <typename Scalar>
RiverState<Scalar> step_sv_viscous(const RiverState<Scalar>& s, const DirectedGraph& g, const SimConfig& cfg) {
  cfg.validate(g);
  return step_sv_viscous(s, UpwindScheme<Scalar>(g, cfg.dx.cast<Scalar>()), cfg);
}

/// Mass conservation rho' = rho - dt (u .* (D1 rho) + rho .* (D1 u)), clamped at 0,
/// followed by the velocity closure.
template <typename Scalar>
TrafficState<Scalar> step_ar(const TrafficState<Scalar>& s, const UpwindScheme<Scalar>& scheme,
                             const SimConfig& cfg, CflStats* stats = nullptr, std::size_t step = 0) {
  detail::check_cfl(scheme, cfg, s.u, stats, step);
  const auto& D = scheme.d1();
  const Scalar dt = static_cast<Scalar>(cfg.dt);
  TrafficState<Scalar> out;
  // u .* (D1 rho) split as (diag) rho_i - sum_j c_ij rho_j; exact shift when dt u_i diag_i = 1.
  const auto n = D.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diag = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inflow = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  const auto& coeff = D.edge_coefficients();
  for (const auto& t : D.stencil().terms()) {
    const Scalar c = static_cast<Scalar>(t.weight) * coeff(static_cast<Eigen::Index>(t.edge));
    diag(t.row) += c;
    inflow(t.row) += c * s.rho(t.col);
  }
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> du = D.apply(s.u);
  out.rho.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar a = dt * s.u(i);
    out.rho(i) = (Scalar(1) - a * diag(i)) * s.rho(i) + a * inflow(i) - dt * s.rho(i) * du(i);
  }
  out.rho = out.rho.cwiseMax(Scalar(0));
  const auto& cl = cfg.closure;
  if (cl.rate > 0.0) {
    const Scalar relax = static_cast<Scalar>(std::min(1.0, cfg.dt * cl.rate));
    const auto target = (static_cast<Scalar>(cl.u_free) *
                         (Scalar(1) - out.rho.array() / static_cast<Scalar>(cl.rho_max)))
                            .max(Scalar(0))
                            .matrix();
    out.u = (s.u + relax * (target - s.u)).cwiseMax(Scalar(0));
  } else {
    out.u = s.u;
  }
  detail::check_finite(out.rho, step);
  detail::check_finite(out.u, step);
  return out;
}

template <typename Scalar>
TrafficState<Scalar> step_ar(const TrafficState<Scalar>& s, const DirectedGraph& g, const SimConfig& cfg) {
  cfg.validate(g);
  return step_ar(s, UpwindScheme<Scalar>(g, cfg.dx.cast<Scalar>()), cfg);
}

/// Prescribed inflow: after step s (1-based) the flux variable of nodes[k] is set
/// to values(s - 1, k).
struct Forcing {
  std::vector<NodeId> nodes;
  Eigen::MatrixXd values;  // steps x nodes.size()
};

/// Output of a simulation run. Rows of `trajectory` follow NodeSeries layout with
/// one frame per step (the initial state is not included).
struct Simulation {
  NodeSeries trajectory;  // clean states
  NodeSeries observed;    // trajectory plus observation noise on the dynamic variables
  Targets targets;        // flux variable of the clean trajectory
  CflStats cfl;
};

/// River run: variables (u, z); flux variable u.
Simulation simulate(const RiverState<double>& initial, const DirectedGraph& g, const SimConfig& cfg,
                    const Forcing* forcing = nullptr);
/// Traffic run: variables (rho, u); flux variable rho.
Simulation simulate(const TrafficState<double>& initial, const DirectedGraph& g, const SimConfig& cfg,
                    const Forcing* forcing = nullptr);

struct AmplificationReport {
  double growth_factor = 0.0;       // ||recon - truth|| / (sigma sqrt(N)); RMS error when sigma = 0
  double error_norm = 0.0;          // ||recon - truth||
  double high_frequency_fraction = 0.0;  // residual energy share at omega > pi/2
  std::vector<FrequencyResponse> spectrum;  // residual energy per admissible omega
};

/// Linear advection with constant speed on a directed ring: run forward from a
/// smooth state, add white noise of std `noise_sigma`, then march back to t = 0
/// by inverting each upwind step (a sparse solve of (I - dt*speed*D1) x = b).
/// At unit CFL the inverse is an exact one-node shift upstream; below it the
/// inverse amplifies high frequencies.
AmplificationReport reverse_reconstruction_demo(const DirectedGraph& ring, const SimConfig& cfg, double speed,
                                                double noise_sigma);

}  // namespace phynfp
