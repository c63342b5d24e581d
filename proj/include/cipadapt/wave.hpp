#pragma once

// Explicit leapfrog P1 solver for c(x) u_tt = Laplace(u) with Neumann,
// Neumann-source and first-order absorbing boundary conditions.
//
// Time step k (k >= 1) of the scheme reads
//
//   M_c (u^{k+1} - 2u^k + u^{k-1}) / dt^2 + D_k (u^{k+1} - u^{k-1}) / (2dt) + A u^k = b^k,
//
// where M_c is the diagonal matrix of integrals of c * phi_i, A the stiffness
// matrix, D_k the lumped boundary mass of the sides that absorb at t_k and
// b^k the boundary/interior load. The start-up step is
//
//   (2/dt^2) M_c (u^1 - u^0 - dt v^0) + A u^0 = b^0.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fem.hpp"

namespace cipadapt {

enum class BoundaryCondition {
  neumann_zero,
  /// Flux equal to the plane-wave pulse while it is active, first-order
  /// absorbing once it has ended.
  neumann_source,
  absorbing_first_order,
  /// Flux supplied as data (state problem); treated as zero flux by the
  /// configuration-driven solver.
  neumann_data,
};

inline std::string to_string(BoundaryCondition bc) {
  switch (bc) {
  case BoundaryCondition::neumann_zero: return "neumann_zero";
  case BoundaryCondition::neumann_source: return "neumann_source";
  case BoundaryCondition::absorbing_first_order: return "absorbing_first_order";
  case BoundaryCondition::neumann_data: return "neumann_data";
  }
  return "unknown";
}

inline BoundaryCondition boundary_condition_from_string(const std::string& s) {
  if (s == "neumann_zero") return BoundaryCondition::neumann_zero;
  if (s == "neumann_source") return BoundaryCondition::neumann_source;
  if (s == "absorbing_first_order") return BoundaryCondition::absorbing_first_order;
  if (s == "neumann_data") return BoundaryCondition::neumann_data;
  throw ValidationError("unknown boundary condition '" + s + "'");
}

/// f(t) = amplitude * (sin(frequency * t - pi/2) + 1) on [0, t1], zero after,
/// with t1 = 2 pi / frequency.
struct PlaneWavePulse {
  double amplitude = 0.1;
  double frequency = 7.45;

  double t1() const { return 2.0 * std::numbers::pi / frequency; }
  double operator()(double t) const {
    if (t < 0.0 || t > t1())
      return 0.0;
    return amplitude * (std::sin(frequency * t - std::numbers::pi / 2.0) + 1.0);
  }
};

/// Smoothed point source used as initial velocity:
/// C exp(1 / (|x - x0|^2 - kappa^2)) inside the disc of radius kappa.
struct PointSource {
  Point center;
  double kappa = 0.375;
  double amplitude = 1.0;
};

struct WaveConfig {
  double T_final = 17.8 * 2.0 * std::numbers::pi / 7.45;
  /// Time step; 0 selects the largest admissible step that divides T_final.
  double dt = 0.0;
  PlaneWavePulse source;
  std::map<int, BoundaryCondition> bc_map;
  double cfl_safety = 0.5;
  std::optional<PointSource> point_source;

  int n_steps() const { return static_cast<int>(std::lround(T_final / dt)); }
  double time(int k) const { return k * dt; }
};

/// Top side carries the pulse, bottom absorbs, vertical sides reflect.
inline WaveConfig plane_wave_config(double t_factor = 17.8, double frequency = 7.45, double amplitude = 0.1) {
  WaveConfig cfg;
  cfg.source = {amplitude, frequency};
  cfg.T_final = t_factor * cfg.source.t1();
  cfg.bc_map = {{label_of(Side::top), BoundaryCondition::neumann_source},
                {label_of(Side::bottom), BoundaryCondition::absorbing_first_order},
                {label_of(Side::left), BoundaryCondition::neumann_zero},
                {label_of(Side::right), BoundaryCondition::neumann_zero}};
  return cfg;
}

/// Largest step allowed by dt <= safety * h_min * sqrt(c_min), with h_min
/// the shortest mesh edge.
inline double cfl_limit(const TriMesh& mesh, double c_min, double safety) {
  return safety * mesh.min_edge() * std::sqrt(c_min);
}

/// Returns `cfg` with a concrete time step: either the configured one
/// (validated) or the largest admissible step dividing T_final.
inline WaveConfig resolve_time_step(const TriMesh& mesh, double c_min, WaveConfig cfg) {
  detail::require(cfg.T_final > 0.0, "T_final must be positive");
  detail::require(c_min > 0.0, "coefficient lower bound must be positive");
  double limit = cfl_limit(mesh, c_min, cfg.cfl_safety);
  if (cfg.dt <= 0.0) {
    int n = static_cast<int>(std::ceil(cfg.T_final / limit - 1e-12));
    cfg.dt = cfg.T_final / n;
  } else if (cfg.dt > limit * (1.0 + 1e-12)) {
    throw ValidationError("time step " + std::to_string(cfg.dt) + " violates the CFL bound " + std::to_string(limit));
  }
  return cfg;
}

/// Full space-time history; column k holds the nodal values at t = k dt.
struct WaveHistory {
  MeshPtr mesh;
  Eigen::MatrixXd snapshots;
  double dt = 0.0;
  int n_steps = 0;

  double time(int k) const { return k * dt; }
  Eigen::VectorXd snapshot(int k) const { return snapshots.col(k); }
};

/// Samples of a wave field at detector nodes.
struct BoundaryTraceMatrix {
  std::vector<int> detector_nodes;
  std::vector<Point> positions;
  std::vector<double> times;
  Eigen::MatrixXd values; // detectors x times

  std::size_t num_detectors() const { return detector_nodes.size(); }
  std::size_t num_times() const { return times.size(); }

  void validate() const {
    detail::require(positions.size() == detector_nodes.size(), "trace: positions/detectors size mismatch");
    detail::require(values.rows() == static_cast<Eigen::Index>(detector_nodes.size()) &&
                        values.cols() == static_cast<Eigen::Index>(times.size()),
                    "trace: value matrix has wrong dimensions");
    for (std::size_t j = 1; j < times.size(); ++j)
      detail::require(times[j] > times[j - 1], "trace: times must be strictly increasing");
  }
};

/// Operator pieces of the leapfrog scheme for one (mesh, c, config).
class WaveSystem {
public:
  WaveSystem(MeshPtr mesh, const Eigen::VectorXd& c, const WaveConfig& cfg)
      : mesh_(std::move(mesh)), cfg_(cfg) {
    detail::require(cfg_.dt > 0.0, "WaveSystem: time step must be resolved");
    detail::require(c.size() == static_cast<Eigen::Index>(mesh_->num_nodes()), "WaveSystem: coefficient size");
    detail::require(c.minCoeff() > 0.0, "WaveSystem: coefficient must be positive");
    double limit = cfl_limit(*mesh_, c.minCoeff(), cfg_.cfl_safety);
    if (cfg_.dt > limit * (1.0 + 1e-12))
      throw ValidationError("time step " + std::to_string(cfg_.dt) + " violates the CFL bound " +
                            std::to_string(limit));
    n_steps_ = cfg_.n_steps();
    detail::require(n_steps_ >= 1, "WaveSystem: need at least one time step");
    for (const auto& [label, bc] : cfg_.bc_map) {
      detail::require(is_outer_label(label), "bc_map keys must be outer side labels");
      (void)bc;
    }
    for (const auto& e : mesh_->boundary_edges())
      if (is_outer_label(e.label) && !cfg_.bc_map.count(e.label))
        throw ValidationError("no boundary condition configured for side label " + std::to_string(e.label));

    stiffness_ = stiffness_matrix(*mesh_);
    mass_c_ = weighted_lumped_mass(*mesh_, c);
    std::vector<int> absorbing, source;
    for (const auto& [label, bc] : cfg_.bc_map) {
      if (bc == BoundaryCondition::absorbing_first_order)
        absorbing.push_back(label);
      if (bc == BoundaryCondition::neumann_source)
        source.push_back(label);
    }
    damp_always_ = boundary_lumped_mass(*mesh_, absorbing);
    source_mass_ = boundary_lumped_mass(*mesh_, source);
    std::vector<int> outer = {1, 2, 3, 4};
    outer_mass_ = boundary_lumped_mass(*mesh_, outer);
  }

  const MeshPtr& mesh() const { return mesh_; }
  const WaveConfig& config() const { return cfg_; }
  double dt() const { return cfg_.dt; }
  int n_steps() const { return n_steps_; }
  const SparseMatrix& stiffness() const { return stiffness_; }
  const Eigen::VectorXd& mass() const { return mass_c_; }
  /// Lumped boundary mass of all outer sides (weights the Neumann data load).
  const Eigen::VectorXd& outer_boundary_mass() const { return outer_mass_; }

  bool source_active(int k) const { return cfg_.time(k) <= cfg_.source.t1(); }

  /// Diagonal of D_k.
  Eigen::VectorXd damping(int k) const {
    if (source_active(k))
      return damp_always_;
    return damp_always_ + source_mass_;
  }

  /// Plane-wave load vector at step k.
  Eigen::VectorXd source_load(int k) const { return source_mass_ * cfg_.source(cfg_.time(k)); }
  bool has_source() const { return source_mass_.squaredNorm() > 0.0; }

  /// Initial velocity of the configured point source (zero if none).
  Eigen::VectorXd initial_velocity() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(mass_c_.size());
    if (!cfg_.point_source)
      return v;
    const auto& ps = *cfg_.point_source;
    detail::require(ps.kappa > 0.0, "point source radius must be positive");
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(mass_c_.size());
    Eigen::VectorXd lumped = weighted_lumped_mass(*mesh_, ones);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double r = distance(mesh_->node(static_cast<int>(i)), ps.center);
      if (r < ps.kappa)
        v[i] = std::exp(1.0 / (r * r - ps.kappa * ps.kappa));
    }
    double integral = lumped.dot(v);
    detail::require(integral > 0.0, "point source radius does not cover any node");
    return v * (ps.amplitude / integral);
  }

private:
  MeshPtr mesh_;
  WaveConfig cfg_;
  int n_steps_ = 0;
  SparseMatrix stiffness_;
  Eigen::VectorXd mass_c_, damp_always_, source_mass_, outer_mass_;
};

namespace detail {

inline void check_finite(const Eigen::VectorXd& u, int step) {
  if (!u.allFinite())
    throw NumericalError("wave solver diverged at step " + std::to_string(step));
}

} // namespace detail

/// Marches the scheme with loads b^k supplied by `load(k, b)` (b arrives
/// zeroed). `u0` and `v0` are the initial displacement and velocity.
template <class Load>
WaveHistory march(const WaveSystem& sys, Load&& load, const Eigen::VectorXd& u0, const Eigen::VectorXd& v0) {
  const Eigen::Index n = sys.mass().size();
  const int steps = sys.n_steps();
  const double dt = sys.dt(), dt2 = dt * dt;
  WaveHistory h{sys.mesh(), Eigen::MatrixXd::Zero(n, steps + 1), dt, steps};
  h.snapshots.col(0) = u0;
  Eigen::VectorXd b(n), au(n);

  b.setZero();
  load(0, b);
  au = sys.stiffness() * u0;
  h.snapshots.col(1) = u0 + dt * v0 + (0.5 * dt2) * ((b - au).array() / sys.mass().array()).matrix();
  detail::check_finite(h.snapshots.col(1), 1);

  for (int k = 1; k < steps; ++k) {
    b.setZero();
    load(k, b);
    Eigen::VectorXd d = sys.damping(k);
    auto uk = h.snapshots.col(k);
    auto um = h.snapshots.col(k - 1);
    au.noalias() = sys.stiffness() * uk;
    Eigen::ArrayXd lhs = sys.mass().array() / dt2 + d.array() / (2.0 * dt);
    Eigen::ArrayXd rhs = b.array() - au.array() + sys.mass().array() / dt2 * (2.0 * uk.array() - um.array()) +
                         d.array() / (2.0 * dt) * um.array();
    h.snapshots.col(k + 1) = (rhs / lhs).matrix();
    if ((k & 63) == 0 || k + 1 == steps)
      detail::check_finite(h.snapshots.col(k + 1), k + 1);
  }
  return h;
}

/// Forward problem driven by the configured plane-wave pulse and/or point
/// source, zero initial displacement.
inline WaveHistory solve_forward(const WaveSystem& sys) {
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.mass().size());
  auto load = [&](int k, Eigen::VectorXd& b) {
    if (sys.has_source() && sys.source_active(k))
      b += sys.source_load(k);
  };
  return march(sys, load, zero, sys.initial_velocity());
}

inline WaveHistory solve_forward(MeshPtr mesh, const NodalField& c, const WaveConfig& cfg) {
  WaveSystem sys(std::move(mesh), as_vector(c), cfg);
  return solve_forward(sys);
}

/// Leapfrog with a given initial displacement and zero velocity, no loads.
inline WaveHistory solve_initial_value(const WaveSystem& sys, const Eigen::VectorXd& u0) {
  auto no_load = [](int, Eigen::VectorXd&) {};
  return march(sys, no_load, u0, Eigen::VectorXd::Zero(u0.size()));
}

/// Discrete energy conserved by leapfrog without damping or loads:
/// E^{k+1/2} = 1/2 w^T M_c w + 1/2 (u^{k+1})^T A u^k, w = (u^{k+1} - u^k) / dt.
inline std::vector<double> shadow_energy(const WaveSystem& sys, const WaveHistory& h) {
  std::vector<double> e(static_cast<std::size_t>(h.n_steps));
  for (int k = 0; k < h.n_steps; ++k) {
    Eigen::VectorXd w = (h.snapshots.col(k + 1) - h.snapshots.col(k)) / h.dt;
    double kinetic = 0.5 * w.dot(sys.mass().cwiseProduct(w));
    double potential = 0.5 * h.snapshots.col(k + 1).dot(sys.stiffness() * h.snapshots.col(k));
    e[static_cast<std::size_t>(k)] = kinetic + potential;
  }
  return e;
}

/// Samples the history at detector nodes every `sample_dt` (nearest step).
inline BoundaryTraceMatrix extract_trace(const WaveHistory& h, const std::vector<int>& detectors, double sample_dt) {
  detail::require(sample_dt >= h.dt * (1.0 - 1e-9), "extract_trace: sample_dt must not be below the solver step");
  for (int d : detectors) {
    detail::require(d >= 0 && static_cast<std::size_t>(d) < h.mesh->num_nodes(), "extract_trace: bad node index");
    if (!h.mesh->is_boundary_node(d))
      throw ValidationError("extract_trace: detector node " + std::to_string(d) + " is not a boundary node");
  }
  BoundaryTraceMatrix tr;
  tr.detector_nodes = detectors;
  for (int d : detectors)
    tr.positions.push_back(h.mesh->node(d));
  const double T = h.time(h.n_steps);
  std::vector<int> steps;
  for (int j = 0;; ++j) {
    double t = j * sample_dt;
    if (t > T * (1.0 + 1e-12))
      break;
    tr.times.push_back(t);
    steps.push_back(std::min(h.n_steps, static_cast<int>(std::lround(t / h.dt))));
  }
  tr.values.resize(static_cast<Eigen::Index>(detectors.size()), static_cast<Eigen::Index>(steps.size()));
  for (std::size_t j = 0; j < steps.size(); ++j)
    for (std::size_t i = 0; i < detectors.size(); ++i)
      tr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h.snapshots(detectors[i], steps[j]);
  return tr;
}

/// Trace at every solver step.
inline BoundaryTraceMatrix extract_trace(const WaveHistory& h, const std::vector<int>& detectors) {
  return extract_trace(h, detectors, h.dt);
}

/// Normal derivative on the outer boundary implied by a forward solve, on the
/// solver grid: the pulse where it is applied and -u_t (centered difference)
/// on absorbing sides, expressed per unit of outer-boundary mass so that
/// solve_state reproduces the forward load exactly.
inline BoundaryTraceMatrix neumann_flux_trace(const WaveSystem& sys, const WaveHistory& h) {
  const auto& mesh = *sys.mesh();
  std::vector<int> nodes;
  for (std::size_t i = 0; i < mesh.num_nodes(); ++i)
    for (int l = 1; l <= 4; ++l)
      if (mesh.node_has_label(static_cast<int>(i), l)) {
        nodes.push_back(static_cast<int>(i));
        break;
      }
  BoundaryTraceMatrix p;
  p.detector_nodes = nodes;
  for (int d : nodes)
    p.positions.push_back(mesh.node(d));
  for (int k = 0; k <= h.n_steps; ++k)
    p.times.push_back(h.time(k));
  p.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes.size()), h.n_steps + 1);
  for (int k = 0; k < h.n_steps; ++k) {
    Eigen::VectorXd load = Eigen::VectorXd::Zero(sys.mass().size());
    if (sys.has_source() && sys.source_active(k))
      load += sys.source_load(k);
    if (k >= 1) {
      Eigen::VectorXd d = sys.damping(k);
      load -= (d.array() * (h.snapshots.col(k + 1) - h.snapshots.col(k - 1)).array() / (2.0 * h.dt)).matrix();
    }
    for (std::size_t i = 0; i < nodes.size(); ++i)
      p.values(static_cast<Eigen::Index>(i), k) = load[nodes[i]] / sys.outer_boundary_mass()[nodes[i]];
  }
  return p;
}

/// State problem: zero initial data and Neumann flux `p` on the outer
/// boundary, given on the solver's time grid. The configured boundary
/// conditions are not applied; only the data drive the solution.
inline WaveHistory solve_state(MeshPtr mesh, const NodalField& c, const BoundaryTraceMatrix& p, WaveConfig cfg) {
  p.validate();
  for (auto& [label, bc] : cfg.bc_map)
    bc = BoundaryCondition::neumann_data;
  cfg.point_source.reset();
  WaveSystem sys(std::move(mesh), as_vector(c), cfg);
  const int steps = sys.n_steps();
  if (p.num_times() != static_cast<std::size_t>(steps + 1))
    throw ValidationError("solve_state: data time grid has " + std::to_string(p.num_times()) +
                          " samples, solver needs " + std::to_string(steps + 1) + "; resample first");
  for (int k = 0; k <= steps; ++k)
    if (std::abs(p.times[static_cast<std::size_t>(k)] - sys.config().time(k)) > 1e-9 * cfg.T_final)
      throw ValidationError("solve_state: data time grid differs from solver grid; resample first");
  const auto& bm = sys.outer_boundary_mass();
  for (int d : p.detector_nodes)
    detail::require(bm[d] > 0.0, "solve_state: Neumann data given at a node off the outer boundary");
  auto load = [&](int k, Eigen::VectorXd& b) {
    for (std::size_t i = 0; i < p.detector_nodes.size(); ++i) {
      int d = p.detector_nodes[i];
      b[d] += bm[d] * p.values(static_cast<Eigen::Index>(i), k);
    }
  };
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.mass().size());
  return march(sys, load, zero, zero);
}

} // namespace cipadapt
