#pragma once

// Tikhonov functional
//
//   E(c) = 1/2 int_{S_T} z(t) (v|_S - g)^2 + alpha/2 int_Omega (c - c_glob)^2
//
// and its gradient, computed with the discrete adjoint of the wave solver.
// The gradient is returned both as the Euclidean vector dE/dc_i and as its
// L2(Omega) Riesz representative phi with (phi, e)_{L2} = dE[e].

#include <Eigen/SparseCholesky>

#include <cmath>
#include <optional>

#include "adjoint.hpp"
#include "trace_io.hpp"

namespace cipadapt {

/// Admissible coefficient values [1 - omega, d + omega].
struct Bounds {
  double lower = 0.8;
  double upper = 4.2;

  static Bounds from(double omega, double d) {
    detail::require(omega > 0.0 && omega < 1.0, "omega must lie in (0, 1)");
    detail::require(d > 1.0, "d must exceed 1");
    return {1.0 - omega, d + omega};
  }
  bool contains(double v, double tol = 0.0) const { return v >= lower - tol && v <= upper + tol; }
};

/// Wave-speed coefficient: free in `region` (or everywhere), equal to one
/// outside it.
struct CoefficientField {
  NodalField field;
  Bounds bounds;
  std::optional<Rect> region;

  bool in_region(int node) const {
    return !region || region->contains(field.mesh->node(node), 1e-12 * region->diameter());
  }

  void validate(double tol = 1e-12) const {
    for (std::size_t i = 0; i < field.size(); ++i) {
      double v = field[i];
      if (in_region(static_cast<int>(i))) {
        if (!bounds.contains(v, tol))
          throw ValidationError("coefficient value " + std::to_string(v) + " at node " + std::to_string(i) +
                                " outside [" + std::to_string(bounds.lower) + ", " + std::to_string(bounds.upper) +
                                "]");
      } else if (std::abs(v - 1.0) > tol) {
        throw ValidationError("coefficient must equal 1 outside the inversion region (node " + std::to_string(i) +
                              ")");
      }
    }
  }

  /// Projects nodal values onto the bounds; returns the number changed.
  std::size_t clamp() {
    std::size_t n = 0;
    for (std::size_t i = 0; i < field.size(); ++i) {
      double v = std::clamp(field[i], bounds.lower, bounds.upper);
      if (v != field[i]) {
        field[i] = v;
        ++n;
      }
    }
    return n;
  }
};

/// alpha = delta^(2 mu) unless overridden.
struct RegularizationPolicy {
  double delta = 0.02;
  double mu = 0.2;
  std::optional<double> alpha_override;
};

inline double alpha_from_delta(const RegularizationPolicy& p) {
  if (p.alpha_override) {
    detail::require(*p.alpha_override >= 0.0, "alpha override must be non-negative");
    return *p.alpha_override;
  }
  detail::require(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)");
  detail::require(p.mu > 0.0 && p.mu < 0.25, "mu must lie in (0, 1/4)");
  return std::pow(p.delta, 2.0 * p.mu);
}

/// Computable bound on the distance to the regularized solution:
/// (2 / delta^(2 mu)) * ||E'(c_n)||.
inline double aposteriori_bound(double grad_norm, double delta, double mu) {
  detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  return 2.0 / std::pow(delta, 2.0 * mu) * grad_norm;
}

struct Evaluation {
  double value = 0.0;
  double misfit = 0.0;
  double regularization = 0.0;
  BoundaryTraceMatrix v_trace;
  WaveHistory v_history;
};

struct GradientResult {
  double value = 0.0;
  double misfit = 0.0;
  double regularization = 0.0;
  /// dE/dc_i for every node (zero at fixed nodes).
  Eigen::VectorXd euclidean;
  /// L2(Omega) representative, zero at fixed nodes.
  NodalField l2;
  double l2_norm = 0.0;
};

struct ProblemSettings {
  WaveConfig wave;
  std::optional<Rect> region;
  Bounds bounds;
  double alpha = 0.02;
  CutoffSpec cutoff;
  /// Checksum of the mesh the data were simulated on; equality with the
  /// inversion mesh is refused.
  std::optional<std::uint64_t> data_mesh_checksum;
};

/// Everything needed to evaluate E and E' on one mesh.
class InversionProblem {
public:
  /// `data` may live on any detector set covering the measurement surface
  /// and any time grid spanning [0, T]; it is resampled onto this mesh's
  /// detectors and solver steps.
  InversionProblem(MeshPtr mesh, const BoundaryTraceMatrix& data, NodalField c_glob, ProblemSettings settings)
      : mesh_(std::move(mesh)), c_glob_(std::move(c_glob)), settings_(std::move(settings)) {
    detail::require(settings_.alpha >= 0.0, "alpha must be non-negative");
    detail::require(settings_.bounds.lower > 0.0 && settings_.bounds.lower < settings_.bounds.upper,
                    "invalid coefficient bounds");
    if (settings_.data_mesh_checksum && *settings_.data_mesh_checksum == mesh_->checksum())
      throw InverseCrimeError("inversion mesh checksum " + checksum_hex(mesh_->checksum()) +
                              " equals the data-generation mesh checksum");
    detail::require(c_glob_.mesh && c_glob_.mesh->checksum() == mesh_->checksum(), "c_glob must live on the mesh");
    settings_.wave = resolve_time_step(*mesh_, settings_.bounds.lower, settings_.wave);
    surface_ = MeasurementSurface::for_mesh(*mesh_);
    const int N = settings_.wave.n_steps();
    std::vector<double> times(static_cast<std::size_t>(N + 1));
    for (int k = 0; k <= N; ++k)
      times[static_cast<std::size_t>(k)] = settings_.wave.time(k);
    data_ = resample_trace(data, surface_.detectors, surface_.positions(*mesh_), times,
                           1e-9 * mesh_->bounding_box().diameter());
    weights_ = trace_time_weights(N, settings_.wave.dt, settings_.cutoff);

    free_index_.assign(mesh_->num_nodes(), -1);
    const double tol = settings_.region ? 1e-12 * settings_.region->diameter() : 0.0;
    for (std::size_t i = 0; i < mesh_->num_nodes(); ++i)
      if (!settings_.region || settings_.region->contains(mesh_->node(static_cast<int>(i)), tol)) {
        free_index_[i] = static_cast<int>(free_nodes_.size());
        free_nodes_.push_back(static_cast<int>(i));
      }
    detail::require(!free_nodes_.empty(), "inversion region contains no nodes");
    mass_full_ = mass_matrix(*mesh_);
    mass_region_ = mass_matrix(*mesh_, settings_.region);
    Triplets trip;
    for (int k = 0; k < mass_region_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(mass_region_, k); it; ++it) {
        int r = free_index_[static_cast<std::size_t>(it.row())], c = free_index_[static_cast<std::size_t>(it.col())];
        if (r >= 0 && c >= 0)
          trip.emplace_back(r, c, it.value());
      }
    auto nf = static_cast<Eigen::Index>(free_nodes_.size());
    mass_free_.resize(nf, nf);
    mass_free_.setFromTriplets(trip.begin(), trip.end());
    mass_free_ldlt_.compute(mass_free_);
    if (mass_free_ldlt_.info() != Eigen::Success)
      throw NumericalError("mass matrix of the inversion region is singular");
  }

  const MeshPtr& mesh() const { return mesh_; }
  const NodalField& c_glob() const { return c_glob_; }
  const ProblemSettings& settings() const { return settings_; }
  const WaveConfig& wave() const { return settings_.wave; }
  double alpha() const { return settings_.alpha; }
  const Bounds& bounds() const { return settings_.bounds; }
  const MeasurementSurface& surface() const { return surface_; }
  /// Data resampled to this mesh's detectors and solver steps.
  const BoundaryTraceMatrix& data() const { return data_; }
  const std::vector<int>& free_nodes() const { return free_nodes_; }
  const SparseMatrix& mass_free() const { return mass_free_; }
  const SparseMatrix& mass_region() const { return mass_region_; }

  Eigen::VectorXd restrict(const NodalField& c) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(free_nodes_.size()));
    for (std::size_t i = 0; i < free_nodes_.size(); ++i)
      x[static_cast<Eigen::Index>(i)] = c[static_cast<std::size_t>(free_nodes_[i])];
    return x;
  }

  Eigen::VectorXd restrict(const Eigen::VectorXd& v) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(free_nodes_.size()));
    for (std::size_t i = 0; i < free_nodes_.size(); ++i)
      x[static_cast<Eigen::Index>(i)] = v[free_nodes_[i]];
    return x;
  }

  /// Full nodal field from free values; fixed nodes take c_glob's values.
  NodalField embed(const Eigen::VectorXd& x) const {
    NodalField c = c_glob_;
    for (std::size_t i = 0; i < free_nodes_.size(); ++i)
      c[static_cast<std::size_t>(free_nodes_[i])] = x[static_cast<Eigen::Index>(i)];
    return c;
  }

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return a.dot(mass_free_ * b); }
  double norm(const Eigen::VectorXd& a) const { return std::sqrt(std::max(0.0, inner(a, a))); }
  Eigen::VectorXd riesz(const Eigen::VectorXd& euclidean_free) const { return mass_free_ldlt_.solve(euclidean_free); }

  Evaluation evaluate(const NodalField& c) const {
    check_coefficient(c);
    WaveSystem sys(mesh_, as_vector(c), settings_.wave);
    Evaluation ev;
    ev.v_history = solve_forward(sys);
    Eigen::MatrixXd v = surface_values(surface_, ev.v_history);
    Eigen::MatrixXd diff = v - data_.values;
    ev.misfit = 0.5 * surface_pairing(surface_, diff, diff, weights_);
    Eigen::VectorXd dc = as_vector(c) - as_vector(c_glob_);
    ev.regularization = 0.5 * settings_.alpha * dc.dot(mass_region_ * dc);
    ev.value = ev.misfit + ev.regularization;
    ev.v_trace.detector_nodes = surface_.detectors;
    ev.v_trace.positions = data_.positions;
    ev.v_trace.times = data_.times;
    ev.v_trace.values = std::move(v);
    return ev;
  }

  GradientResult gradient(const NodalField& c) const {
    check_coefficient(c);
    WaveSystem sys(mesh_, as_vector(c), settings_.wave);
    WaveHistory u = solve_forward(sys);
    Eigen::MatrixXd v = surface_values(surface_, u);
    Eigen::MatrixXd diff = v - data_.values;
    GradientResult gr;
    gr.misfit = 0.5 * surface_pairing(surface_, diff, diff, weights_);
    Eigen::VectorXd dc = as_vector(c) - as_vector(c_glob_);
    Eigen::VectorXd reg_grad = settings_.alpha * (mass_region_ * dc);
    gr.regularization = 0.5 * dc.dot(reg_grad);
    gr.value = gr.misfit + gr.regularization;

    WaveHistory lam = solve_adjoint(sys, surface_, -diff, settings_.cutoff);
    // s_i = sum_k lambda_k,i * a_k,i with a_k the second difference driving
    // the mass term of forward step k; dE/dc = M s.
    const int N = sys.n_steps();
    const double dt = sys.dt(), dt2 = dt * dt;
    Eigen::VectorXd v0 = sys.initial_velocity();
    Eigen::ArrayXd s = lam.snapshots.col(0).array() * 2.0 *
                       (u.snapshots.col(1) - u.snapshots.col(0) - dt * v0).array() / dt2;
    for (int k = 1; k < N; ++k)
      s += lam.snapshots.col(k).array() *
           (u.snapshots.col(k + 1) - 2.0 * u.snapshots.col(k) + u.snapshots.col(k - 1)).array() / dt2;
    Eigen::VectorXd data_grad = mass_full_ * s.matrix();
    Eigen::VectorXd full = data_grad + reg_grad;
    gr.euclidean = Eigen::VectorXd::Zero(full.size());
    for (int n : free_nodes_)
      gr.euclidean[n] = full[n];
    Eigen::VectorXd phi_free = riesz(restrict(full));
    std::vector<double> phi(mesh_->num_nodes(), 0.0);
    for (std::size_t i = 0; i < free_nodes_.size(); ++i)
      phi[static_cast<std::size_t>(free_nodes_[i])] = phi_free[static_cast<Eigen::Index>(i)];
    gr.l2 = NodalField(mesh_, std::move(phi));
    gr.l2_norm = norm(phi_free);
    return gr;
  }

private:
  void check_coefficient(const NodalField& c) const {
    detail::require(c.mesh && c.mesh->checksum() == mesh_->checksum(), "coefficient lives on a different mesh");
    for (std::size_t i = 0; i < c.size(); ++i)
      if (!(c[i] > 0.0))
        throw ValidationError("coefficient must be positive (node " + std::to_string(i) + ")");
  }

  MeshPtr mesh_;
  NodalField c_glob_;
  ProblemSettings settings_;
  MeasurementSurface surface_;
  BoundaryTraceMatrix data_;
  std::vector<double> weights_;
  std::vector<int> free_index_;
  std::vector<int> free_nodes_;
  SparseMatrix mass_full_, mass_region_, mass_free_;
  Eigen::SimplicialLDLT<SparseMatrix> mass_free_ldlt_;
};

inline Evaluation evaluate(const InversionProblem& p, const NodalField& c) { return p.evaluate(c); }
inline GradientResult gradient(const InversionProblem& p, const NodalField& c) { return p.gradient(c); }

} // namespace cipadapt
