#pragma once

// Reverse-time adjoint of the leapfrog scheme in wave.hpp. The backward
// recursion is the exact transpose of the forward one, so for any interior
// load q and boundary misfit m
//
//   <trace(u[q]), m>_{S_T} == <q, lambda[m]>_{Q_T}
//
// holds to rounding error.

#include <algorithm>

#include "wave.hpp"

namespace cipadapt {

/// Temporal cutoff z(t): 1 on [0, T - 2 zeta], 0 on [T - zeta, T], cubic
/// smoothstep in between. zeta == 0 disables the cutoff (z == 1).
struct CutoffSpec {
  double zeta = 0.0;
  bool enabled() const { return zeta > 0.0; }
};

inline double cutoff_value(const CutoffSpec& spec, double t, double T) {
  if (!(spec.zeta > 0.0))
    throw ValidationError("cutoff width zeta must be positive");
  detail::require(2.0 * spec.zeta < T, "cutoff width must satisfy 2 zeta < T");
  detail::require(t >= -1e-12 * T && t <= T * (1.0 + 1e-12), "cutoff evaluated outside [0, T]");
  double s = std::clamp((t - (T - 2.0 * spec.zeta)) / spec.zeta, 0.0, 1.0);
  return 1.0 - s * s * (3.0 - 2.0 * s);
}

inline double cutoff_weight(const CutoffSpec& spec, double t, double T) {
  return spec.enabled() ? cutoff_value(spec, t, T) : 1.0;
}

/// Detector nodes on a set of labelled edges and the consistent 1D mass
/// matrix of those edges, indexed by detector.
struct MeasurementSurface {
  std::vector<int> detectors;
  SparseMatrix mass;

  static MeasurementSurface from_labels(const TriMesh& mesh, std::span<const int> labels) {
    MeasurementSurface s;
    std::vector<int> local(mesh.num_nodes(), -1);
    for (std::size_t i = 0; i < mesh.num_nodes(); ++i)
      for (int l : labels)
        if (mesh.node_has_label(static_cast<int>(i), l)) {
          local[i] = static_cast<int>(s.detectors.size());
          s.detectors.push_back(static_cast<int>(i));
          break;
        }
    detail::require(!s.detectors.empty(), "measurement surface has no nodes");
    Triplets trip;
    for (const auto& e : mesh.boundary_edges()) {
      if (std::find(labels.begin(), labels.end(), e.label) == labels.end())
        continue;
      double len = distance(mesh.node(e.a), mesh.node(e.b));
      int a = local[e.a], b = local[e.b];
      trip.emplace_back(a, a, len / 3.0);
      trip.emplace_back(b, b, len / 3.0);
      trip.emplace_back(a, b, len / 6.0);
      trip.emplace_back(b, a, len / 6.0);
    }
    auto n = static_cast<Eigen::Index>(s.detectors.size());
    s.mass.resize(n, n);
    s.mass.setFromTriplets(trip.begin(), trip.end());
    return s;
  }

  /// Surface edges labelled Side::surface if the mesh has any, otherwise the
  /// outer boundary.
  static MeasurementSurface for_mesh(const TriMesh& mesh) {
    if (mesh.has_label(label_of(Side::surface))) {
      int l = label_of(Side::surface);
      return from_labels(mesh, std::span<const int>(&l, 1));
    }
    static constexpr int outer[] = {1, 2, 3, 4};
    return from_labels(mesh, outer);
  }

  std::vector<Point> positions(const TriMesh& mesh) const {
    std::vector<Point> p;
    p.reserve(detectors.size());
    for (int d : detectors)
      p.push_back(mesh.node(d));
    return p;
  }
};

/// Time weights of the space-time surface pairing: trapezoid weight * dt *
/// cutoff, for steps 0..n_steps.
inline std::vector<double> trace_time_weights(int n_steps, double dt, const CutoffSpec& cutoff) {
  const double T = n_steps * dt;
  std::vector<double> w(static_cast<std::size_t>(n_steps + 1));
  for (int k = 0; k <= n_steps; ++k) {
    double trap = (k == 0 || k == n_steps) ? 0.5 : 1.0;
    w[static_cast<std::size_t>(k)] = trap * dt * cutoff_weight(cutoff, k * dt, T);
  }
  return w;
}

/// <a, b>_{S_T}: surface mass in space, weighted trapezoid in time.
inline double surface_pairing(const MeasurementSurface& s, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const std::vector<double>& weights) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "surface_pairing: shape mismatch");
  detail::require(a.cols() == static_cast<Eigen::Index>(weights.size()), "surface_pairing: weights size");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    if (weights[static_cast<std::size_t>(k)] == 0.0)
      continue;
    sum += weights[static_cast<std::size_t>(k)] * a.col(k).dot(s.mass * b.col(k));
  }
  return sum;
}

/// Restriction of a history to the surface detectors, every solver step.
inline Eigen::MatrixXd surface_values(const MeasurementSurface& s, const WaveHistory& h) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(s.detectors.size()), h.n_steps + 1);
  for (std::size_t i = 0; i < s.detectors.size(); ++i)
    v.row(static_cast<Eigen::Index>(i)) = h.snapshots.row(s.detectors[i]);
  return v;
}

/// Solves the transposed scheme driven by the surface misfit `misfit`
/// (detectors x (n_steps + 1), solver grid). Column k of the result is the
/// multiplier of forward step k; the last column is zero.
inline WaveHistory solve_adjoint(const WaveSystem& sys, const MeasurementSurface& surface,
                                 const Eigen::MatrixXd& misfit, const CutoffSpec& cutoff) {
  const int N = sys.n_steps();
  const double dt = sys.dt(), dt2 = dt * dt;
  if (misfit.rows() != static_cast<Eigen::Index>(surface.detectors.size()) || misfit.cols() != N + 1)
    throw ValidationError("solve_adjoint: misfit is not on the solver's detector/time grid");
  if (cutoff.enabled())
    detail::require(2.0 * cutoff.zeta < sys.config().T_final, "cutoff width must satisfy 2 zeta < T");
  const Eigen::Index n = sys.mass().size();
  const auto weights = trace_time_weights(N, dt, cutoff);
  const Eigen::ArrayXd m = sys.mass().array();

  WaveHistory lam{sys.mesh(), Eigen::MatrixXd::Zero(n, N + 1), dt, N};
  Eigen::VectorXd r(n), tmp(n);
  Eigen::VectorXd surf(static_cast<Eigen::Index>(surface.detectors.size()));
  for (int j = N; j >= 1; --j) {
    r.setZero();
    double w = weights[static_cast<std::size_t>(j)];
    if (w != 0.0) {
      surf.noalias() = surface.mass * misfit.col(j);
      for (std::size_t i = 0; i < surface.detectors.size(); ++i)
        r[surface.detectors[i]] += w * surf[static_cast<Eigen::Index>(i)];
    }
    if (j <= N - 1) {
      auto lj = lam.snapshots.col(j);
      tmp.noalias() = sys.stiffness() * lj;
      r -= tmp;
      r.array() += 2.0 * m / dt2 * lj.array();
    }
    if (j + 1 <= N - 1) {
      Eigen::ArrayXd d = sys.damping(j + 1).array();
      r.array() -= (m / dt2 - d / (2.0 * dt)) * lam.snapshots.col(j + 1).array();
    }
    if (j - 1 == 0) {
      lam.snapshots.col(0) = (r.array() / (2.0 * m / dt2)).matrix();
    } else {
      Eigen::ArrayXd d = sys.damping(j - 1).array();
      lam.snapshots.col(j - 1) = (r.array() / (m / dt2 + d / (2.0 * dt))).matrix();
    }
    if ((j & 63) == 0)
      detail::check_finite(lam.snapshots.col(j - 1), j - 1);
  }
  detail::check_finite(lam.snapshots.col(0), 0);
  return lam;
}

} // namespace cipadapt
