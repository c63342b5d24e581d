#pragma once

// Finite-dimensional Tikhonov experiments on small smooth operators:
// minimizers on nested subspaces, strong-convexity probes and the
// error-vs-noise trend for alpha = delta^(2 mu).

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "error.hpp"

namespace cipadapt::theory {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

struct SmoothOperator {
  int dim_in = 0;
  int dim_out = 0;
  std::function<Vec(const Vec&)> eval;
  std::function<Mat(const Vec&)> jacobian;
  /// Measured bounds of |F'| and of the Lipschitz constant of F' on a ball
  /// (zero until measured).
  double lipschitz_N1 = 0.0;
  double lipschitz_N2 = 0.0;
};

inline Vec gaussian_vector(int n, Rng& rng) {
  std::normal_distribution<double> g;
  Vec v(n);
  for (auto& x : v)
    x = g(rng);
  return v;
}

inline Vec unit_vector(int n, Rng& rng) {
  Vec v = gaussian_vector(n, rng);
  return v / v.norm();
}

/// Haar-distributed orthogonal matrix.
inline Mat random_orthogonal(int n, Rng& rng) {
  Mat g(n, n);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    g.data()[i] = nd(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Vec d = qr.matrixQR().diagonal();
  for (int j = 0; j < n; ++j)
    if (d[j] < 0)
      q.col(j) *= -1.0;
  return q;
}

/// Square matrix U diag(s) V^T with singular values uniform in [s_min, s_max].
inline Mat random_matrix_with_spectrum(int n, double s_min, double s_max, Rng& rng) {
  detail::require(n >= 1 && s_min > 0.0 && s_max >= s_min, "invalid spectrum request");
  std::uniform_real_distribution<double> u(s_min, s_max);
  Vec s(n);
  for (auto& x : s)
    x = u(rng);
  s[0] = s_min;
  if (n > 1)
    s[n - 1] = s_max;
  return random_orthogonal(n, rng) * s.asDiagonal() * random_orthogonal(n, rng).transpose();
}

inline SmoothOperator linear_operator(Mat a) {
  SmoothOperator op;
  op.dim_in = static_cast<int>(a.cols());
  op.dim_out = static_cast<int>(a.rows());
  op.eval = [a](const Vec& x) { return Vec(a * x); };
  op.jacobian = [a](const Vec&) { return a; };
  return op;
}

/// F(x) = A x + eps * (x_i^2)_i; A must be square.
inline SmoothOperator quadratic_perturbation(Mat a, double eps) {
  detail::require(a.rows() == a.cols(), "quadratic_perturbation needs a square matrix");
  SmoothOperator op;
  op.dim_in = op.dim_out = static_cast<int>(a.rows());
  op.eval = [a, eps](const Vec& x) { return Vec(a * x + eps * x.cwiseProduct(x)); };
  op.jacobian = [a, eps](const Vec& x) { return Mat(a + Mat((2.0 * eps * x).asDiagonal())); };
  return op;
}

/// F(x) = c for all x.
inline SmoothOperator constant_operator(Vec c, int dim_in) {
  SmoothOperator op;
  op.dim_in = dim_in;
  op.dim_out = static_cast<int>(c.size());
  op.eval = [c](const Vec&) { return c; };
  op.jacobian = [m = static_cast<Eigen::Index>(c.size()), dim_in](const Vec&) { return Mat::Zero(m, dim_in); };
  return op;
}

/// Largest relative deviation between the Jacobian and central differences
/// over random points and directions.
inline double jacobian_fd_error(const SmoothOperator& op, Rng& rng, int samples = 10, double h = 1e-6) {
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec x = gaussian_vector(op.dim_in, rng), d = unit_vector(op.dim_in, rng);
    Vec fd = (op.eval(x + h * d) - op.eval(x - h * d)) / (2 * h);
    Vec an = op.jacobian(x) * d;
    worst = std::max(worst, (fd - an).norm() / std::max(an.norm(), 1e-300));
  }
  return worst;
}

inline Vec sample_in_ball(const Vec& center, double radius, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto n = static_cast<double>(center.size());
  return center + radius * std::pow(u(rng), 1.0 / n) * unit_vector(static_cast<int>(center.size()), rng);
}

/// Measures N1 = max |F'(x)| and N2 = max |F'(x) - F'(z)| / |x - z| on a ball.
inline void measure_lipschitz(SmoothOperator& op, const Vec& center, double radius, Rng& rng, int samples = 200) {
  double n1 = 0.0, n2 = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec x = sample_in_ball(center, radius, rng), z = sample_in_ball(center, radius, rng);
    Mat jx = op.jacobian(x);
    n1 = std::max(n1, jx.operatorNorm());
    double dxz = (x - z).norm();
    if (dxz > 0)
      n2 = std::max(n2, (jx - op.jacobian(z)).operatorNorm() / dxz);
  }
  op.lipschitz_N1 = n1;
  op.lipschitz_N2 = n2;
}

// --------------------------------------------------------------- Tikhonov

inline double tikhonov_value(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha, const Vec& x) {
  return 0.5 * (op.eval(x) - y).squaredNorm() + 0.5 * alpha * (x - x0).squaredNorm();
}

inline Vec tikhonov_gradient(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha, const Vec& x) {
  return op.jacobian(x).transpose() * (op.eval(x) - y) + alpha * (x - x0);
}

/// Closed-form minimizer for linear F = A: (A^T A + alpha I)^{-1}(A^T y + alpha x0).
inline Vec tikhonov_closed_form(const Mat& a, const Vec& y, const Vec& x0, double alpha) {
  Mat h = a.transpose() * a + alpha * Mat::Identity(a.cols(), a.cols());
  return h.ldlt().solve(a.transpose() * y + alpha * x0);
}

/// Orthonormal basis of the range of a symmetric projector.
inline Mat projector_basis(const Mat& p) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (p + p.transpose()));
  std::vector<int> keep;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > 0.5)
      keep.push_back(i);
  Mat b(p.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    b.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]);
  return b;
}

struct GaussNewtonSettings {
  double grad_tol = 1e-12;
  int max_iters = 200;
};

/// Minimizes J(x) = 1/2 |F(x) - y|^2 + alpha/2 |x - x0|^2 over range(B)
/// (the whole space when `basis` is empty) by damped Gauss-Newton.
/// alpha == 0 is accepted for operators with injective Jacobian.
/// Stops at grad_tol or once the Newton correction is at rounding level.
inline Vec minimize_tikhonov_basis(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha,
                                   const std::optional<Mat>& basis, const GaussNewtonSettings& st = {}) {
  detail::require(alpha >= 0.0, "minimize_tikhonov: alpha must be non-negative");
  detail::require(y.size() == op.dim_out && x0.size() == op.dim_in, "minimize_tikhonov: dimension mismatch");
  const Mat b = basis ? *basis : Mat::Identity(op.dim_in, op.dim_in);
  detail::require(b.rows() == op.dim_in, "minimize_tikhonov: basis has wrong row count");
  if (b.cols() == 0)
    return Vec::Zero(op.dim_in);
  // start at the projection of x0 onto the subspace
  Vec z = b.transpose() * x0;
  auto value = [&](const Vec& zz) { return tikhonov_value(op, y, x0, alpha, b * zz); };
  double f = value(z);
  for (int it = 0; it < st.max_iters; ++it) {
    Vec x = b * z;
    Mat j = op.jacobian(x) * b;
    Vec r = op.eval(x) - y;
    Vec g = j.transpose() * r + alpha * (b.transpose() * (x - x0));
    if (g.norm() <= st.grad_tol)
      return x;
    Mat h = j.transpose() * j + alpha * (b.transpose() * b);
    Vec dz = -h.ldlt().solve(g);
    // below the resolution of J the Armijo test is meaningless; near the
    // minimizer the undamped step is safe
    if (-g.dot(dz) <= 1e-13 * std::max(1.0, std::abs(f))) {
      if (dz.norm() <= 1e-14 * (1.0 + z.norm()))
        return b * z;
      z += dz;
      f = value(z);
      continue;
    }
    double t = 1.0;
    bool ok = false;
    for (int k = 0; k < 60; ++k) {
      Vec zn = z + t * dz;
      double fn = value(zn);
      if (fn <= f + 1e-4 * t * g.dot(dz)) {
        z = zn;
        f = fn;
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) {
      // rounding floor: the step no longer changes J measurably
      if (g.norm() <= 1e-8 * std::max(1.0, std::abs(f)))
        return b * z;
      throw NumericalError("Gauss-Newton line search failed with gradient norm " + std::to_string(g.norm()));
    }
    if (t * dz.norm() <= 1e-15 * std::max(1.0, z.norm()) && g.norm() <= 1e-8)
      return b * z;
  }
  throw NumericalError("Gauss-Newton did not converge within " + std::to_string(st.max_iters) + " iterations");
}

/// Same, with the subspace given by an orthogonal projector.
inline Vec minimize_tikhonov_fd(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha,
                                const std::optional<Mat>& projector = {}, const GaussNewtonSettings& st = {}) {
  detail::require(alpha > 0.0, "minimize_tikhonov: alpha must be positive");
  std::optional<Mat> basis;
  if (projector)
    basis = projector_basis(*projector);
  return minimize_tikhonov_basis(op, y, x0, alpha, basis, st);
}

// -------------------------------------------------------- strong convexity

struct ConvexityReport {
  double min_ratio = 0.0;
  double pass_fraction = 0.0;
  int samples = 0;
};

/// Samples pairs in a ball and reports <J'(x) - J'(z), x - z> / |x - z|^2
/// against the threshold alpha / 2.
inline ConvexityReport check_strong_convexity(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha,
                                              const Vec& center, double radius, int samples, Rng& rng) {
  detail::require(radius > 0.0, "strong-convexity probe radius must be positive");
  detail::require(samples >= 1, "strong-convexity probe needs samples");
  ConvexityReport rep;
  rep.samples = samples;
  rep.min_ratio = std::numeric_limits<double>::infinity();
  int pass = 0;
  for (int s = 0; s < samples; ++s) {
    Vec x = sample_in_ball(center, radius, rng), z = sample_in_ball(center, radius, rng);
    Vec d = x - z;
    double dd = d.squaredNorm();
    if (dd == 0.0)
      continue;
    double ratio = (tikhonov_gradient(op, y, x0, alpha, x) - tikhonov_gradient(op, y, x0, alpha, z)).dot(d) / dd;
    rep.min_ratio = std::min(rep.min_ratio, ratio);
    pass += ratio >= alpha / 2.0;
  }
  rep.pass_fraction = static_cast<double>(pass) / samples;
  return rep;
}

// ------------------------------------------------------------- relaxation

/// Nested orthogonal projectors P_1, ..., P_N.
struct SubspaceChain {
  std::vector<Mat> projectors;
  /// Orthonormal bases, bases[n] spanning range(projectors[n]).
  std::vector<Mat> bases;

  /// Idempotent, symmetric and nested: P_{n+1} P_n = P_n.
  bool valid(double tol = 1e-10) const {
    for (std::size_t n = 0; n < projectors.size(); ++n) {
      const Mat& p = projectors[n];
      if ((p * p - p).norm() > tol || (p - p.transpose()).norm() > tol)
        return false;
      if (n + 1 < projectors.size() && (projectors[n + 1] * p - p).norm() > tol)
        return false;
    }
    return true;
  }
};

/// Random chain with subspace dimensions `sizes` (increasing, <= dim).
inline SubspaceChain random_nested_chain(int dim, const std::vector<int>& sizes, Rng& rng) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    detail::require(sizes[i] >= 1 && sizes[i] <= dim, "chain sizes must lie in [1, dim]");
    detail::require(i == 0 || sizes[i] > sizes[i - 1], "chain sizes must increase");
  }
  Mat q = random_orthogonal(dim, rng);
  SubspaceChain c;
  for (int k : sizes) {
    Mat b = q.leftCols(k);
    c.bases.push_back(b);
    c.projectors.push_back(b * b.transpose());
  }
  return c;
}

struct RelaxationReport {
  /// |x_n - x_alpha| in the Euclidean norm.
  std::vector<double> distances;
  /// |x_n - x_alpha| in the norm of the Hessian of J at x_alpha.
  std::vector<double> energy_distances;
  /// eta_n = d_{n+1} / d_n; NaN once d_n == 0.
  std::vector<double> eta;
  /// A posteriori bound (2 / alpha) |J'(x_n)| per level.
  std::vector<double> aposteriori;
  /// First level whose minimizer coincides with x_alpha (-1 if none).
  int converged_at = -1;
};

inline RelaxationReport relaxation_experiment(const SmoothOperator& op, const Vec& y, const Vec& x0, double alpha,
                                              const SubspaceChain& chain, const GaussNewtonSettings& st = {}) {
  detail::require(chain.valid(), "relaxation_experiment: subspace chain is not nested");
  Vec xa = minimize_tikhonov_basis(op, y, x0, alpha, std::nullopt, st);
  Mat j = op.jacobian(xa);
  Mat h = j.transpose() * j + alpha * Mat::Identity(op.dim_in, op.dim_in);
  RelaxationReport rep;
  for (std::size_t n = 0; n < chain.bases.size(); ++n) {
    Vec xn = minimize_tikhonov_basis(op, y, x0, alpha, chain.bases[n], st);
    Vec e = xn - xa;
    double d = e.norm();
    rep.distances.push_back(d);
    rep.energy_distances.push_back(std::sqrt(std::max(0.0, e.dot(h * e))));
    rep.aposteriori.push_back(2.0 / alpha * tikhonov_gradient(op, y, x0, alpha, xn).norm());
    if (rep.converged_at < 0 && d <= 1e-10 * std::max(1.0, xa.norm()))
      rep.converged_at = static_cast<int>(n);
  }
  for (std::size_t n = 0; n + 1 < rep.distances.size(); ++n)
    rep.eta.push_back(rep.distances[n] > 0.0 ? rep.distances[n + 1] / rep.distances[n]
                                             : std::numeric_limits<double>::quiet_NaN());
  return rep;
}

// ------------------------------------------------------ convergence rate

struct RateRow {
  double delta = 0.0;
  double alpha = 0.0;
  double error = 0.0;
  /// 2 delta^mu sqrt(A + 1) with A = |x0 - x*|, the argument of the modulus.
  double reference = 0.0;
};

/// For each delta: y = F(x*) + delta * (random unit vector), alpha =
/// delta^(2 mu), error = |x_alpha - x*|. delta == 0 gives the unregularized
/// fit to exact data.
inline std::vector<RateRow> convergence_rate_experiment(const SmoothOperator& op, const Vec& x_star, const Vec& x0,
                                                        double mu, const std::vector<double>& deltas, Rng& rng,
                                                        const GaussNewtonSettings& st = {}) {
  detail::require(mu > 0.0 && mu < 0.25, "mu must lie in (0, 1/4)");
  const Vec y_star = op.eval(x_star);
  const double a = (x0 - x_star).norm();
  std::vector<RateRow> rows;
  for (double delta : deltas) {
    detail::require(delta >= 0.0 && delta < 1.0, "delta must lie in [0, 1)");
    Vec y = y_star + delta * unit_vector(op.dim_out, rng);
    double alpha = std::pow(delta, 2.0 * mu);
    Vec x = minimize_tikhonov_basis(op, y, x0, alpha, std::nullopt, st);
    rows.push_back({delta, alpha, (x - x_star).norm(), 2.0 * std::pow(delta, mu) * std::sqrt(a + 1.0)});
  }
  return rows;
}

/// Least-squares slope of log(error) against log(delta).
inline double loglog_slope(const std::vector<RateRow>& rows) {
  detail::require(rows.size() >= 2, "need at least two rows for a slope");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    double x = std::log(r.delta), y = std::log(r.error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace cipadapt::theory
