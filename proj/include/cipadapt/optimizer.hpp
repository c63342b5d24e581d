#pragma once

// Projected L-BFGS on a box, in a weighted inner product <a, b> = a^T M b.
//
// The caller supplies the Euclidean gradient; the Riesz map M^{-1} turns it
// into the gradient of the chosen geometry (the L2 representative for
// coefficient fields). Steps are projected onto the box and accepted by an
// Armijo test along the projected path.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "objective.hpp"

namespace cipadapt {

enum class Method { lbfgs, gradient_descent };

inline std::string to_string(Method m) { return m == Method::lbfgs ? "lbfgs" : "gradient_descent"; }
inline Method method_from_string(const std::string& s) {
  if (s == "lbfgs")
    return Method::lbfgs;
  if (s == "gradient_descent")
    return Method::gradient_descent;
  throw ValidationError("unknown optimizer method '" + s + "'");
}

struct LineSearchSettings {
  double c1 = 1e-4;
  double shrink = 0.5;
  int max_shrinks = 20;
};

struct OptimizeSettings {
  Method method = Method::lbfgs;
  int memory = 7;
  double grad_tol = 1e-5;
  int stagnation_window = 5;
  double stagnation_rel = 1e-3;
  int max_iters = 50;
  /// Length (in the working norm) of the first steepest-descent trial step.
  /// Later steepest-descent trials reuse the last accepted step length.
  double initial_step = 1.0;
  LineSearchSettings line_search;

  void validate() const {
    detail::require(grad_tol > 0.0, "optimizer.grad_tol must be positive");
    detail::require(memory >= 1, "optimizer.memory must be >= 1");
    detail::require(stagnation_window >= 1, "optimizer.stagnation_window must be >= 1");
    detail::require(stagnation_rel >= 0.0, "optimizer.stagnation_rel must be non-negative");
    detail::require(max_iters >= 0, "optimizer.max_iters must be non-negative");
    detail::require(initial_step > 0.0, "optimizer.initial_step must be positive");
    detail::require(line_search.c1 > 0.0 && line_search.c1 < 1.0, "optimizer.line_search.c1 must lie in (0, 1)");
    detail::require(line_search.shrink > 0.0 && line_search.shrink < 1.0,
                    "optimizer.line_search.shrink must lie in (0, 1)");
    detail::require(line_search.max_shrinks >= 1, "optimizer.line_search.max_shrinks must be >= 1");
  }
};

enum class StopReason { grad_tol, stagnation, max_iters, line_search_failure };

inline std::string to_string(StopReason r) {
  switch (r) {
  case StopReason::grad_tol: return "grad_tol";
  case StopReason::stagnation: return "stagnation";
  case StopReason::max_iters: return "max_iters";
  case StopReason::line_search_failure: return "line_search_failure";
  }
  return "unknown";
}

/// One row of the iteration history. Row 0 describes the starting point.
struct IterationRecord {
  int iter = 0;
  double value = 0.0;
  /// Working-norm length of the projected gradient.
  double grad_norm = 0.0;
  double step = 0.0;
  int clamped = 0;
};

inline void write_iterations_csv(std::ostream& os, const std::vector<IterationRecord>& hist) {
  os << "iter, E, grad_norm, step, clamped_nodes\n" << std::setprecision(17);
  for (const auto& r : hist)
    os << r.iter << ", " << r.value << ", " << r.grad_norm << ", " << r.step << ", " << r.clamped << '\n';
}

/// Problem description for the box-constrained minimizer.
struct BoxProblem {
  /// Returns E(x) and the Euclidean gradient dE/dx.
  std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)> value_grad;
  /// Working inner product; Euclidean if empty.
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> inner;
  /// Riesz map M^{-1}; identity if empty.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> riesz;
  Eigen::VectorXd lower, upper;
  /// Called right after the evaluation at the starting point and after each
  /// accepted step's evaluation.
  std::function<void()> on_accept;
};

struct BoxResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd euclidean_grad;
  std::vector<IterationRecord> history;
  StopReason reason = StopReason::max_iters;
  bool line_search_failed = false;
};

namespace detail {

struct BoxOps {
  const BoxProblem& p;
  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return p.inner ? p.inner(a, b) : a.dot(b); }
  Eigen::VectorXd riesz(const Eigen::VectorXd& g) const { return p.riesz ? p.riesz(g) : g; }
  Eigen::VectorXd project(const Eigen::VectorXd& x) const { return x.cwiseMax(p.lower).cwiseMin(p.upper); }

  // Components held at a bound by the gradient: moving inward would increase E.
  std::vector<char> active(const Eigen::VectorXd& x, const Eigen::VectorXd& phi) const {
    std::vector<char> a(static_cast<std::size_t>(x.size()), 0);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      a[static_cast<std::size_t>(i)] = (x[i] <= p.lower[i] && phi[i] > 0.0) || (x[i] >= p.upper[i] && phi[i] < 0.0);
    return a;
  }
  static Eigen::VectorXd mask(Eigen::VectorXd v, const std::vector<char>& act) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (act[static_cast<std::size_t>(i)])
        v[i] = 0.0;
    return v;
  }
  int clamped(const Eigen::VectorXd& x) const {
    int n = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      n += (x[i] <= p.lower[i] || x[i] >= p.upper[i]);
    return n;
  }
};

} // namespace detail

inline BoxResult minimize_box(const BoxProblem& prob, Eigen::VectorXd x0, const OptimizeSettings& st) {
  st.validate();
  detail::require(prob.value_grad != nullptr, "minimize_box: value_grad missing");
  detail::require(prob.lower.size() == x0.size() && prob.upper.size() == x0.size(), "minimize_box: bounds size");
  detail::require((prob.lower.array() <= prob.upper.array()).all(), "minimize_box: lower bound exceeds upper bound");
  for (Eigen::Index i = 0; i < x0.size(); ++i)
    if (x0[i] < prob.lower[i] || x0[i] > prob.upper[i])
      throw ValidationError("minimize_box: starting point violates the box at component " + std::to_string(i));

  detail::BoxOps ops{prob};
  BoxResult res;
  Eigen::VectorXd x = std::move(x0);
  auto [f, g] = prob.value_grad(x);
  if (prob.on_accept)
    prob.on_accept();
  Eigen::VectorXd phi = ops.riesz(g);
  auto act = ops.active(x, phi);

  std::vector<Eigen::VectorXd> S, Y;
  std::vector<double> rho;
  auto reset = [&] {
    S.clear();
    Y.clear();
    rho.clear();
  };

  auto pg_norm = [&](const Eigen::VectorXd& ph, const std::vector<char>& a) {
    Eigen::VectorXd pg = detail::BoxOps::mask(ph, a);
    return std::sqrt(std::max(0.0, ops.inner(pg, pg)));
  };

  double gn = pg_norm(phi, act);
  double last_step = st.initial_step;
  res.history.push_back({0, f, gn, 0.0, ops.clamped(x)});
  res.reason = StopReason::max_iters;

  for (int it = 1;; ++it) {
    if (gn <= st.grad_tol) {
      res.reason = StopReason::grad_tol;
      break;
    }
    const auto nh = res.history.size();
    if (nh > static_cast<std::size_t>(st.stagnation_window)) {
      double old = res.history[nh - 1 - static_cast<std::size_t>(st.stagnation_window)].grad_norm;
      if (old > 0.0 && std::abs(gn - old) / old < st.stagnation_rel) {
        res.reason = StopReason::stagnation;
        break;
      }
    }
    if (it > st.max_iters) {
      res.reason = StopReason::max_iters;
      break;
    }

    // search direction on the free components
    Eigen::VectorXd pg = detail::BoxOps::mask(phi, act);
    Eigen::VectorXd d;
    bool scaled = false;
    if (st.method == Method::lbfgs && !S.empty()) {
      Eigen::VectorXd q = pg;
      std::vector<double> a(S.size());
      for (std::size_t i = S.size(); i-- > 0;) {
        a[i] = rho[i] * ops.inner(S[i], q);
        q -= a[i] * Y[i];
      }
      double gamma = ops.inner(S.back(), Y.back()) / ops.inner(Y.back(), Y.back());
      Eigen::VectorXd r = gamma * q;
      for (std::size_t i = 0; i < S.size(); ++i) {
        double b = rho[i] * ops.inner(Y[i], r);
        r += (a[i] - b) * S[i];
      }
      d = detail::BoxOps::mask(-r, act);
      if (!(ops.inner(pg, d) < 0.0)) {
        reset();
        d.resize(0);
      }
    }
    if (d.size() == 0) {
      d = -pg;
      scaled = true;
    }
    double slope_norm = std::sqrt(ops.inner(d, d));
    if (!(slope_norm > 0.0)) {
      res.reason = StopReason::grad_tol;
      break;
    }

    // Armijo backtracking along the projected path
    double t = scaled ? last_step / slope_norm : 1.0;
    bool accepted = false;
    Eigen::VectorXd xn, gnew;
    double fn = 0.0;
    for (int k = 0; k <= st.line_search.max_shrinks; ++k) {
      xn = ops.project(x + t * d);
      Eigen::VectorXd dx = xn - x;
      double decrease = ops.inner(phi, dx);
      if (decrease < 0.0) {
        auto vg = prob.value_grad(xn);
        fn = vg.first;
        if (std::isfinite(fn) && fn <= f + st.line_search.c1 * decrease && fn < f) {
          gnew = std::move(vg.second);
          accepted = true;
          if (prob.on_accept)
            prob.on_accept();
          break;
        }
      }
      t *= st.line_search.shrink;
    }
    if (!accepted) {
      res.line_search_failed = true;
      res.reason = StopReason::line_search_failure;
      break;
    }

    Eigen::VectorXd phin = ops.riesz(gnew);
    auto actn = ops.active(xn, phin);
    Eigen::VectorXd s = xn - x, y = phin - phi;
    double sy = ops.inner(s, y);
    if (actn != act)
      reset();
    else if (sy > 1e-12 * std::sqrt(ops.inner(s, s) * ops.inner(y, y))) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > st.memory) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
    }
    double step = std::sqrt(ops.inner(s, s));
    last_step = step;
    x = std::move(xn);
    f = fn;
    g = std::move(gnew);
    phi = std::move(phin);
    act = std::move(actn);
    gn = pg_norm(phi, act);
    res.history.push_back({it, f, gn, step, ops.clamped(x)});
  }
  res.x = std::move(x);
  res.value = f;
  res.euclidean_grad = std::move(g);
  return res;
}

// ------------------------------------------------------------ coefficient

struct MinimizeResult {
  NodalField c_min;
  /// Gradient at c_min (value, misfit, L2 representative and norm).
  GradientResult gradient;
  std::vector<IterationRecord> history;
  StopReason reason = StopReason::max_iters;
  bool line_search_failed = false;
};

/// Minimizes E over coefficients on the problem's mesh, starting at `c_init`
/// (which must respect the box inside the region and equal c_glob outside).
inline MinimizeResult minimize_on_mesh(const InversionProblem& prob, const NodalField& c_init,
                                       const OptimizeSettings& st) {
  detail::require(c_init.mesh && c_init.mesh->checksum() == prob.mesh()->checksum(),
                  "minimize_on_mesh: c_init lives on a different mesh");
  Eigen::VectorXd x0 = prob.restrict(c_init);
  const auto nf = x0.size();
  for (Eigen::Index i = 0; i < nf; ++i)
    if (!prob.bounds().contains(x0[i], 1e-12))
      throw ValidationError("minimize_on_mesh: initial coefficient " + std::to_string(x0[i]) + " outside bounds");
  x0 = x0.cwiseMax(prob.bounds().lower).cwiseMin(prob.bounds().upper);

  BoxProblem box;
  box.lower = Eigen::VectorXd::Constant(nf, prob.bounds().lower);
  box.upper = Eigen::VectorXd::Constant(nf, prob.bounds().upper);
  box.inner = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return prob.inner(a, b); };
  box.riesz = [&](const Eigen::VectorXd& g) { return prob.riesz(g); };
  // the most recent evaluation becomes `current` once the optimizer accepts it
  GradientResult pending, current;
  box.value_grad = [&](const Eigen::VectorXd& x) {
    pending = prob.gradient(prob.embed(x));
    return std::pair<double, Eigen::VectorXd>{pending.value, prob.restrict(pending.euclidean)};
  };
  box.on_accept = [&] { current = std::move(pending); };
  BoxResult r = minimize_box(box, x0, st);

  MinimizeResult res;
  res.c_min = prob.embed(r.x);
  res.gradient = std::move(current);
  res.history = std::move(r.history);
  res.reason = r.reason;
  res.line_search_failed = r.line_search_failed;
  return res;
}

} // namespace cipadapt
