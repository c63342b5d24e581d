#pragma once

// Outer adaptive loop: minimize on the current mesh, mark elements from the
// gradient and coefficient indicators, refine locally, warm-start the next
// level. Relaxation ratios eta are evaluated on the finest mesh.

#include "error.hpp"
#include "fem.hpp"
#include "mesh.hpp"
#include "objective.hpp"
#include "optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cipadapt {

struct RefineSettings {
  double beta1 = 0.2;
  double beta2 = 0.6;
  bool use_second = true;
  /// Refinable subdomain; defaults to the coefficient region.
  std::optional<Rect> refine_region;
  int max_refinements = 4;
  double eta_tie_tol = 0.05;
  /// Per-step element growth limit; marks are thinned until it holds.
  double max_growth = 1.6;
  /// Stop as soon as the consecutive-difference ratio increases.
  bool online_stop = false;
  ShapeLimits limits;

  void validate() const {
    detail::require(beta1 > 0.0 && beta1 < 1.0, "refine.beta1 must lie in (0, 1)");
    detail::require(beta2 > 0.0 && beta2 < 1.0, "refine.beta2 must lie in (0, 1)");
    detail::require(max_refinements >= 0, "refine.max_refinements must be non-negative");
    detail::require(eta_tie_tol >= 0.0, "refine.eta_tie_tol must be non-negative");
    detail::require(max_growth > 1.0, "refine.max_growth must exceed 1");
  }
};

namespace detail {

// Triangles with at least one node whose value reaches beta * (max over the
// region); only triangles with centroid in the region are considered.
inline std::vector<int> mark_by_threshold(const TriMesh& mesh, const std::vector<double>& value, double beta,
                                          const std::optional<Rect>& region) {
  require(beta > 0.0 && beta < 1.0, "indicator tolerance must lie in (0, 1)");
  require(value.size() == mesh.num_nodes(), "indicator field does not match the mesh");
  const auto in = triangle_mask(mesh, region);
  double mx = 0.0;
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k)
    if (in[k])
      for (int v : mesh.triangle(static_cast<int>(k)))
        mx = std::max(mx, value[static_cast<std::size_t>(v)]);
  std::vector<int> marked;
  if (!(mx > 0.0))
    return marked;
  const double thr = beta * mx;
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k) {
    if (!in[k])
      continue;
    double ind = 0.0;
    for (int v : mesh.triangle(static_cast<int>(k)))
      ind = std::max(ind, value[static_cast<std::size_t>(v)]);
    if (ind >= thr)
      marked.push_back(static_cast<int>(k));
  }
  return marked;
}

} // namespace detail

/// Triangles touching a node where |grad| >= beta1 * max |grad|.
/// An identically zero gradient marks nothing.
inline std::vector<int> indicator_gradient(const NodalField& grad, double beta1,
                                           const std::optional<Rect>& region = {}) {
  std::vector<double> a(grad.size());
  std::transform(grad.values.begin(), grad.values.end(), a.begin(), [](double v) { return std::abs(v); });
  return detail::mark_by_threshold(*grad.mesh, a, beta1, region);
}

/// Triangles touching a node where c >= beta2 * max c.
inline std::vector<int> indicator_coefficient(const NodalField& c, double beta2,
                                              const std::optional<Rect>& region = {}) {
  return detail::mark_by_threshold(*c.mesh, c.values, beta2, region);
}

inline std::vector<int> union_marks(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

/// max |grad c| over triangles with centroid in the region.
inline double gradient_linf(const NodalField& c, const std::optional<Rect>& region) {
  const auto& m = *c.mesh;
  const auto in = triangle_mask(m, region);
  double mx = 0.0;
  for (std::size_t k = 0; k < m.num_triangles(); ++k) {
    if (!in[k])
      continue;
    const auto& t = m.triangle(static_cast<int>(k));
    Point a = m.node(t[0]), b = m.node(t[1]), d = m.node(t[2]);
    double fa = c[static_cast<std::size_t>(t[0])], fb = c[static_cast<std::size_t>(t[1])],
           fd = c[static_cast<std::size_t>(t[2])];
    double det = (b.x - a.x) * (d.y - a.y) - (d.x - a.x) * (b.y - a.y);
    double gx = ((fb - fa) * (d.y - a.y) - (fd - fa) * (b.y - a.y)) / det;
    double gy = ((fd - fa) * (b.x - a.x) - (fb - fa) * (d.x - a.x)) / det;
    mx = std::max(mx, std::hypot(gx, gy));
  }
  return mx;
}

// ------------------------------------------------------------------ run

struct LevelRecord {
  int level = 1;
  MeshPtr mesh;
  NodalField c;
  double value = 0.0;
  double grad_norm = 0.0;
  double aposteriori = 0.0;
  std::size_t elements = 0;
  std::vector<IterationRecord> history;
  StopReason reason = StopReason::max_iters;
  /// Triangles marked for the next refinement (0 on the last level).
  std::size_t marked = 0;
  /// Thresholds actually used after growth-limit thinning.
  double beta1_used = 0.0, beta2_used = 0.0;
  /// max |grad c_n| over the region times the level-1 mesh size.
  double smoothness_proxy = 0.0;
};

enum class AdaptiveStop { max_refinements, empty_marks, stationary_start, online_eta_increase };

inline std::string to_string(AdaptiveStop s) {
  switch (s) {
  case AdaptiveStop::max_refinements: return "max_refinements";
  case AdaptiveStop::empty_marks: return "empty_mark_set";
  case AdaptiveStop::stationary_start: return "stationary_start";
  case AdaptiveStop::online_eta_increase: return "online_eta_increase";
  }
  return "?";
}

struct AdaptiveRun {
  std::vector<LevelRecord> levels;
  /// Retrospective: distances[n] = |c_n - c_ref| on the finest mesh with
  /// c_ref the last level; eta[n] = distances[n+1] / distances[n].
  std::vector<double> distances;
  std::vector<double> eta;
  /// Prospective: eta_online[n] = |c_{n+2} - c_{n+1}| / |c_{n+1} - c_n|.
  std::vector<double> eta_online;
  std::string reference_choice = "final_level";
  AdaptiveStop stop = AdaptiveStop::max_refinements;
  /// 0-based transition index with the first eta increase, if any.
  std::optional<int> n0;
  /// The increase at n0 is within the tie tolerance.
  bool eta_tie = false;
  /// 0-based level index of the selected reconstruction.
  int final_level = 0;

  const LevelRecord& final() const { return levels.at(static_cast<std::size_t>(final_level)); }
};

/// Everything the loop needs to rebuild the problem on a new mesh.
struct AdaptiveInputs {
  BoundaryTraceMatrix data;
  NodalField c_glob; // on the level-1 mesh
  ProblemSettings problem;
  OptimizeSettings optimize;
  RefineSettings refine;
  /// Noise level and exponent entering the a posteriori bound.
  double delta = 0.02;
  double mu = 0.2;
};

struct FinalSelection {
  std::optional<int> n0;
  bool tie = false;
  int final_level = 0;
};

/// Stopping rule on the ratios eta[n] (levels n -> n+1, 0-based): n0 is the
/// first n with eta[n] > eta[n-1] and the reconstruction is level n0; a tie
/// (increase within tie_tol relative) selects the same level and is flagged.
/// Without an increase the last level is selected.
inline FinalSelection select_final_level(const std::vector<double>& eta, double tie_tol) {
  FinalSelection s;
  s.final_level = static_cast<int>(eta.size());
  for (std::size_t n = 1; n < eta.size(); ++n) {
    if (eta[n] > eta[n - 1]) {
      s.n0 = static_cast<int>(n);
      s.tie = eta[n] - eta[n - 1] <= tie_tol * eta[n - 1];
      s.final_level = static_cast<int>(n);
      break;
    }
  }
  return s;
}

namespace detail {

inline double ratio(double num, double den) {
  if (den > 0.0)
    return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

// Retrospective and online ratios plus the n0 / final-level rule.
inline void evaluate_relaxation(AdaptiveRun& run, const std::optional<Rect>& region, double tie_tol) {
  const auto& finest = run.levels.back().mesh;
  std::vector<NodalField> fine;
  for (const auto& l : run.levels)
    fine.push_back(interpolate(l.c, finest));
  const auto& ref = fine.back();
  run.distances.clear();
  run.eta.clear();
  run.eta_online.clear();
  for (const auto& f : fine)
    run.distances.push_back(l2_norm(f - ref, region));
  for (std::size_t n = 0; n + 1 < fine.size(); ++n)
    run.eta.push_back(ratio(run.distances[n + 1], run.distances[n]));
  for (std::size_t n = 0; n + 2 < fine.size(); ++n)
    run.eta_online.push_back(ratio(l2_norm(fine[n + 2] - fine[n + 1], region), l2_norm(fine[n + 1] - fine[n], region)));

  auto sel = select_final_level(run.eta, tie_tol);
  run.n0 = sel.n0;
  run.eta_tie = sel.tie;
  run.final_level = sel.final_level;
}

} // namespace detail

/// Runs the adaptive loop from c_glob on its own (level-1) mesh. `on_level`
/// is invoked after each completed level.
inline AdaptiveRun run_adaptive(const AdaptiveInputs& in,
                                const std::function<void(const LevelRecord&)>& on_level = {}) {
  in.refine.validate();
  in.optimize.validate();
  const auto region = in.refine.refine_region ? in.refine.refine_region : in.problem.region;
  const auto mesh1 = in.c_glob.mesh;
  const double h1 = mesh1->h_max();

  AdaptiveRun run;
  MeshPtr mesh = mesh1;
  NodalField c_start = in.c_glob;
  for (int level = 1;; ++level) {
    NodalField cg = level == 1 ? in.c_glob : interpolate(in.c_glob, mesh);
    InversionProblem prob(mesh, in.data, cg, in.problem);
    auto res = minimize_on_mesh(prob, c_start, in.optimize);

    LevelRecord rec;
    rec.level = level;
    rec.mesh = mesh;
    rec.c = res.c_min;
    rec.value = res.gradient.value;
    rec.grad_norm = res.gradient.l2_norm;
    rec.aposteriori = aposteriori_bound(rec.grad_norm, in.delta, in.mu);
    rec.elements = mesh->num_triangles();
    rec.history = std::move(res.history);
    rec.reason = res.reason;
    rec.smoothness_proxy = gradient_linf(rec.c, region) * h1;

    const bool stationary = rec.history.size() == 1 && rec.reason == StopReason::grad_tol;
    std::optional<AdaptiveStop> stop;
    if (stationary)
      stop = AdaptiveStop::stationary_start;

    if (!stop && in.refine.online_stop && run.levels.size() >= 2) {
      // consecutive-difference ratio including this level
      const auto& a = run.levels[run.levels.size() - 2].c;
      const auto& b = run.levels.back().c;
      double prev = l2_norm(interpolate(b, mesh) - interpolate(a, mesh), region);
      double cur = l2_norm(rec.c - interpolate(b, mesh), region);
      double eta_now = detail::ratio(cur, prev);
      if (!run.eta_online.empty() && eta_now > run.eta_online.back())
        stop = AdaptiveStop::online_eta_increase;
      run.eta_online.push_back(eta_now);
    }
    if (!stop && level > in.refine.max_refinements)
      stop = AdaptiveStop::max_refinements;

    std::vector<int> marks;
    MeshPtr next;
    if (!stop) {
      double b1 = in.refine.beta1, b2 = in.refine.beta2;
      for (int attempt = 0;; ++attempt) {
        marks = indicator_gradient(res.gradient.l2, b1, region);
        if (marks.empty())
          break; // zero gradient: nothing to refine
        if (in.refine.use_second)
          marks = union_marks(std::move(marks), indicator_coefficient(rec.c, b2, region));
        auto refined = std::make_shared<const TriMesh>(refine_local(*mesh, marks, in.refine.limits));
        double growth = static_cast<double>(refined->num_triangles()) / static_cast<double>(mesh->num_triangles());
        if (growth < in.refine.max_growth) {
          next = std::move(refined);
          break;
        }
        if (attempt >= 30)
          throw NumericalError("adaptive refinement: element growth " + std::to_string(growth) +
                               " exceeds the limit even with indicator tolerances near 1");
        b1 = 0.5 * (1.0 + b1);
        b2 = 0.5 * (1.0 + b2);
      }
      rec.beta1_used = b1;
      rec.beta2_used = b2;
      if (marks.empty())
        stop = AdaptiveStop::empty_marks;
    }
    rec.marked = marks.size();
    run.levels.push_back(std::move(rec));
    if (on_level)
      on_level(run.levels.back());
    if (stop) {
      run.stop = *stop;
      break;
    }
    c_start = interpolate(run.levels.back().c, next);
    mesh = std::move(next);
  }

  detail::evaluate_relaxation(run, region, in.refine.eta_tie_tol);
  if (run.stop == AdaptiveStop::online_eta_increase) {
    run.reference_choice = "consecutive_levels";
    run.final_level = static_cast<int>(run.levels.size()) - 1;
  }
  return run;
}

} // namespace cipadapt
