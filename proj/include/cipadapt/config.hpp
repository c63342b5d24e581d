#pragma once

// Run configuration: JSON loading with per-field validation, defaults for the
// two-inclusion benchmark, and serialization for manifests.

#include "adaptivity.hpp"
#include "synth.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>

namespace cipadapt {

using Json = nlohmann::json;

struct TheoryConfig {
  int instances = 50;
  int dim = 20;
  std::vector<int> chain{4, 8, 12, 16, 20};
  double spectrum_min = 0.9;
  double spectrum_max = 1.1;
  double epsilon = 0.05;
  double delta = 0.01;
  double mu = 0.2;
  int convexity_samples = 500;
  std::vector<double> deltas{1e-2, 1e-3, 1e-4, 1e-6};
  double oracle_tol = 1e-8;
};

struct RunConfig {
  std::filesystem::path output_dir = "cipadapt_out";
  std::uint64_t seed = 1;
  int threads = 1;

  Rect domain{-4, 4, -5, 5};
  Phantom phantom;
  double inversion_h = 0.125;
  double simulation_h = 1.0 / 24;
  ShapeLimits shape;

  double t_factor = 17.8;
  double frequency = 7.45;
  double amplitude = 0.1;
  double cfl_safety = 0.5;
  double dt = 0.0; // 0: largest admissible step
  double cutoff_zeta = 0.0;

  NoiseSpec noise;
  CGlobSpec c_glob = [] {
    CGlobSpec s;
    s.mode = CGlobMode::shifted;
    s.sigma = 0.2;
    s.offset = {0.0, -0.25};
    return s;
  }();

  RegularizationPolicy regularization{0.02, 0.2, 0.02};
  double bounds_omega = 0.2;
  double bounds_d = 4.0;

  OptimizeSettings optimizer;
  RefineSettings refinement = [] {
    RefineSettings r;
    r.max_refinements = 5;
    return r;
  }();

  TheoryConfig theory;
  std::vector<double> slices{1.0};

  double alpha() const { return alpha_from_delta(regularization); }
  Bounds bounds() const { return Bounds::from(bounds_omega, bounds_d); }

  WaveConfig wave() const {
    WaveConfig w = plane_wave_config(t_factor, frequency, amplitude);
    w.cfl_safety = cfl_safety;
    w.dt = dt;
    return w;
  }

  void validate() const;
};

namespace detail {

// Typed access to one JSON object; remembers which keys were read so that
// unknown keys can be reported with their full path.
class Fields {
public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ValidationError(where("") + " must be an object");
  }

  template <class T> void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null())
      return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean())
          throw ValidationError("");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!it->is_number())
          throw ValidationError("");
        if constexpr (std::is_integral_v<T>)
          if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->get<long long>() < 0))
            throw ValidationError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string())
          throw ValidationError("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw ValidationError(where(key) + " has the wrong type");
    }
  }

  void get(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end())
      return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    if (!it->is_number())
      throw ValidationError(where(key) + " must be a number or null");
    out = it->get<double>();
  }

  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void get(const char* key, Point& out) {
    std::vector<double> v{out.x, out.y};
    get(key, v);
    if (v.size() != 2)
      throw ValidationError(where(key) + " must have two entries");
    out = {v[0], v[1]};
  }

  void get(const char* key, Rect& out) {
    std::vector<double> v{out.xmin, out.xmax, out.ymin, out.ymax};
    get(key, v);
    if (v.size() != 4)
      throw ValidationError(where(key) + " must be [x0, x1, y0, y1]");
    out = {v[0], v[1], v[2], v[3]};
  }

  template <class F> void object(const char* key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null())
      return;
    Fields sub(*it, where(key));
    f(sub);
    sub.finish();
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const {
    if (key.empty())
      return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ValidationError(where(it.key()) + " is not a recognised setting");
  }

private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json rect_json(const Rect& r) { return Json::array({r.xmin, r.xmax, r.ymin, r.ymax}); }
inline Json point_json(Point p) { return Json::array({p.x, p.y}); }

} // namespace detail

/// Reads `j` over the defaults in `cfg`. Every key must be known.
inline void apply_json(RunConfig& cfg, const Json& j) {
  detail::Fields f(j, "");
  f.get("output_dir", cfg.output_dir);
  f.get("seed", cfg.seed);
  f.get("threads", cfg.threads);
  f.get("domain", cfg.domain);
  f.object("phantom", [&](detail::Fields& p) {
    p.get("omega", cfg.phantom.omega);
    p.get("bump_amplitude", cfg.phantom.bump_amplitude);
    p.get("bump_period", cfg.phantom.bump_period);
    p.get("flat", cfg.phantom.flat);
    if (const Json* inc = p.raw("inclusions")) {
      if (!inc->is_array())
        throw ValidationError("phantom.inclusions must be an array");
      cfg.phantom.inclusions.clear();
      for (std::size_t i = 0; i < inc->size(); ++i) {
        Square s;
        detail::Fields q((*inc)[i], "phantom.inclusions[" + std::to_string(i) + "]");
        q.get("center", s.center);
        q.get("side", s.side);
        q.get("value", s.value);
        q.finish();
        cfg.phantom.inclusions.push_back(s);
      }
    }
  });
  f.object("mesh", [&](detail::Fields& m) {
    m.get("inversion_h", cfg.inversion_h);
    m.get("simulation_h", cfg.simulation_h);
    m.object("shape", [&](detail::Fields& s) {
      s.get("a1", cfg.shape.a1);
      s.get("a2", cfg.shape.a2);
      s.get("c_T", cfg.shape.c_T);
    });
  });
  f.object("wave", [&](detail::Fields& w) {
    w.get("t_factor", cfg.t_factor);
    w.get("frequency", cfg.frequency);
    w.get("amplitude", cfg.amplitude);
    w.get("cfl_safety", cfg.cfl_safety);
    w.get("dt", cfg.dt);
    w.get("cutoff_zeta", cfg.cutoff_zeta);
  });
  f.object("noise", [&](detail::Fields& n) {
    n.get("level", cfg.noise.level);
    n.get("per_sample", cfg.noise.per_sample);
  });
  f.object("c_glob", [&](detail::Fields& c) {
    std::string mode = to_string(cfg.c_glob.mode);
    c.get("mode", mode);
    cfg.c_glob.mode = cglob_mode_from_string(mode);
    c.get("sigma", cfg.c_glob.sigma);
    c.get("with_background", cfg.c_glob.with_background);
    c.get("peak", cfg.c_glob.peak);
    c.get("shift_index", cfg.c_glob.shift_index);
    c.get("offset", cfg.c_glob.offset);
    c.get("path", cfg.c_glob.path);
  });
  f.object("regularization", [&](detail::Fields& r) {
    r.get("delta", cfg.regularization.delta);
    r.get("mu", cfg.regularization.mu);
    r.get("alpha", cfg.regularization.alpha_override);
  });
  f.object("bounds", [&](detail::Fields& b) {
    b.get("omega", cfg.bounds_omega);
    b.get("d", cfg.bounds_d);
  });
  f.object("optimizer", [&](detail::Fields& o) {
    std::string method = to_string(cfg.optimizer.method);
    o.get("method", method);
    try {
      cfg.optimizer.method = method_from_string(method);
    } catch (const Error&) {
      throw ValidationError("optimizer.method: unknown value '" + method + "'");
    }
    o.get("memory", cfg.optimizer.memory);
    o.get("grad_tol", cfg.optimizer.grad_tol);
    o.get("stagnation_window", cfg.optimizer.stagnation_window);
    o.get("stagnation_rel", cfg.optimizer.stagnation_rel);
    o.get("max_iters", cfg.optimizer.max_iters);
    o.get("initial_step", cfg.optimizer.initial_step);
    o.object("line_search", [&](detail::Fields& l) {
      l.get("c1", cfg.optimizer.line_search.c1);
      l.get("shrink", cfg.optimizer.line_search.shrink);
      l.get("max_shrinks", cfg.optimizer.line_search.max_shrinks);
    });
  });
  f.object("refine", [&](detail::Fields& r) {
    r.get("beta1", cfg.refinement.beta1);
    r.get("beta2", cfg.refinement.beta2);
    r.get("use_second", cfg.refinement.use_second);
    r.get("max_refinements", cfg.refinement.max_refinements);
    r.get("eta_tie_tol", cfg.refinement.eta_tie_tol);
    r.get("max_growth", cfg.refinement.max_growth);
    r.get("online_stop", cfg.refinement.online_stop);
    if (const Json* reg = r.raw("region")) {
      Rect rr{};
      Json wrap = {{"region", *reg}};
      detail::Fields w(wrap, "refine");
      w.get("region", rr);
      cfg.refinement.refine_region = rr;
    }
  });
  f.object("theory", [&](detail::Fields& t) {
    auto& th = cfg.theory;
    t.get("instances", th.instances);
    t.get("dim", th.dim);
    t.get("chain", th.chain);
    t.get("spectrum_min", th.spectrum_min);
    t.get("spectrum_max", th.spectrum_max);
    t.get("epsilon", th.epsilon);
    t.get("delta", th.delta);
    t.get("mu", th.mu);
    t.get("convexity_samples", th.convexity_samples);
    t.get("deltas", th.deltas);
    t.get("oracle_tol", th.oracle_tol);
  });
  f.object("report", [&](detail::Fields& r) { r.get("slices", cfg.slices); });
  f.finish();
}

inline Json to_json(const RunConfig& c) {
  Json inc = Json::array();
  for (const auto& s : c.phantom.inclusions)
    inc.push_back({{"center", detail::point_json(s.center)}, {"side", s.side}, {"value", s.value}});
  Json refinement = {{"beta1", c.refinement.beta1},
                     {"beta2", c.refinement.beta2},
                     {"use_second", c.refinement.use_second},
                     {"max_refinements", c.refinement.max_refinements},
                     {"eta_tie_tol", c.refinement.eta_tie_tol},
                     {"max_growth", c.refinement.max_growth},
                     {"online_stop", c.refinement.online_stop},
                     {"region", nullptr}};
  if (c.refinement.refine_region)
    refinement["region"] = detail::rect_json(*c.refinement.refine_region);
  const auto& th = c.theory;
  return {
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed},
      {"threads", c.threads},
      {"domain", detail::rect_json(c.domain)},
      {"phantom",
       {{"omega", detail::rect_json(c.phantom.omega)},
        {"inclusions", inc},
        {"bump_amplitude", c.phantom.bump_amplitude},
        {"bump_period", c.phantom.bump_period},
        {"flat", detail::rect_json(c.phantom.flat)}}},
      {"mesh",
       {{"inversion_h", c.inversion_h},
        {"simulation_h", c.simulation_h},
        {"shape", {{"a1", c.shape.a1}, {"a2", c.shape.a2}, {"c_T", c.shape.c_T}}}}},
      {"wave",
       {{"t_factor", c.t_factor},
        {"frequency", c.frequency},
        {"amplitude", c.amplitude},
        {"cfl_safety", c.cfl_safety},
        {"dt", c.dt},
        {"cutoff_zeta", c.cutoff_zeta}}},
      {"noise", {{"level", c.noise.level}, {"per_sample", c.noise.per_sample}}},
      {"c_glob",
       {{"mode", to_string(c.c_glob.mode)},
        {"sigma", c.c_glob.sigma},
        {"with_background", c.c_glob.with_background},
        {"peak", c.c_glob.peak ? Json(*c.c_glob.peak) : Json(nullptr)},
        {"shift_index", c.c_glob.shift_index},
        {"offset", detail::point_json(c.c_glob.offset)},
        {"path", c.c_glob.path.string()}}},
      {"regularization",
       {{"delta", c.regularization.delta},
        {"mu", c.regularization.mu},
        {"alpha", c.regularization.alpha_override ? Json(*c.regularization.alpha_override) : Json(nullptr)}}},
      {"bounds", {{"omega", c.bounds_omega}, {"d", c.bounds_d}}},
      {"optimizer",
       {{"method", to_string(c.optimizer.method)},
        {"memory", c.optimizer.memory},
        {"grad_tol", c.optimizer.grad_tol},
        {"stagnation_window", c.optimizer.stagnation_window},
        {"stagnation_rel", c.optimizer.stagnation_rel},
        {"max_iters", c.optimizer.max_iters},
        {"initial_step", c.optimizer.initial_step},
        {"line_search",
         {{"c1", c.optimizer.line_search.c1},
          {"shrink", c.optimizer.line_search.shrink},
          {"max_shrinks", c.optimizer.line_search.max_shrinks}}}}},
      {"refine", refinement},
      {"theory",
       {{"instances", th.instances},
        {"dim", th.dim},
        {"chain", th.chain},
        {"spectrum_min", th.spectrum_min},
        {"spectrum_max", th.spectrum_max},
        {"epsilon", th.epsilon},
        {"delta", th.delta},
        {"mu", th.mu},
        {"convexity_samples", th.convexity_samples},
        {"deltas", th.deltas},
        {"oracle_tol", th.oracle_tol}}},
      {"report", {{"slices", c.slices}}},
  };
}

inline void RunConfig::validate() const {
  using detail::require;
  require(threads >= 1, "threads must be >= 1");
  require(domain.width() > 0 && domain.height() > 0, "domain must have positive extent");
  phantom.validate();
  require(phantom.omega.xmin > domain.xmin && phantom.omega.xmax < domain.xmax &&
              phantom.omega.ymin > domain.ymin && phantom.omega.ymax < domain.ymax,
          "phantom.omega must lie strictly inside domain");
  require(inversion_h > 0.0, "mesh.inversion_h must be positive");
  require(simulation_h > 0.0, "mesh.simulation_h must be positive");
  require(shape.a1 > 0.0 && shape.a2 > 0.0 && shape.c_T >= 1.0, "mesh.shape constants are invalid");
  require(t_factor > 0.0, "wave.t_factor must be positive");
  require(frequency > 0.0, "wave.frequency must be positive");
  require(cfl_safety > 0.0 && cfl_safety <= 1.0, "wave.cfl_safety must lie in (0, 1]");
  require(dt >= 0.0, "wave.dt must be non-negative (0 selects the CFL step)");
  require(cutoff_zeta >= 0.0, "wave.cutoff_zeta must be non-negative");
  noise.validate();
  c_glob.validate(phantom);
  if (!regularization.alpha_override) {
    require(regularization.mu > 0.0 && regularization.mu < 0.25, "regularization.mu must lie in (0, 1/4)");
    require(regularization.delta > 0.0 && regularization.delta < 1.0, "regularization.delta must lie in (0, 1)");
  } else {
    require(*regularization.alpha_override > 0.0, "regularization.alpha must be positive");
    require(regularization.delta > 0.0 && regularization.delta < 1.0, "regularization.delta must lie in (0, 1)");
  }
  require(bounds_omega > 0.0 && bounds_omega < 1.0, "bounds.omega must lie in (0, 1)");
  require(bounds_d > 1.0, "bounds.d must exceed 1");
  require(phantom.max_value() <= bounds_d + bounds_omega, "phantom values exceed bounds.d + bounds.omega");
  optimizer.validate();
  refinement.validate();
  const auto& th = theory;
  require(th.instances >= 1, "theory.instances must be >= 1");
  require(th.dim >= 2, "theory.dim must be >= 2");
  require(!th.chain.empty() && th.chain.back() == th.dim, "theory.chain must end at theory.dim");
  for (std::size_t i = 0; i < th.chain.size(); ++i)
    require(th.chain[i] >= 1 && (i == 0 || th.chain[i] > th.chain[i - 1]), "theory.chain must increase");
  require(th.spectrum_min > 0.0 && th.spectrum_min <= th.spectrum_max, "theory.spectrum_min/max are invalid");
  require(th.delta > 0.0 && th.delta < 1.0, "theory.delta must lie in (0, 1)");
  require(th.mu > 0.0 && th.mu < 0.25, "theory.mu must lie in (0, 1/4)");
  require(th.convexity_samples >= 1, "theory.convexity_samples must be >= 1");
  require(th.deltas.size() >= 2, "theory.deltas needs at least two values");
  for (double d : th.deltas)
    require(d > 0.0 && d < 1.0, "theory.deltas must lie in (0, 1)");
  require(th.oracle_tol > 0.0, "theory.oracle_tol must be positive");
  for (double y : slices)
    require(y >= phantom.omega.ymin && y <= phantom.omega.ymax, "report.slices must lie inside phantom.omega");
}

/// Loads a config file. A run manifest is accepted too; its stored
/// effective configuration is used.
inline RunConfig load_config(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is)
    throw IoError("cannot read config " + p.string());
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ValidationError("config " + p.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("effective_config"))
    j = j["effective_config"];
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

/// Relative output directories are placed under CIPADAPT_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output(const std::filesystem::path& p) {
  if (p.is_absolute())
    return p;
  if (const char* root = std::getenv("CIPADAPT_OUTPUT_ROOT"); root && *root)
    return std::filesystem::path(root) / p;
  return p;
}

} // namespace cipadapt
