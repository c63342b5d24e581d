#pragma once

// The four commands behind the command-line tool. Each command writes its
// artifacts plus a manifest.json holding the effective configuration, so a
// run can be repeated with `--config <manifest>`.

#include "config.hpp"
#include "theory.hpp"
#include "trace_io.hpp"

#include <functional>
#include <iostream>
#include <map>

namespace cipadapt::cli {

enum ExitCode : int { ok = 0, failure = 1, invalid = 2, numerical = 3, inverse_crime = 4 };

/// Runs `body`, reporting library errors on `err` and mapping them to exit codes.
inline int guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const InverseCrimeError& e) {
    err << "error: inverse crime: " << e.what() << '\n';
    return inverse_crime;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return invalid;
  } catch (const NumericalError& e) {
    err << "error: numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failure;
  }
}

namespace detail {

inline void write_json(const std::filesystem::path& p, const Json& j) {
  std::ofstream os(p);
  if (!os)
    throw IoError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is)
    throw IoError("cannot read " + p.string());
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

inline std::ofstream open_csv(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os)
    throw IoError("cannot write " + p.string());
  os << std::setprecision(12);
  return os;
}

inline std::string number_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

inline MeshPtr make_mesh(const RunConfig& cfg, double h) {
  return std::make_shared<const TriMesh>(build_structured_mesh(cfg.domain, h, cfg.phantom.omega));
}

inline Json manifest_header(const std::string& command, const RunConfig& cfg) {
  return {{"command", command}, {"format", 1}, {"threads", cfg.threads}, {"effective_config", to_json(cfg)}};
}

// Maximum of the field over the region and a node where it is attained.
inline std::pair<double, Point> region_max(const NodalField& f, const Rect& region) {
  double best = -std::numeric_limits<double>::infinity();
  Point at{};
  for (std::size_t i = 0; i < f.size(); ++i) {
    Point p = f.mesh->node(static_cast<int>(i));
    if (region.contains(p, 1e-12) && f[i] > best) {
      best = f[i];
      at = p;
    }
  }
  return {best, at};
}

} // namespace detail

// ---------------------------------------------------------------- simulate

struct SimulateOutput {
  std::filesystem::path dir;
  std::uint64_t sim_mesh_checksum = 0;
};

/// Writes clean.csv, noisy.csv, detectors.csv and manifest.json into `dir`.
inline SimulateOutput simulate(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  auto sim = detail::make_mesh(cfg, cfg.simulation_h);
  log << "simulate: " << sim->num_triangles() << " triangles, h = " << cfg.simulation_h << '\n';
  auto data = generate_data(cfg.phantom, sim, cfg.wave());
  NoiseSpec noise = cfg.noise;
  noise.seed = cfg.seed;
  auto noisy = add_noise(data.trace, noise);

  save_trace_csv(dir / "clean.csv", data.trace);
  save_trace_csv(dir / "noisy.csv", noisy);
  {
    auto os = detail::open_csv(dir / "detectors.csv");
    os << std::setprecision(17) << "node, x, y\n";
    for (std::size_t i = 0; i < data.trace.num_detectors(); ++i)
      os << data.trace.detector_nodes[i] << ", " << data.trace.positions[i].x << ", " << data.trace.positions[i].y
         << '\n';
  }
  Json m = detail::manifest_header("simulate", cfg);
  m["seed"] = cfg.seed;
  m["noise_level"] = cfg.noise.level;
  m["sim_mesh_checksum"] = checksum_hex(data.sim_mesh_checksum);
  m["sim_mesh"] = {{"h", cfg.simulation_h}, {"nodes", sim->num_nodes()}, {"triangles", sim->num_triangles()}};
  m["wave"] = {{"dt", data.wave.dt}, {"n_steps", data.wave.n_steps()}, {"T", data.wave.T_final}};
  m["detectors"] = data.trace.num_detectors();
  m["files"] = {{"clean", "clean.csv"}, {"noisy", "noisy.csv"}, {"detectors", "detectors.csv"}};
  detail::write_json(dir / "manifest.json", m);
  log << "simulate: " << data.trace.num_detectors() << " detectors x " << data.trace.num_times()
      << " samples written to " << dir.string() << '\n';
  return {dir, data.sim_mesh_checksum};
}

// ------------------------------------------------------------------ invert

struct LoadedData {
  BoundaryTraceMatrix trace;
  std::uint64_t sim_mesh_checksum = 0;
  Json manifest;
};

inline LoadedData load_data(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw IoError("data manifest " + (dir / "manifest.json").string() + " not found");
  LoadedData d;
  d.manifest = detail::read_json(dir / "manifest.json");
  if (d.manifest.value("command", "") != "simulate")
    throw IoError((dir / "manifest.json").string() + " is not a data manifest");
  const auto files = d.manifest.at("files");
  d.trace = load_trace_csv(dir / files.at("noisy").get<std::string>());

  std::ifstream is(dir / files.at("detectors").get<std::string>());
  if (!is)
    throw IoError("cannot read detector positions in " + dir.string());
  std::string line;
  std::getline(is, line);
  std::map<int, Point> pos;
  int node;
  char comma;
  Point p;
  while (is >> node >> comma >> p.x >> comma >> p.y)
    pos[node] = p;
  d.trace.positions.clear();
  for (int n : d.trace.detector_nodes) {
    auto it = pos.find(n);
    if (it == pos.end())
      throw IoError("detector " + std::to_string(n) + " has no recorded position");
    d.trace.positions.push_back(it->second);
  }
  d.sim_mesh_checksum = std::stoull(d.manifest.at("sim_mesh_checksum").get<std::string>(), nullptr, 16);
  return d;
}

/// Adaptive inversion of the data in `data_dir`. Writes level_<n>/ folders,
/// run.csv and manifest.json into `dir`.
inline AdaptiveRun invert(const RunConfig& cfg, const std::filesystem::path& data_dir,
                          const std::filesystem::path& dir, std::ostream& log) {
  cfg.validate();
  LoadedData data = load_data(data_dir);
  const Json& dcfg = data.manifest.at("effective_config").at("wave");
  for (const char* key : {"t_factor", "frequency", "amplitude"})
    if (dcfg.at(key).get<double>() != to_json(cfg)["wave"][key].get<double>())
      throw ValidationError(std::string("wave.") + key + " differs from the data manifest");

  auto mesh = detail::make_mesh(cfg, cfg.inversion_h);
  if (mesh->checksum() == data.sim_mesh_checksum)
    throw InverseCrimeError("inversion mesh checksum " + checksum_hex(mesh->checksum()) +
                            " equals the data-generation mesh checksum");
  std::filesystem::create_directories(dir);

  AdaptiveInputs in;
  in.data = data.trace;
  in.c_glob = make_c_glob(cfg.phantom, mesh, cfg.c_glob);
  in.problem.wave = cfg.wave();
  in.problem.region = cfg.phantom.omega;
  in.problem.bounds = cfg.bounds();
  in.problem.alpha = cfg.alpha();
  in.problem.cutoff.zeta = cfg.cutoff_zeta;
  in.problem.data_mesh_checksum = data.sim_mesh_checksum;
  in.optimize = cfg.optimizer;
  in.refine = cfg.refinement;
  in.refine.limits = cfg.shape;
  in.delta = cfg.regularization.delta;
  in.mu = cfg.regularization.mu;
  save_field(dir / "c_glob.field", in.c_glob);

  log << "invert: alpha = " << in.problem.alpha << ", " << mesh->num_triangles() << " triangles on level 1\n";
  auto run = run_adaptive(in, [&](const LevelRecord& l) {
    auto ldir = dir / ("level_" + std::to_string(l.level));
    std::filesystem::create_directories(ldir);
    save_mesh(ldir / "mesh.txt", *l.mesh);
    save_field(ldir / "c.field", l.c);
    auto os = detail::open_csv(ldir / "iterations.csv");
    write_iterations_csv(os, l.history);
    auto [mx, at] = detail::region_max(l.c, cfg.phantom.omega);
    log << "level " << l.level << ": " << l.elements << " triangles, E = " << l.value << ", |E'| = " << l.grad_norm
        << ", " << l.history.size() - 1 << " iterations (" << to_string(l.reason) << "), max c = " << mx << " at ("
        << at.x << ", " << at.y << ")\n";
  });

  {
    auto os = detail::open_csv(dir / "run.csv");
    os << "level, elements, E, grad_norm, aposteriori_bound, eta\n";
    for (std::size_t n = 0; n < run.levels.size(); ++n) {
      const auto& l = run.levels[n];
      os << l.level << ", " << l.elements << ", " << l.value << ", " << l.grad_norm << ", " << l.aposteriori << ", ";
      if (n < run.eta.size())
        os << run.eta[n];
      os << '\n';
    }
  }
  Json levels = Json::array();
  for (const auto& l : run.levels) {
    auto [mx, at] = detail::region_max(l.c, cfg.phantom.omega);
    Json rec = {{"level", l.level},
                      {"elements", l.elements},
                      {"mesh_checksum", checksum_hex(l.mesh->checksum())},
                      {"E", l.value},
                      {"grad_norm", l.grad_norm},
                      {"aposteriori_bound", l.aposteriori},
                      {"iterations", l.history.size() - 1},
                      {"stop_reason", to_string(l.reason)},
                      {"marked", l.marked},
                      {"beta1_used", l.beta1_used},
                      {"beta2_used", l.beta2_used},
                      {"smoothness_proxy", l.smoothness_proxy},
                      {"max_c", mx},
                      {"argmax", cipadapt::detail::point_json(at)}};
    levels.push_back(std::move(rec));
  }
  Json m = detail::manifest_header("invert", cfg);
  m["data_dir"] = std::filesystem::absolute(data_dir).string();
  m["data_sim_mesh_checksum"] = checksum_hex(data.sim_mesh_checksum);
  m["state_problem"] = "plane wave on the outer domain, coefficient fixed to 1 outside omega";
  m["alpha"] = in.problem.alpha;
  m["levels"] = levels;
  m["distances"] = run.distances;
  m["eta"] = run.eta;
  m["eta_online"] = run.eta_online;
  m["reference_choice"] = run.reference_choice;
  m["stop"] = to_string(run.stop);
  m["n0"] = run.n0 ? Json(*run.n0 + 1) : Json(nullptr);
  m["eta_tie"] = run.eta_tie;
  m["final_level"] = run.final_level + 1;
  detail::write_json(dir / "manifest.json", m);
  log << "invert: stopped (" << to_string(run.stop) << "), final level " << run.final_level + 1 << '\n';
  return run;
}

// ------------------------------------------------------------------ theory

struct TheorySummary {
  double oracle_max_error = 0.0;
  bool oracle_ok = true;
};

/// Writes convexity.csv, relaxation.csv and rate.csv into `dir` and checks
/// Gauss-Newton against the closed-form linear minimizer.
inline TheorySummary run_theory(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log) {
  using namespace theory;
  cfg.validate();
  const auto& th = cfg.theory;
  std::filesystem::create_directories(dir);
  Rng rng(cfg.seed);
  TheorySummary sum;

  // linear oracle
  std::uniform_int_distribution<int> dims(2, 30);
  for (int i = 0; i < th.instances; ++i) {
    int n = dims(rng);
    Mat a = random_matrix_with_spectrum(n, 0.1, 2.0, rng);
    Vec y = gaussian_vector(n, rng), x0 = gaussian_vector(n, rng);
    Vec x = minimize_tikhonov_fd(linear_operator(a), y, x0, 0.05);
    sum.oracle_max_error = std::max(sum.oracle_max_error, (x - tikhonov_closed_form(a, y, x0, 0.05)).norm());
  }
  sum.oracle_ok = sum.oracle_max_error <= th.oracle_tol;

  const double alpha = std::pow(th.delta, 2 * th.mu);
  {
    auto os = detail::open_csv(dir / "convexity.csv");
    os << "instance, operator, alpha, radius, min_ratio, pass_fraction, threshold\n";
    for (int i = 0; i < th.instances; ++i) {
      Vec x0 = gaussian_vector(th.dim, rng);
      auto pure = check_strong_convexity(constant_operator(gaussian_vector(th.dim, rng), th.dim),
                                         Vec::Zero(th.dim), x0, alpha, x0, 1.0, th.convexity_samples, rng);
      os << i << ", pure_regularizer, " << alpha << ", 1, " << pure.min_ratio << ", " << pure.pass_fraction << ", "
         << alpha / 2 << '\n';
      Mat a = random_matrix_with_spectrum(th.dim, th.spectrum_min, th.spectrum_max, rng);
      auto op = quadratic_perturbation(a, th.epsilon);
      Vec xs = gaussian_vector(th.dim, rng);
      Vec y = op.eval(xs) + th.delta * unit_vector(th.dim, rng);
      const double radius = std::pow(th.delta, 3 * th.mu);
      auto mild = check_strong_convexity(op, y, xs, alpha, xs, radius, th.convexity_samples, rng);
      os << i << ", quadratic_perturbation, " << alpha << ", " << radius << ", " << mild.min_ratio << ", "
         << mild.pass_fraction << ", " << alpha / 2 << '\n';
    }
  }
  {
    auto os = detail::open_csv(dir / "relaxation.csv");
    os << "instance, level, subspace_dim, distance, energy_distance, eta, aposteriori\n";
    for (int i = 0; i < th.instances; ++i) {
      Mat a = random_matrix_with_spectrum(th.dim, th.spectrum_min, th.spectrum_max, rng);
      auto chain = random_nested_chain(th.dim, th.chain, rng);
      auto rep = relaxation_experiment(linear_operator(a), gaussian_vector(th.dim, rng),
                                       gaussian_vector(th.dim, rng), alpha, chain);
      for (std::size_t n = 0; n < rep.distances.size(); ++n) {
        os << i << ", " << n + 1 << ", " << th.chain[n] << ", " << rep.distances[n] << ", "
           << rep.energy_distances[n] << ", ";
        if (n < rep.eta.size())
          os << rep.eta[n];
        os << ", " << rep.aposteriori[n] << '\n';
      }
    }
  }
  {
    auto os = detail::open_csv(dir / "rate.csv");
    os << "instance, delta, alpha, error, reference, loglog_slope\n";
    for (int i = 0; i < th.instances; ++i) {
      Mat a = random_matrix_with_spectrum(th.dim, th.spectrum_min, th.spectrum_max, rng);
      Vec xs = gaussian_vector(th.dim, rng), x0 = xs + gaussian_vector(th.dim, rng);
      auto rows = convergence_rate_experiment(linear_operator(a), xs, x0, th.mu, th.deltas, rng);
      double slope = loglog_slope(rows);
      for (const auto& r : rows)
        os << i << ", " << r.delta << ", " << r.alpha << ", " << r.error << ", " << r.reference << ", " << slope
           << '\n';
    }
  }
  Json m = detail::manifest_header("theory", cfg);
  m["oracle"] = {{"instances", th.instances}, {"max_error", sum.oracle_max_error}, {"tolerance", th.oracle_tol},
                 {"passed", sum.oracle_ok}};
  m["files"] = {"convexity.csv", "relaxation.csv", "rate.csv"};
  detail::write_json(dir / "manifest.json", m);
  log << "theory: linear oracle max error " << sum.oracle_max_error << (sum.oracle_ok ? " (ok)" : " (MISMATCH)")
      << '\n';
  return sum;
}

// ------------------------------------------------------------------ report

/// Reads a finished inversion directory and writes eta.csv, convergence.csv
/// and one slice_y=<v>.csv per requested slice into `run_dir`/report.
inline std::filesystem::path report(const std::filesystem::path& run_dir, std::optional<std::vector<double>> slices,
                                    std::ostream& log) {
  if (!std::filesystem::exists(run_dir / "manifest.json") || !std::filesystem::exists(run_dir / "run.csv"))
    throw IoError(run_dir.string() + " is not a completed inversion directory (manifest.json or run.csv missing)");
  Json m = detail::read_json(run_dir / "manifest.json");
  if (m.value("command", "") != "invert")
    throw IoError((run_dir / "manifest.json").string() + " is not an inversion manifest");
  RunConfig cfg;
  apply_json(cfg, m.at("effective_config"));
  const Rect omega = cfg.phantom.omega;
  const auto ys = slices ? *slices : cfg.slices;
  for (double y : ys)
    cipadapt::detail::require(y >= omega.ymin && y <= omega.ymax, "report.slices must lie inside phantom.omega");

  const auto& lv = m.at("levels");
  cipadapt::detail::require(!lv.empty(), "inversion manifest lists no levels");
  std::vector<NodalField> fields;
  for (const auto& l : lv) {
    auto ldir = run_dir / ("level_" + std::to_string(l.at("level").get<int>()));
    auto mesh = load_mesh(ldir / "mesh.txt");
    fields.push_back(load_field(ldir / "c.field", mesh));
  }
  auto out = run_dir / "report";
  std::filesystem::create_directories(out);

  const auto distances = m.at("distances").get<std::vector<double>>();
  const auto eta = m.at("eta").get<std::vector<double>>();
  const auto eta_online = m.at("eta_online").get<std::vector<double>>();
  {
    auto os = detail::open_csv(out / "eta.csv");
    os << "n, eta, eta_online, distance_n, distance_n1\n";
    for (std::size_t n = 0; n < eta.size(); ++n) {
      os << n + 1 << ", " << eta[n] << ", ";
      if (n < eta_online.size())
        os << eta_online[n];
      os << ", " << distances[n] << ", " << distances[n + 1] << '\n';
    }
  }
  {
    auto os = detail::open_csv(out / "convergence.csv");
    os << "level, elements, E, grad_norm, aposteriori_bound, distance_to_reference, max_c, argmax_x, argmax_y, "
          "iterations\n";
    for (std::size_t n = 0; n < lv.size(); ++n) {
      const auto& l = lv[n];
      auto am = l.at("argmax").get<std::vector<double>>();
      os << l.at("level").get<int>() << ", " << l.at("elements").get<std::size_t>() << ", "
         << l.at("E").get<double>() << ", " << l.at("grad_norm").get<double>() << ", "
         << l.at("aposteriori_bound").get<double>() << ", " << (n < distances.size() ? distances[n] : 0.0) << ", "
         << l.at("max_c").get<double>() << ", " << am[0] << ", " << am[1] << ", " << l.at("iterations").get<int>()
         << '\n';
    }
  }
  const int samples = 241;
  for (double y : ys) {
    auto name = "slice_y=" + detail::number_label(y) + ".csv";
    auto os = detail::open_csv(out / name);
    os << "x, exact";
    for (std::size_t n = 0; n < fields.size(); ++n)
      os << ", level_" << n + 1;
    os << '\n';
    std::vector<FieldEvaluator> ev;
    ev.reserve(fields.size());
    for (const auto& f : fields)
      ev.emplace_back(f);
    for (int k = 0; k < samples; ++k) {
      Point p{omega.xmin + omega.width() * k / (samples - 1), y};
      os << p.x << ", " << cfg.phantom(p);
      for (const auto& e : ev)
        os << ", " << e(p);
      os << '\n';
    }
  }
  log << "report: " << fields.size() << " levels, " << ys.size() << " slices written to " << out.string() << '\n';
  return out;
}

} // namespace cipadapt::cli
