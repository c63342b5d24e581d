#include <cipadapt/cli.hpp>

#include <CLI11.hpp>

using namespace cipadapt;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> noise;
  std::optional<double> alpha;
  std::optional<double> inversion_h;
  std::optional<double> simulation_h;
  std::optional<int> max_refinements;
  std::string c_glob_mode;
};

void add_common(CLI::App* app, Options& o) {
  app->add_option("-c,--config", o.config, "JSON config file or a manifest from an earlier run");
  app->add_option("-o,--out", o.out, "output directory (relative paths go under $CIPADAPT_OUTPUT_ROOT)");
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--threads", o.threads, "worker threads; 1 is the deterministic reference mode");
  app->add_option("--noise", o.noise, "relative noise level");
  app->add_option("--alpha", o.alpha, "regularization parameter");
  app->add_option("--inv-h", o.inversion_h, "coarse inversion mesh size");
  app->add_option("--sim-h", o.simulation_h, "data simulation mesh size");
  app->add_option("--max-refinements", o.max_refinements, "refinement limit");
  app->add_option("--c-glob-mode", o.c_glob_mode, "blur, scaled, shifted or file");
}

// flag > config file > built-in default
RunConfig effective_config(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty())
    cfg = load_config(o.config);
  if (!o.out.empty())
    cfg.output_dir = o.out;
  if (o.seed)
    cfg.seed = *o.seed;
  if (o.threads)
    cfg.threads = *o.threads;
  if (o.noise)
    cfg.noise.level = *o.noise;
  if (o.alpha)
    cfg.regularization.alpha_override = *o.alpha;
  if (o.inversion_h)
    cfg.inversion_h = *o.inversion_h;
  if (o.simulation_h)
    cfg.simulation_h = *o.simulation_h;
  if (o.max_refinements)
    cfg.refinement.max_refinements = *o.max_refinements;
  if (!o.c_glob_mode.empty())
    cfg.c_glob.mode = cglob_mode_from_string(o.c_glob_mode);
  cfg.validate();
  Eigen::setNbThreads(cfg.threads);
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive finite-element reconstruction of a wave-speed coefficient"};
  app.require_subcommand(1);
  Options opt;
  std::string data_dir, run_dir;
  std::vector<double> slices;

  auto* sim = app.add_subcommand("simulate", "generate clean and noisy boundary data");
  add_common(sim, opt);
  auto* inv = app.add_subcommand("invert", "adaptive inversion of simulated data");
  add_common(inv, opt);
  inv->add_option("-d,--data", data_dir, "data directory written by simulate (default <out>/data)");
  auto* thy = app.add_subcommand("theory", "finite-dimensional Tikhonov experiments");
  add_common(thy, opt);
  auto* rep = app.add_subcommand("report", "summary tables and slices of a finished inversion");
  rep->add_option("run_dir", run_dir, "inversion directory")->required();
  rep->add_option("--slice", slices, "y value of a horizontal slice (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : cli::invalid;
  }

  return cli::guarded([&] {
    if (*rep) {
      cli::report(run_dir, slices.empty() ? std::nullopt : std::optional(slices), std::cout);
      return int(cli::ok);
    }
    RunConfig cfg = effective_config(opt);
    const auto root = resolve_output(cfg.output_dir);
    if (*sim) {
      cli::simulate(cfg, root / "data", std::cout);
    } else if (*inv) {
      cli::invert(cfg, data_dir.empty() ? root / "data" : std::filesystem::path(data_dir), root / "run", std::cout);
    } else if (*thy) {
      if (!cli::run_theory(cfg, root / "theory", std::cout).oracle_ok) {
        std::cerr << "error: Gauss-Newton minimizer disagrees with the closed form beyond theory.oracle_tol\n";
        return int(cli::numerical);
      }
    }
    return int(cli::ok);
  });
}
