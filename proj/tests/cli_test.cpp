#include <gtest/gtest.h>

#include <cipadapt/cli.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

using namespace cipadapt;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "domain": [-2, 2, -2.5, 2.5],
  "phantom": {"omega": [-1.5, 1.5, -1.5, 1.5], "flat": [-1.5, 0, -1.5, 0],
              "inclusions": [{"center": [0.4, 0.5], "side": 0.5, "value": 3}]},
  "mesh": {"inversion_h": 0.25, "simulation_h": 0.125},
  "wave": {"t_factor": 8},
  "c_glob": {"mode": "blur", "peak": 2.2},
  "refine": {"max_refinements": 2},
  "optimizer": {"max_iters": 10},
  "theory": {"instances": 5},
  "report": {"slices": [0.5]}
})";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream s;
  s << is.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("cipadapt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "small.json") << kSmall;
    cfg = load_config(dir / "small.json");
  }
  void TearDown() override { fs::remove_all(dir); }

  // runs the command-line tool and returns its exit status
  int tool(const std::string& args, std::string* err = nullptr) const {
    auto errfile = dir / "stderr.txt";
    std::string cmd = std::string(CIPADAPT_TOOL) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                      errfile.string();
    int st = std::system(cmd.c_str());
    if (err)
      *err = slurp(errfile);
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }

  fs::path dir;
  RunConfig cfg;
  std::ostringstream log;
};

} // namespace

TEST_F(Cli, SimulateWritesTracesAndManifest) {
  cli::simulate(cfg, dir / "data", log);
  for (const char* f : {"clean.csv", "noisy.csv", "detectors.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "data" / f)) << f;
  EXPECT_NE(slurp(dir / "data/clean.csv"), slurp(dir / "data/noisy.csv"));
  auto m = Json::parse(slurp(dir / "data/manifest.json"));
  EXPECT_EQ(m["command"], "simulate");
  EXPECT_EQ(m["effective_config"], to_json(cfg));
  EXPECT_EQ(m["sim_mesh_checksum"].get<std::string>().size(), 16u);
}

TEST_F(Cli, ZeroNoiseCopiesCleanData) {
  cfg.noise.level = 0.0;
  cli::simulate(cfg, dir / "data", log);
  EXPECT_EQ(slurp(dir / "data/clean.csv"), slurp(dir / "data/noisy.csv"));
}

TEST_F(Cli, FixedSeedIsByteIdentical) {
  cli::simulate(cfg, dir / "a", log);
  cli::simulate(cfg, dir / "b", log);
  for (const char* f : {"clean.csv", "noisy.csv", "detectors.csv", "manifest.json"})
    EXPECT_EQ(std::hash<std::string>{}(slurp(dir / "a" / f)), std::hash<std::string>{}(slurp(dir / "b" / f))) << f;
  cfg.seed = 2;
  cli::simulate(cfg, dir / "c", log);
  EXPECT_NE(slurp(dir / "a/noisy.csv"), slurp(dir / "c/noisy.csv"));
}

TEST_F(Cli, InvertEndToEnd) {
  cli::simulate(cfg, dir / "data", log);
  auto run = cli::invert(cfg, dir / "data", dir / "run", log);
  ASSERT_EQ(run.levels.size(), 3u);
  std::istringstream csv(slurp(dir / "run/run.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "level, elements, E, grad_norm, aposteriori_bound, eta");
  int rows = 0, with_eta = 0;
  while (std::getline(csv, line)) {
    ++rows;
    with_eta += line.back() != ' ';
    EXPECT_TRUE(fs::exists(dir / "run" / ("level_" + std::to_string(rows)) / "c.field"));
  }
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(with_eta, 2);
  auto m = Json::parse(slurp(dir / "run/manifest.json"));
  EXPECT_EQ(m["stop"], "max_refinements");
  EXPECT_EQ(m["final_level"].get<int>(), run.final_level + 1);
  EXPECT_EQ(m["levels"].size(), 3u);
}

TEST_F(Cli, ExactStartWithoutNoiseStopsAtFirstLevel) {
  cfg.noise.level = 0.0;
  cfg.c_glob.mode = CGlobMode::scaled;
  cfg.c_glob.peak.reset();
  cfg.c_glob.with_background = true;
  // the exact coefficient is stationary up to the gap between the data and
  // inversion grids (projected gradient about 3e-3 here)
  cfg.optimizer.grad_tol = 1e-2;
  cli::simulate(cfg, dir / "data", log);
  auto run = cli::invert(cfg, dir / "data", dir / "run", log);
  EXPECT_EQ(run.levels.size(), 1u);
  EXPECT_EQ(run.stop, AdaptiveStop::stationary_start);
}

TEST_F(Cli, MissingDataIsACleanError) {
  std::ostringstream err;
  int code = cli::guarded(
      [&] {
        cli::invert(cfg, dir / "nothing", dir / "run", log);
        return 0;
      },
      err);
  EXPECT_NE(code, 0);
  EXPECT_NE(err.str().find("manifest.json"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST_F(Cli, InverseCrimeGuardExitCode) {
  std::string err;
  ASSERT_EQ(tool("simulate -c " + (dir / "small.json").string() + " -o " + dir.string()), 0);
  EXPECT_EQ(tool("invert -c " + (dir / "small.json").string() + " -o " + dir.string() + " --inv-h 0.125", &err), 4);
  auto m = Json::parse(slurp(dir / "data/manifest.json"));
  EXPECT_NE(err.find(m["sim_mesh_checksum"].get<std::string>()), std::string::npos) << err;
}

TEST_F(Cli, ExitCodes) {
  std::string err;
  EXPECT_EQ(tool("invert -c " + (dir / "small.json").string() + " -o " + dir.string() + " -d " +
                 (dir / "missing").string()),
            1);
  EXPECT_EQ(tool("simulate -c " + (dir / "small.json").string() + " --noise -1", &err), 2);
  EXPECT_NE(err.find("noise.level"), std::string::npos) << err;
  EXPECT_EQ(tool("simulate --bogus"), 2);
  EXPECT_EQ(tool("report " + (dir / "empty").string()), 1);
}

TEST_F(Cli, FlagOverridesConfigOverridesDefault) {
  Json j = Json::parse(kSmall);
  j["seed"] = 5;
  std::ofstream(dir / "seeded.json") << j.dump();
  auto seed_of = [&](const std::string& sub) {
    return Json::parse(slurp(dir / sub / "data/manifest.json"))["seed"].get<int>();
  };
  ASSERT_EQ(tool("simulate -c " + (dir / "small.json").string() + " -o " + (dir / "d").string()), 0);
  ASSERT_EQ(tool("simulate -c " + (dir / "seeded.json").string() + " -o " + (dir / "c").string()), 0);
  ASSERT_EQ(tool("simulate -c " + (dir / "seeded.json").string() + " -o " + (dir / "f").string() + " --seed 7"), 0);
  EXPECT_EQ(seed_of("d"), 1);
  EXPECT_EQ(seed_of("c"), 5);
  EXPECT_EQ(seed_of("f"), 7);
}

TEST_F(Cli, ManifestReproducesRun) {
  ASSERT_EQ(tool("simulate -c " + (dir / "small.json").string() + " -o " + (dir / "a").string() + " --seed 3"), 0);
  // the manifest stores output_dir, so a re-run needs a new destination
  ASSERT_EQ(tool("simulate -c " + (dir / "a/data/manifest.json").string() + " -o " + (dir / "b").string()), 0);
  EXPECT_EQ(slurp(dir / "a/data/noisy.csv"), slurp(dir / "b/data/noisy.csv"));
  auto ma = Json::parse(slurp(dir / "a/data/manifest.json")), mb = Json::parse(slurp(dir / "b/data/manifest.json"));
  ma["effective_config"].erase("output_dir");
  mb["effective_config"].erase("output_dir");
  EXPECT_EQ(ma, mb);
}

TEST_F(Cli, OutputRootFromEnvironment) {
  auto root = dir / "root";
  std::string cmd = "CIPADAPT_OUTPUT_ROOT=" + root.string() + " " + CIPADAPT_TOOL + " simulate -c " +
                    (dir / "small.json").string() + " -o rel > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(root / "rel/data/manifest.json"));
}

TEST_F(Cli, ConfigValidationNamesTheField) {
  auto message = [](const std::string& text) {
    RunConfig c;
    try {
      apply_json(c, Json::parse(text));
      c.validate();
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(R"({"refine": {"beta1": 1.5}})").find("beta1"), std::string::npos);
  EXPECT_NE(message(R"({"regularization": {"alpha": null, "mu": 0.3}})").find("regularization.mu"),
            std::string::npos);
  EXPECT_EQ(message(R"({"regularization": {"alpha": 0.02, "mu": 0.3}})"), "");
  EXPECT_NE(message(R"({"mesh": {"inversion_hh": 0.1}})").find("mesh.inversion_hh"), std::string::npos);
  EXPECT_NE(message(R"({"optimizer": {"max_iters": "ten"}})").find("optimizer.max_iters"), std::string::npos);
  EXPECT_NE(message(R"({"c_glob": {"mode": "sharp"}})").find("c_glob.mode"), std::string::npos);
  EXPECT_NE(message(R"({"phantom": {"inclusions": [{"side": -1}]}})").find("phantom.inclusions.side"),
            std::string::npos);
  EXPECT_NE(message(R"({"wave": {"cfl_safety": 2}})").find("wave.cfl_safety"), std::string::npos);

  // an explicit step above the CFL bound is refused when the mesh is known
  cfg.dt = 1.0;
  EXPECT_THROW(cli::simulate(cfg, dir / "data", log), ValidationError);
}

TEST_F(Cli, TheoryWritesThreeTablesReproducibly) {
  auto a = cli::run_theory(cfg, dir / "a", log);
  cli::run_theory(cfg, dir / "b", log);
  EXPECT_TRUE(a.oracle_ok);
  EXPECT_LE(a.oracle_max_error, 1e-8);
  for (const char* f : {"convexity.csv", "relaxation.csv", "rate.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;

  Json j = Json::parse(kSmall);
  j["theory"]["oracle_tol"] = 1e-300;
  std::ofstream(dir / "strict.json") << j.dump();
  EXPECT_EQ(tool("theory -c " + (dir / "strict.json").string() + " -o " + (dir / "s").string()), 3);
}

TEST_F(Cli, ReportTablesAndSlices) {
  cli::simulate(cfg, dir / "data", log);
  auto run = cli::invert(cfg, dir / "data", dir / "run", log);
  auto out = cli::report(dir / "run", std::nullopt, log);
  for (const char* f : {"eta.csv", "convergence.csv", "slice_y=0.5.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  // the slice through the inclusion center peaks at the recovered maximum
  std::istringstream s(slurp(out / "slice_y=0.5.csv"));
  std::string line;
  std::getline(s, line);
  double best = 0, best_x = 0;
  while (std::getline(s, line)) {
    std::vector<double> v;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');)
      v.push_back(std::stod(cell));
    if (v.back() > best) {
      best = v.back();
      best_x = v[0];
    }
  }
  auto m = Json::parse(slurp(dir / "run/manifest.json"));
  const double max_c = m["levels"].back()["max_c"].get<double>();
  EXPECT_NEAR(best, max_c, 0.02 * max_c);
  EXPECT_NEAR(best_x, 0.4, 0.25 + 1e-9);

  fs::create_directories(dir / "empty");
  EXPECT_THROW(cli::report(dir / "empty", std::nullopt, log), IoError);
}
