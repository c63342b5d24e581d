#include <gtest/gtest.h>

#include <cipadapt/synth.hpp>
#include <cipadapt/trace_io.hpp>

#include <filesystem>
#include <functional>
#include <numeric>

using namespace cipadapt;

namespace {

const Rect kG{-4, 4, -5, 5};

MeshPtr mesh_on(const Rect& r, double h, std::optional<Rect> surface = {}) {
  return std::make_shared<const TriMesh>(build_structured_mesh(r, h, surface));
}

double max_of(const NodalField& f) { return *std::max_element(f.values.begin(), f.values.end()); }

Point argmax_where(const NodalField& f, const std::function<bool(Point)>& keep) {
  double best = -1e300;
  Point at{};
  for (std::size_t i = 0; i < f.size(); ++i) {
    Point p = f.mesh->node(static_cast<int>(i));
    if (keep(p) && f[i] > best) {
      best = f[i];
      at = p;
    }
  }
  return at;
}

} // namespace

TEST(Phantom, PointValues) {
  Phantom ph;
  EXPECT_DOUBLE_EQ(ph({-1.5, 1.0}), 4.0);
  EXPECT_DOUBLE_EQ(ph({1.5, 1.0}), 4.0);
  EXPECT_DOUBLE_EQ(ph({-1.0, -1.0}), 1.0);
  EXPECT_NEAR(ph({2.875 / 2, 2.875 / 2}), 1.5, 1e-14);
  EXPECT_DOUBLE_EQ(ph({3.5, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(ph({0.0, -4.5}), 1.0);
  // square boundary belongs to the inclusion
  EXPECT_DOUBLE_EQ(ph({-1.25, 1.25}), 4.0);
  EXPECT_DOUBLE_EQ(ph({-1.75, 0.75}), 4.0);
  EXPECT_LT(ph({-1.74, 0.74 - 0.02}), 4.0);
}

TEST(Phantom, SampledValuesInRange) {
  Phantom ph;
  auto m = mesh_on(kG, 0.25, ph.omega);
  auto c = sample_phantom(ph, m);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_GE(c[i], 1.0);
    EXPECT_LE(c[i], ph.max_value());
    if (!ph.omega.contains(m->node(static_cast<int>(i)))) {
      EXPECT_EQ(c[i], 1.0);
    }
  }
}

TEST(Phantom, SamplingConverges) {
  Phantom ph;
  ph.inclusions.clear(); // keep the smooth part, where nodal sampling converges
  auto m1 = mesh_on(ph.omega, 0.5);
  std::vector<double> d;
  for (int k = 0; k < 3; ++k) {
    auto m2 = std::make_shared<const TriMesh>(refine_local(*m1, [&] {
      std::vector<int> all(m1->num_triangles());
      std::iota(all.begin(), all.end(), 0);
      return all;
    }()));
    d.push_back(l2_norm(interpolate(sample_phantom(ph, m1), m2) - sample_phantom(ph, m2)));
    m1 = m2;
  }
  EXPECT_LT(d[1], d[0]);
  EXPECT_LT(d[2], d[1]);
}

TEST(Phantom, Validation) {
  Phantom ph;
  ph.inclusions[0].side = 0.0;
  EXPECT_THROW(ph.validate(), ValidationError);
  ph = {};
  ph.inclusions[1].center = {5, 5};
  EXPECT_THROW(ph.validate(), ValidationError);
}

TEST(GenerateData, UnitPhantomMatchesReferenceSolve) {
  Phantom ph;
  ph.inclusions.clear();
  ph.bump_amplitude = 0.0;
  Rect g{-2, 2, -2.5, 2.5}, om{-1.5, 1.5, -1.5, 1.5};
  ph.omega = om;
  auto m = mesh_on(g, 0.25, om);
  auto cfg = plane_wave_config(8.0);
  auto d = generate_data(ph, m, cfg);
  auto ref = extract_trace(solve_forward(m, NodalField(m, 1.0), resolve_time_step(*m, 1.0, cfg)),
                           m->nodes_with_label(label_of(Side::surface)));
  EXPECT_LE((d.trace.values - ref.values).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_GT(d.trace.values.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(d.sim_mesh_checksum, m->checksum());
}

TEST(GenerateData, RequiresSurface) {
  auto m = mesh_on({-2, 2, -2.5, 2.5}, 0.25);
  EXPECT_THROW(generate_data(Phantom{}, m, plane_wave_config(8.0)), ValidationError);
}

TEST(GenerateData, TravelTimeToBottomOfOmega) {
  // the column x = 0 has c = 1 from the source side to the bottom of omega
  Phantom ph;
  auto m = mesh_on(kG, 0.125, ph.omega);
  auto d = generate_data(ph, m, plane_wave_config());
  int row = -1;
  for (std::size_t i = 0; i < d.trace.num_detectors(); ++i)
    if (distance(d.trace.positions[i], {0.0, -3.0}) < 1e-9)
      row = static_cast<int>(i);
  ASSERT_GE(row, 0);
  Eigen::VectorXd tr = d.trace.values.row(row).transpose();
  double thr = 0.01 * tr.cwiseAbs().maxCoeff();
  double arrival = -1;
  for (Eigen::Index j = 0; j < tr.size(); ++j)
    if (std::abs(tr[j]) > thr) {
      arrival = d.trace.times[static_cast<std::size_t>(j)];
      break;
    }
  // depth below the source side: 5 - (-3) = 8 at unit speed
  EXPECT_NEAR(arrival, 8.0, 0.8);
}

TEST(GenerateData, TwoGridTracesAgree) {
  Phantom ph;
  auto coarse = mesh_on(kG, 1.0 / 16, ph.omega);
  auto fine = mesh_on(kG, 1.0 / 24, ph.omega);
  auto dc = generate_data(ph, coarse, plane_wave_config());
  auto df = generate_data(ph, fine, plane_wave_config());
  auto on_coarse = resample_trace(df.trace, dc.trace.detector_nodes, dc.trace.positions, dc.trace.times, 1e-9);
  double rel = (on_coarse.values - dc.trace.values).norm() / dc.trace.values.norm();
  RecordProperty("two_grid_relative_difference", std::to_string(rel));
  EXPECT_LT(rel, 0.05);
}

TEST(Noise, ZeroLevelIsIdentity) {
  BoundaryTraceMatrix g;
  g.detector_nodes = {0, 1};
  g.positions = {{0, 0}, {1, 0}};
  g.times = {0.0, 0.5, 1.0};
  g.values = Eigen::MatrixXd::Random(2, 3);
  auto out = add_noise(g, {0.0, 3, false});
  EXPECT_EQ(out.values, g.values);
}

TEST(Noise, DeterministicBoundedAndSharedPerTime) {
  BoundaryTraceMatrix g;
  g.detector_nodes = {0, 1, 2};
  g.positions = {{0, 0}, {1, 0}, {2, 0}};
  for (int j = 0; j < 200; ++j)
    g.times.push_back(0.01 * j);
  g.values = Eigen::MatrixXd::Random(3, 200).array() + 2.0;
  NoiseSpec spec{0.02, 11, false};
  auto a = add_noise(g, spec), b = add_noise(g, spec);
  EXPECT_EQ(a.values, b.values);
  auto c = add_noise(g, {0.02, 12, false});
  EXPECT_NE(a.values, c.values);

  const double range = g.values.maxCoeff() - g.values.minCoeff();
  Eigen::ArrayXXd factor = a.values.array() / g.values.array();
  EXPECT_LE((factor - 1.0).abs().maxCoeff(), 0.02 * range + 1e-15);
  // one factor per time index, shared across detectors
  for (Eigen::Index j = 0; j < factor.cols(); ++j)
    EXPECT_NEAR(factor(0, j), factor(2, j), 1e-14);

  auto p = add_noise(g, {0.02, 11, true});
  Eigen::ArrayXXd fp = p.values.array() / g.values.array();
  int differ = 0;
  for (Eigen::Index j = 0; j < fp.cols(); ++j)
    differ += std::abs(fp(0, j) - fp(2, j)) > 1e-12;
  EXPECT_GT(differ, 150);
  EXPECT_THROW(add_noise(g, {-0.1, 1, false}), ValidationError);
}

TEST(CGlob, ZeroBlurUnitScaleIsPhantom) {
  Phantom ph;
  auto m = mesh_on(kG, 0.25, ph.omega);
  CGlobSpec s;
  s.sigma = 0.0;
  s.peak.reset();
  s.with_background = true;
  auto c = make_c_glob(ph, m, s);
  EXPECT_EQ(c.values, sample_phantom(ph, m).values);
}

TEST(CGlob, DefaultPeakAndBackground) {
  Phantom ph;
  auto m = mesh_on(kG, 0.125, ph.omega);
  auto c = make_c_glob(ph, m, CGlobSpec{});
  EXPECT_NEAR(max_of(c), 3.2, 0.01);
  // the slowly varying part is absent: far from the inclusions c_glob is 1
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (m->node(static_cast<int>(i)).y < -1.0) {
      EXPECT_NEAR(c[i], 1.0, 1e-12);
    }
  }
  // peaks stay at the configured centers, to within one diagonal grid step
  const double step = 0.125 * std::sqrt(2.0) + 1e-9;
  auto left = argmax_where(c, [](Point p) { return p.x < 0; });
  auto right = argmax_where(c, [](Point p) { return p.x > 0; });
  EXPECT_LE(distance(left, {-1.5, 1.0}), step);
  EXPECT_LE(distance(right, {1.5, 1.0}), step);
}

TEST(CGlob, ShiftedMovesOneInclusion) {
  Phantom ph;
  auto m = mesh_on(kG, 0.125, ph.omega);
  CGlobSpec s;
  s.mode = CGlobMode::shifted;
  s.offset = {0.0, -0.5};
  auto base = make_c_glob(ph, m, CGlobSpec{});
  auto moved = make_c_glob(ph, m, s);
  auto left = [](Point p) { return p.x < 0; };
  auto right = [](Point p) { return p.x > 0; };
  EXPECT_NEAR(argmax_where(moved, left).y - argmax_where(base, left).y, -0.5, 0.125 + 1e-9);
  EXPECT_NEAR(argmax_where(moved, left).x, argmax_where(base, left).x, 0.125 + 1e-9);
  EXPECT_LE(distance(argmax_where(moved, right), argmax_where(base, right)), 1e-12);
  s.shift_index = 5;
  EXPECT_THROW(make_c_glob(ph, m, s), ValidationError);
}

TEST(CGlob, FileMode) {
  Phantom ph;
  auto m = mesh_on(kG, 0.25, ph.omega);
  auto dir = std::filesystem::temp_directory_path() / "cipadapt_cglob_test";
  std::filesystem::create_directories(dir);
  auto c = make_c_glob(ph, m, CGlobSpec{});
  save_field(dir / "cg.field", c);
  CGlobSpec s;
  s.mode = CGlobMode::file;
  s.path = dir / "cg.field";
  EXPECT_EQ(make_c_glob(ph, m, s).values, c.values);
  auto other = mesh_on(kG, 0.5, ph.omega);
  EXPECT_THROW(make_c_glob(ph, other, s), Error);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(cglob_mode_from_string("sharpen"), ValidationError);
}
