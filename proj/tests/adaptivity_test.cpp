#include <gtest/gtest.h>

#include <cipadapt/adaptivity.hpp>
#include <cipadapt/synth.hpp>

#include <algorithm>
#include <set>

using namespace cipadapt;

namespace {

const Rect kOmega{-1.5, 1.5, -1.5, 1.5};
const Rect kG{-2, 2, -2.5, 2.5};

MeshPtr mesh_on(const Rect& r, double h, std::optional<Rect> surface = {}) {
  return std::make_shared<const TriMesh>(build_structured_mesh(r, h, surface));
}

std::vector<int> incident(const TriMesh& m, int node) {
  std::vector<int> out;
  for (std::size_t k = 0; k < m.num_triangles(); ++k) {
    const auto& t = m.triangle(static_cast<int>(k));
    if (std::find(t.begin(), t.end(), node) != t.end())
      out.push_back(static_cast<int>(k));
  }
  return out;
}

NodalField bump(const MeshPtr& m, double amp, Point c, double r = 0.8) {
  return NodalField::from_function(m, [&](Point p) {
    double d = distance(p, c) / r;
    return kOmega.contains(p) && d < 1 ? 1.0 + amp * std::pow(1 - d * d, 2) : 1.0;
  });
}

} // namespace

TEST(Indicator, ConstantMarksWholeRegion) {
  auto m = mesh_on(kG, 0.25, kOmega);
  auto all = indicator_gradient(NodalField(m, -3.0), 0.5);
  EXPECT_EQ(all.size(), m->num_triangles());
  auto in = indicator_coefficient(NodalField(m, 2.0), 0.5, kOmega);
  auto mask = triangle_mask(*m, kOmega);
  EXPECT_EQ(static_cast<long>(in.size()), std::count(mask.begin(), mask.end(), 1));
  for (int k : in)
    EXPECT_TRUE(kOmega.contains(m->centroid(k)));
}

TEST(Indicator, SpikeMarksIncidentTriangles) {
  auto m = mesh_on(kG, 0.25, kOmega);
  NodalField g(m, 0.0);
  int node = -1;
  for (std::size_t i = 0; i < m->num_nodes(); ++i)
    if (distance(m->node(static_cast<int>(i)), {0.25, -0.5}) < 1e-12)
      node = static_cast<int>(i);
  ASSERT_GE(node, 0);
  g[static_cast<std::size_t>(node)] = -1.0;
  g[0] = 0.5; // below the 0.9 threshold
  auto marked = indicator_gradient(g, 0.9);
  EXPECT_EQ(marked, incident(*m, node));
}

TEST(Indicator, ThresholdMonotoneAndZeroField) {
  auto m = mesh_on(kG, 0.25, kOmega);
  auto f = bump(m, 2.0, {0.3, 0.2});
  auto hi = indicator_coefficient(f, 0.99), lo = indicator_coefficient(f, 0.3);
  EXPECT_TRUE(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
  EXPECT_LT(hi.size(), lo.size());
  EXPECT_TRUE(indicator_gradient(NodalField(m, 0.0), 0.2).empty());
  EXPECT_THROW(indicator_gradient(f, 1.0), ValidationError);
  EXPECT_THROW(indicator_coefficient(f, 0.0), ValidationError);
}

TEST(Indicator, CGlobMarksInclusionNeighbourhoods) {
  Phantom ph;
  auto m = mesh_on({-4, 4, -5, 5}, 0.125, ph.omega);
  auto cg = make_c_glob(ph, m, CGlobSpec{});
  auto marked = indicator_coefficient(cg, 0.6, ph.omega);
  ASSERT_FALSE(marked.empty());
  bool left = false, right = false;
  for (int k : marked) {
    Point c = m->centroid(k);
    double dl = distance(c, {-1.5, 1.0}), dr = distance(c, {1.5, 1.0});
    EXPECT_LT(std::min(dl, dr), 0.75);
    left |= dl < 0.3;
    right |= dr < 0.3;
  }
  EXPECT_TRUE(left && right);
}

TEST(Indicator, UnionSemantics) {
  auto u = union_marks({5, 1, 3}, {3, 4, 1});
  EXPECT_EQ(u, (std::vector<int>{1, 3, 4, 5}));
}

TEST(FinalSelection, FirstIncreaseAndTie) {
  auto s = select_final_level({0.5, 0.3, 0.4, 0.2}, 0.05);
  ASSERT_TRUE(s.n0);
  EXPECT_EQ(*s.n0, 2);
  EXPECT_EQ(s.final_level, 2);
  EXPECT_FALSE(s.tie);
  auto t = select_final_level({0.5, 0.3, 0.31, 0.2}, 0.05);
  EXPECT_TRUE(t.tie);
  EXPECT_EQ(t.final_level, 2);
  auto none = select_final_level({0.5, 0.3, 0.1}, 0.05);
  EXPECT_FALSE(none.n0);
  EXPECT_EQ(none.final_level, 3);
  RefineSettings bad;
  bad.beta1 = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

class AdaptiveLoop : public ::testing::Test {
protected:
  void SetUp() override {
    mesh = mesh_on(kG, 0.25, kOmega);
    in.problem.wave = plane_wave_config(8.0);
    in.problem.region = kOmega;
    in.problem.bounds = Bounds::from(0.2, 4.0);
    in.problem.alpha = 0.02;
    in.optimize.max_iters = 10;
  }
  MeshPtr mesh;
  AdaptiveInputs in;
};

TEST_F(AdaptiveLoop, ExactStartOnNoiselessDataStopsAtFirstLevel) {
  auto truth = bump(mesh, 1.5, {0.2, 0.3});
  auto cfg = resolve_time_step(*mesh, in.problem.bounds.lower, in.problem.wave);
  in.data = extract_trace(solve_forward(mesh, truth, cfg), mesh->nodes_with_label(label_of(Side::surface)));
  in.c_glob = truth;
  auto run = run_adaptive(in);
  ASSERT_EQ(run.levels.size(), 1u);
  EXPECT_EQ(run.stop, AdaptiveStop::stationary_start);
  EXPECT_EQ(run.final_level, 0);
  EXPECT_TRUE(run.eta.empty());
}

TEST_F(AdaptiveLoop, RefinesLocallyAndTracksRelaxation) {
  auto sim = mesh_on(kG, 0.125, kOmega);
  auto cfg = resolve_time_step(*sim, 1.0, in.problem.wave);
  in.data = extract_trace(solve_forward(sim, bump(sim, 2.0, {0.3, 0.2}, 0.6), cfg),
                          sim->nodes_with_label(label_of(Side::surface)));
  in.problem.data_mesh_checksum = sim->checksum();
  in.c_glob = bump(mesh, 1.2, {0.2, 0.1}, 0.7);
  in.refine.max_refinements = 2;
  int callbacks = 0;
  auto run = run_adaptive(in, [&](const LevelRecord&) { ++callbacks; });
  ASSERT_EQ(run.levels.size(), 3u);
  EXPECT_EQ(callbacks, 3);
  EXPECT_EQ(run.stop, AdaptiveStop::max_refinements);
  for (std::size_t n = 1; n < run.levels.size(); ++n) {
    const auto& prev = run.levels[n - 1];
    const auto& cur = run.levels[n];
    EXPECT_GT(cur.elements, prev.elements);
    EXPECT_LT(static_cast<double>(cur.elements) / prev.elements, in.refine.max_growth);
    EXPECT_EQ(cur.mesh->level(), prev.mesh->level() + 1);
    // warm start: the interpolated minimizer, with nodes outside the region held at c_glob
    InversionProblem p(cur.mesh, in.data, interpolate(in.c_glob, cur.mesh), in.problem);
    auto start = p.embed(p.restrict(interpolate(prev.c, cur.mesh)));
    EXPECT_NEAR(cur.history.front().value, p.evaluate(start).value, 1e-14);
    EXPECT_TRUE(check_conforming(*cur.mesh).ok());
  }
  for (const auto& l : run.levels) {
    EXPECT_GE(l.aposteriori, 0.0);
    EXPECT_NEAR(l.aposteriori, aposteriori_bound(l.grad_norm, in.delta, in.mu), 1e-15);
    CoefficientField cf{l.c, in.problem.bounds, kOmega};
    EXPECT_NO_THROW(cf.validate());
  }
  ASSERT_EQ(run.distances.size(), 3u);
  EXPECT_EQ(run.distances.back(), 0.0);
  ASSERT_EQ(run.eta.size(), 2u);
  EXPECT_DOUBLE_EQ(run.eta[0], run.distances[1] / run.distances[0]);
  ASSERT_EQ(run.eta_online.size(), 1u);
  // the consecutive-difference ratio uses the same fields on the finest mesh
  const auto& fin = run.levels.back().mesh;
  auto f0 = interpolate(run.levels[0].c, fin), f1 = interpolate(run.levels[1].c, fin);
  EXPECT_NEAR(run.eta_online[0], l2_norm(run.levels[2].c - f1, kOmega) / l2_norm(f1 - f0, kOmega), 1e-12);
}

TEST_F(AdaptiveLoop, OnlineStopEndsAtIncrease) {
  auto sim = mesh_on(kG, 0.125, kOmega);
  auto cfg = resolve_time_step(*sim, 1.0, in.problem.wave);
  in.data = extract_trace(solve_forward(sim, bump(sim, 2.0, {0.3, 0.2}, 0.6), cfg),
                          sim->nodes_with_label(label_of(Side::surface)));
  in.problem.data_mesh_checksum = sim->checksum();
  in.c_glob = bump(mesh, 1.2, {0.2, 0.1}, 0.7);
  in.refine.max_refinements = 4;
  in.refine.online_stop = true;
  auto run = run_adaptive(in);
  if (run.stop == AdaptiveStop::online_eta_increase) {
    ASSERT_GE(run.eta_online.size(), 2u);
    EXPECT_GT(run.eta_online.back(), run.eta_online[run.eta_online.size() - 2]);
    for (std::size_t n = 1; n + 1 < run.eta_online.size(); ++n)
      EXPECT_LE(run.eta_online[n], run.eta_online[n - 1]);
    EXPECT_EQ(run.reference_choice, "consecutive_levels");
  } else {
    EXPECT_EQ(run.stop, AdaptiveStop::max_refinements);
    for (std::size_t n = 1; n < run.eta_online.size(); ++n)
      EXPECT_LE(run.eta_online[n], run.eta_online[n - 1]);
  }
}
