#include <gtest/gtest.h>

#include <cipadapt/mesh.hpp>
#include <cipadapt/mesh_io.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace cipadapt;

namespace {

MeshPtr make(const Rect& r, double h, std::optional<Rect> surface = {}) {
  return std::make_shared<const TriMesh>(build_structured_mesh(r, h, surface));
}

// Point-in-triangle with a small tolerance.
bool inside(const TriMesh& m, int k, Point p) {
  const auto& t = m.triangle(k);
  Point a = m.node(t[0]), b = m.node(t[1]), c = m.node(t[2]);
  double s = 1e-12 * m.diameter(k) * m.diameter(k);
  return detail::signed_area(a, b, p) >= -s && detail::signed_area(b, c, p) >= -s &&
         detail::signed_area(c, a, p) >= -s;
}

// Sorted angle triple of triangle k.
std::array<double, 3> angles(const TriMesh& m, int k) {
  const auto& t = m.triangle(k);
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    Point p = m.node(t[i]), q = m.node(t[(i + 1) % 3]), r = m.node(t[(i + 2) % 3]);
    double ux = q.x - p.x, uy = q.y - p.y, vx = r.x - p.x, vy = r.y - p.y;
    out[static_cast<std::size_t>(i)] = std::acos((ux * vx + uy * vy) / (std::hypot(ux, uy) * std::hypot(vx, vy)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void expect_nested(const TriMesh& coarse, const TriMesh& fine) {
  ASSERT_EQ(fine.parent_map().size(), fine.num_triangles());
  for (std::size_t k = 0; k < fine.num_triangles(); ++k) {
    int p = fine.parent_map()[k];
    ASSERT_GE(p, 0);
    ASSERT_LT(p, static_cast<int>(coarse.num_triangles()));
    for (int v : fine.triangle(static_cast<int>(k)))
      ASSERT_TRUE(inside(coarse, p, fine.node(v))) << "child " << k << " escapes parent " << p;
  }
  // children tile their parent exactly
  std::vector<double> area(coarse.num_triangles(), 0.0);
  for (std::size_t k = 0; k < fine.num_triangles(); ++k)
    area[static_cast<std::size_t>(fine.parent_map()[k])] += fine.area(static_cast<int>(k));
  for (std::size_t k = 0; k < coarse.num_triangles(); ++k)
    ASSERT_NEAR(area[k], coarse.area(static_cast<int>(k)), 1e-12);
}

} // namespace

TEST(StructuredMesh, CountFormulaForSquare) {
  auto m = make({-3, 3, -3, 3}, 0.125);
  // 48 x 48 quads
  EXPECT_EQ(m->num_triangles(), 48u * 48u * 2u);
  EXPECT_EQ(m->num_nodes(), 49u * 49u);
  EXPECT_EQ(m->num_triangles(), 4608u);
  EXPECT_EQ(m->num_nodes(), 2401u);
  EXPECT_LE(m->h_max(), std::sqrt(2.0) * 0.125 + 1e-14);
  EXPECT_EQ(m->level(), 1);
  EXPECT_TRUE(m->parent_map().empty());
}

TEST(StructuredMesh, UnitSquareMinimal) {
  auto m = make({0, 1, 0, 1}, 1.0);
  EXPECT_EQ(m->num_triangles(), 2u);
  EXPECT_EQ(m->num_nodes(), 4u);
  EXPECT_TRUE(check_conforming(*m).ok());
}

TEST(StructuredMesh, OuterDomainWithSurface) {
  Rect omega{-3, 3, -3, 3};
  auto m = make({-4, 4, -5, 5}, 0.125, omega);
  EXPECT_EQ(m->num_triangles(), 64u * 80u * 2u);
  EXPECT_TRUE(check_conforming(*m).ok());
  auto bb = m->bounding_box();
  EXPECT_DOUBLE_EQ(bb.xmin, -4);
  EXPECT_DOUBLE_EQ(bb.ymax, 5);
  // surface nodes are exactly the grid nodes on the boundary of omega
  auto surf = m->nodes_with_label(label_of(Side::surface));
  EXPECT_EQ(surf.size(), 4u * 48u);
  for (int n : surf)
    EXPECT_TRUE(omega.on_boundary(m->node(n), 1e-12));
  // every side label is present
  for (int l = 1; l <= 4; ++l)
    EXPECT_TRUE(m->has_label(l));
}

TEST(StructuredMesh, Invariants) {
  auto m = make({0, 2, 0, 1}, 0.1);
  EXPECT_TRUE(check_conforming(*m).ok());
  auto s = check_shape(*m);
  EXPECT_TRUE(s.ok(ShapeLimits{}));
  for (std::size_t k = 0; k < m->num_triangles(); ++k)
    EXPECT_GT(m->area(static_cast<int>(k)), 0.0);
}

TEST(StructuredMesh, RejectsBadInput) {
  EXPECT_THROW(build_structured_mesh({0, 1, 0, 1}, 0.0), ValidationError);
  EXPECT_THROW(build_structured_mesh({0, 1, 0, 1}, -1.0), ValidationError);
  EXPECT_THROW(build_structured_mesh({0, 2, 0, 1}, 1.5), ValidationError);
  EXPECT_THROW(build_structured_mesh({0, 0, 0, 1}, 0.1), ValidationError);
}

TEST(RefineLocal, MarkAllOfTwoTriangles) {
  auto m = make({0, 1, 0, 1}, 1.0);
  std::vector<int> marked{0, 1};
  TriMesh f = refine_local(*m, marked);
  EXPECT_EQ(f.num_triangles(), 8u);
  EXPECT_EQ(f.num_nodes(), 9u);
  EXPECT_EQ(f.level(), 2);
  EXPECT_TRUE(check_conforming(f).ok());
  expect_nested(*m, f);
  // children are similar to their parent
  for (std::size_t k = 0; k < f.num_triangles(); ++k) {
    auto a = angles(f, static_cast<int>(k));
    auto b = angles(*m, f.parent_map()[k]);
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(RefineLocal, SingleInteriorTriangle) {
  auto m = make({0, 1, 0, 1}, 0.125);
  // a triangle away from the boundary
  int target = -1;
  for (std::size_t k = 0; k < m->num_triangles(); ++k) {
    Point c = m->centroid(static_cast<int>(k));
    if (std::abs(c.x - 0.5) < 0.07 && std::abs(c.y - 0.5) < 0.07) {
      target = static_cast<int>(k);
      break;
    }
  }
  ASSERT_GE(target, 0);
  std::vector<int> marked{target};
  TriMesh f = refine_local(*m, marked);
  EXPECT_TRUE(check_conforming(f).ok());
  expect_nested(*m, f);

  std::map<int, int> children;
  for (int p : f.parent_map())
    ++children[p];
  EXPECT_EQ(children[target], 4);

  // Triangles that share no vertex with the marked one keep a single child
  // identical to themselves unless closure reached them; closure must stay
  // within two rings of the marked triangle.
  std::set<int> ring0(m->triangle(target).begin(), m->triangle(target).end());
  for (const auto& [p, n] : children) {
    if (n == 1)
      continue;
    Point c = m->centroid(p), c0 = m->centroid(target);
    EXPECT_LT(distance(c, c0), 4.0 * m->h_max()) << "closure spread to triangle " << p;
  }
  for (std::size_t k = 0; k < f.num_triangles(); ++k) {
    int p = f.parent_map()[k];
    if (children[p] == 1) {
      EXPECT_NEAR(f.area(static_cast<int>(k)), m->area(p), 1e-15);
    }
  }
  // growth is local
  EXPECT_LT(f.num_triangles(), m->num_triangles() + 20);
}

TEST(RefineLocal, RejectsEmptyAndOutOfRange) {
  auto m = make({0, 1, 0, 1}, 0.5);
  std::vector<int> none;
  EXPECT_THROW(refine_local(*m, none), ValidationError);
  std::vector<int> bad{static_cast<int>(m->num_triangles())};
  EXPECT_THROW(refine_local(*m, bad), ValidationError);
}

TEST(RefineLocal, ShapeFloorViolationThrows) {
  auto m = make({0, 1, 0, 1}, 0.5);
  std::vector<int> marked{0};
  ShapeLimits tight;
  tight.a1 = 0.4; // children have diameter ~0.35
  EXPECT_THROW(refine_local(*m, marked, tight), NumericalError);
}

TEST(RefineLocal, SurfaceLabelsFollowBisection) {
  Rect omega{-1, 1, -1, 1};
  auto m = make({-2, 2, -2, 2}, 0.5, omega);
  std::vector<int> all(m->num_triangles());
  std::iota(all.begin(), all.end(), 0);
  TriMesh f = refine_local(*m, all);
  auto surf = f.nodes_with_label(label_of(Side::surface));
  EXPECT_EQ(surf.size(), 4u * 8u);
  for (int n : surf)
    EXPECT_TRUE(omega.on_boundary(f.node(n), 1e-12));
  EXPECT_TRUE(check_conforming(f).ok());
}

// Random local refinements: conformity, shape regularity and nestedness hold
// after every step.
TEST(RefineLocal, RandomMarkingProperty) {
  std::mt19937_64 rng(20240607);
  auto base = make({0, 2, 0, 1}, 0.5);
  int cases = 0;
  while (cases < 1000) {
    MeshPtr m = base;
    for (int step = 0; step < 4 && cases < 1000; ++step, ++cases) {
      std::uniform_int_distribution<int> count(1, 3);
      std::uniform_int_distribution<int> pick(0, static_cast<int>(m->num_triangles()) - 1);
      std::vector<int> marked;
      for (int i = count(rng); i > 0; --i)
        marked.push_back(pick(rng));
      auto f = std::make_shared<const TriMesh>(refine_local(*m, marked));
      auto conf = check_conforming(*f);
      ASSERT_TRUE(conf.ok()) << "case " << cases << ": " << conf.open_interior_edges << " open edges";
      ASSERT_TRUE(check_shape(*f).ok(ShapeLimits{})) << "case " << cases;
      ASSERT_EQ(f->level(), m->level() + 1);
      std::map<int, int> children;
      for (int p : f->parent_map())
        ++children[p];
      for (int k : marked)
        ASSERT_GE(children[k], 4) << "marked triangle not subdivided";
      if (cases % 50 == 0)
        expect_nested(*m, *f);
      m = f;
    }
  }
}

TEST(MeshIo, RoundTripPreservesChecksum) {
  auto m = make({-1, 1, -1, 1}, 0.25, Rect{-0.5, 0.5, -0.5, 0.5});
  std::stringstream ss;
  write_mesh(ss, *m);
  TriMesh r = read_mesh(ss);
  EXPECT_EQ(r.checksum(), m->checksum());
  EXPECT_EQ(r.boundary_edges().size(), m->boundary_edges().size());
}

TEST(MeshIo, FieldChecksumMismatchRejected) {
  auto a = make({0, 1, 0, 1}, 0.25);
  auto b = make({0, 1, 0, 1}, 0.2);
  NodalField f(a, 2.0);
  std::stringstream ss;
  write_field(ss, f);
  std::stringstream copy(ss.str());
  EXPECT_NO_THROW(read_field(ss, a));
  EXPECT_THROW(read_field(copy, b), ValidationError);
}

TEST(MeshIo, MalformedInputRejected) {
  std::stringstream ss("tri-mesh v1\nnodes 3\n0 0\n1 0\n");
  EXPECT_THROW(read_mesh(ss), IoError);
}
