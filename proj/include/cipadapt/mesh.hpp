#pragma once

// Conforming triangulations of rectangles: construction, local refinement by
// newest-vertex bisection, and the geometric invariants the FE spaces rely on.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"

namespace cipadapt {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned rectangle [xmin, xmax] x [ymin, ymax].
struct Rect {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double diameter() const { return std::hypot(width(), height()); }
  bool contains(Point p, double tol = 0.0) const {
    return p.x >= xmin - tol && p.x <= xmax + tol && p.y >= ymin - tol && p.y <= ymax + tol;
  }
  bool strictly_contains(Point p) const {
    return p.x > xmin && p.x < xmax && p.y > ymin && p.y < ymax;
  }
  bool on_boundary(Point p, double tol) const {
    if (!contains(p, tol))
      return false;
    return std::abs(p.x - xmin) <= tol || std::abs(p.x - xmax) <= tol || std::abs(p.y - ymin) <= tol ||
           std::abs(p.y - ymax) <= tol;
  }
};

/// Edge labels. Labels 1-4 are the sides of the outer rectangle; `surface`
/// marks interior edges lying on the measurement surface.
enum class Side : int { bottom = 1, right = 2, top = 3, left = 4, surface = 5 };

inline constexpr int label_of(Side s) { return static_cast<int>(s); }
inline constexpr bool is_outer_label(int label) { return label >= 1 && label <= 4; }

struct BoundaryEdge {
  int a = 0;
  int b = 0;
  int label = 0;
};

/// Constants of the shape-regularity and quasi-uniformity conditions:
/// a1 <= h_K <= a2 * r_K for every element, and h_max / h_min <= c_T.
struct ShapeLimits {
  double a1 = 1e-4;
  double a2 = 6.0;
  double c_T = 64.0;
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
  auto lo = static_cast<std::uint64_t>(std::min(a, b));
  auto hi = static_cast<std::uint64_t>(std::max(a, b));
  return (lo << 32) | hi;
}

inline double signed_area(Point a, Point b, Point c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
}

class Fnv1a {
public:
  void add_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <class T> void add(const T& v) { add_bytes(&v, sizeof(T)); }
  std::uint64_t value() const { return h_; }

private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

} // namespace detail

/// Conforming triangulation. Each triangle is stored as (newest vertex, v1, v2)
/// in counter-clockwise order; the edge v1-v2 is its refinement edge.
/// Immutable once constructed.
class TriMesh {
public:
  using Tri = std::array<int, 3>;

  TriMesh(std::vector<Point> nodes, std::vector<Tri> tris, std::vector<BoundaryEdge> bedges, int level = 1,
          std::vector<int> parent = {})
      : nodes_(std::move(nodes)), tris_(std::move(tris)), bedges_(std::move(bedges)), level_(level),
        parent_(std::move(parent)) {
    detail::require(level_ >= 1, "mesh level must be >= 1");
    detail::require(parent_.empty() || parent_.size() == tris_.size(), "parent map size mismatch");
    const int n = static_cast<int>(nodes_.size());
    area_.resize(tris_.size());
    diameter_.resize(tris_.size());
    inradius_.resize(tris_.size());
    min_edge_ = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < tris_.size(); ++k) {
      const auto& t = tris_[k];
      for (int v : t)
        detail::require(v >= 0 && v < n, "triangle references missing node");
      Point a = nodes_[t[0]], b = nodes_[t[1]], c = nodes_[t[2]];
      double ar = detail::signed_area(a, b, c);
      if (!(ar > 0.0))
        throw ValidationError("triangle " + std::to_string(k) + " has non-positive signed area");
      double ab = distance(a, b), bc = distance(b, c), ca = distance(c, a);
      area_[k] = ar;
      diameter_[k] = std::max({ab, bc, ca});
      inradius_[k] = 2.0 * ar / (ab + bc + ca);
      min_edge_ = std::min({min_edge_, ab, bc, ca});
    }
    boundary_mask_.assign(nodes_.size(), 0u);
    for (const auto& e : bedges_) {
      detail::require(e.a >= 0 && e.a < n && e.b >= 0 && e.b < n, "boundary edge references missing node");
      detail::require(e.label >= 1 && e.label < 32, "boundary label out of range");
      boundary_mask_[e.a] |= 1u << e.label;
      boundary_mask_[e.b] |= 1u << e.label;
    }
    detail::Fnv1a h;
    for (const auto& p : nodes_) {
      h.add(p.x);
      h.add(p.y);
    }
    for (const auto& t : tris_)
      for (int v : t)
        h.add(v);
    checksum_ = h.value();
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_triangles() const { return tris_.size(); }
  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<Tri>& triangles() const { return tris_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return bedges_; }
  Point node(int i) const { return nodes_[i]; }
  const Tri& triangle(int k) const { return tris_[k]; }
  int level() const { return level_; }
  /// Index of the enclosing triangle in the previous level (empty at level 1).
  const std::vector<int>& parent_map() const { return parent_; }

  double area(int k) const { return area_[k]; }
  double diameter(int k) const { return diameter_[k]; }
  double inradius(int k) const { return inradius_[k]; }
  const std::vector<double>& diameters() const { return diameter_; }
  double h_max() const { return *std::max_element(diameter_.begin(), diameter_.end()); }
  double h_min() const { return *std::min_element(diameter_.begin(), diameter_.end()); }
  /// Shortest edge of the whole mesh; the time-step restriction uses this.
  double min_edge() const { return min_edge_; }

  Point centroid(int k) const {
    const auto& t = tris_[k];
    return {(nodes_[t[0]].x + nodes_[t[1]].x + nodes_[t[2]].x) / 3.0,
            (nodes_[t[0]].y + nodes_[t[1]].y + nodes_[t[2]].y) / 3.0};
  }

  Rect bounding_box() const {
    Rect r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
           std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : nodes_) {
      r.xmin = std::min(r.xmin, p.x);
      r.xmax = std::max(r.xmax, p.x);
      r.ymin = std::min(r.ymin, p.y);
      r.ymax = std::max(r.ymax, p.y);
    }
    return r;
  }

  bool is_boundary_node(int i) const { return boundary_mask_[i] != 0u; }
  bool node_has_label(int i, int label) const { return (boundary_mask_[i] >> label) & 1u; }

  /// Sorted node indices touched by edges carrying `label`.
  std::vector<int> nodes_with_label(int label) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (node_has_label(static_cast<int>(i), label))
        out.push_back(static_cast<int>(i));
    return out;
  }

  bool has_label(int label) const {
    return std::any_of(bedges_.begin(), bedges_.end(), [&](const BoundaryEdge& e) { return e.label == label; });
  }

  std::uint64_t checksum() const { return checksum_; }

private:
  std::vector<Point> nodes_;
  std::vector<Tri> tris_;
  std::vector<BoundaryEdge> bedges_;
  int level_ = 1;
  std::vector<int> parent_;
  std::vector<double> area_, diameter_, inradius_;
  double min_edge_ = 0.0;
  std::vector<unsigned> boundary_mask_;
  std::uint64_t checksum_ = 0;
};

using MeshPtr = std::shared_ptr<const TriMesh>;

inline std::string checksum_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Triangulates `domain` with a regular grid of squares of side <= target_h,
/// each split along its south-west/north-east diagonal. Outer edges get the
/// labels of their side; when `surface` is given, grid edges lying on its
/// boundary are labelled Side::surface.
inline TriMesh build_structured_mesh(const Rect& domain, double target_h, std::optional<Rect> surface = {}) {
  detail::require(target_h > 0.0, "target_h must be positive");
  detail::require(domain.width() > 0.0 && domain.height() > 0.0, "rectangle is degenerate");
  detail::require(target_h <= std::min(domain.width(), domain.height()) * (1.0 + 1e-12),
                  "target_h exceeds the shorter rectangle side");
  const int nx = std::max(1, static_cast<int>(std::ceil(domain.width() / target_h - 1e-9)));
  const int ny = std::max(1, static_cast<int>(std::ceil(domain.height() / target_h - 1e-9)));
  const double hx = domain.width() / nx, hy = domain.height() / ny;

  std::vector<Point> nodes;
  nodes.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      nodes.push_back({i == nx ? domain.xmax : domain.xmin + i * hx, j == ny ? domain.ymax : domain.ymin + j * hy});
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };

  std::vector<TriMesh::Tri> tris;
  tris.reserve(static_cast<std::size_t>(2) * nx * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int p00 = id(i, j), p10 = id(i + 1, j), p11 = id(i + 1, j + 1), p01 = id(i, j + 1);
      tris.push_back({p10, p11, p00}); // right angle at p10
      tris.push_back({p01, p00, p11}); // right angle at p01
    }

  std::vector<BoundaryEdge> bedges;
  for (int i = 0; i < nx; ++i) {
    bedges.push_back({id(i, 0), id(i + 1, 0), label_of(Side::bottom)});
    bedges.push_back({id(i, ny), id(i + 1, ny), label_of(Side::top)});
  }
  for (int j = 0; j < ny; ++j) {
    bedges.push_back({id(0, j), id(0, j + 1), label_of(Side::left)});
    bedges.push_back({id(nx, j), id(nx, j + 1), label_of(Side::right)});
  }
  if (surface) {
    const double tol = 1e-9 * domain.diameter();
    auto on_surface = [&](int a, int b) {
      Point pa = nodes[a], pb = nodes[b];
      bool horiz = std::abs(pa.y - pb.y) <= tol, vert = std::abs(pa.x - pb.x) <= tol;
      const Rect& s = *surface;
      if (horiz && (std::abs(pa.y - s.ymin) <= tol || std::abs(pa.y - s.ymax) <= tol))
        return std::min(pa.x, pb.x) >= s.xmin - tol && std::max(pa.x, pb.x) <= s.xmax + tol;
      if (vert && (std::abs(pa.x - s.xmin) <= tol || std::abs(pa.x - s.xmax) <= tol))
        return std::min(pa.y, pb.y) >= s.ymin - tol && std::max(pa.y, pb.y) <= s.ymax + tol;
      return false;
    };
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (on_surface(id(i, j), id(i + 1, j)))
          bedges.push_back({id(i, j), id(i + 1, j), label_of(Side::surface)});
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i <= nx; ++i)
        if (on_surface(id(i, j), id(i, j + 1)))
          bedges.push_back({id(i, j), id(i, j + 1), label_of(Side::surface)});
    bool found = std::any_of(bedges.begin(), bedges.end(),
                             [](const BoundaryEdge& e) { return e.label == label_of(Side::surface); });
    detail::require(found, "measurement surface does not lie on grid lines");
  }
  return TriMesh(std::move(nodes), std::move(tris), std::move(bedges));
}

/// Result of the conformity check; `ok()` when no defect was found.
struct ConformityReport {
  std::size_t overshared_edges = 0; // edges with more than two triangles
  std::size_t open_interior_edges = 0; // single-triangle edges that are not on the outer boundary
  bool ok() const { return overshared_edges == 0 && open_interior_edges == 0; }
};

/// Every edge must be shared by two triangles unless it is an outer boundary
/// edge. A hanging node always leaves at least one open interior edge.
inline ConformityReport check_conforming(const TriMesh& mesh) {
  std::unordered_map<std::uint64_t, int> count;
  count.reserve(mesh.num_triangles() * 3);
  for (const auto& t : mesh.triangles())
    for (int e = 0; e < 3; ++e)
      ++count[detail::edge_key(t[e], t[(e + 1) % 3])];
  std::unordered_set<std::uint64_t> outer;
  for (const auto& be : mesh.boundary_edges())
    if (is_outer_label(be.label))
      outer.insert(detail::edge_key(be.a, be.b));
  ConformityReport r;
  for (const auto& [key, n] : count) {
    if (n > 2)
      ++r.overshared_edges;
    else if (n == 1 && !outer.count(key))
      ++r.open_interior_edges;
  }
  return r;
}

struct ShapeReport {
  double min_diameter = 0.0;
  double max_diameter_over_inradius = 0.0;
  double quasi_uniformity = 0.0; // h_max / h_min
  bool ok(const ShapeLimits& lim) const {
    return min_diameter >= lim.a1 && max_diameter_over_inradius <= lim.a2 && quasi_uniformity <= lim.c_T;
  }
};

inline ShapeReport check_shape(const TriMesh& mesh) {
  ShapeReport r;
  r.min_diameter = mesh.h_min();
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k)
    r.max_diameter_over_inradius =
        std::max(r.max_diameter_over_inradius, mesh.diameter(static_cast<int>(k)) / mesh.inradius(static_cast<int>(k)));
  r.quasi_uniformity = mesh.h_max() / mesh.h_min();
  return r;
}

/// Refines every marked triangle into four children by bisecting all three of
/// its edges (newest-vertex bisection), then closes the refinement with the
/// bisections needed to remove hanging nodes. The result is one level finer,
/// nested in `mesh`, and carries a parent map back to it.
inline TriMesh refine_local(const TriMesh& mesh, std::span<const int> marked, const ShapeLimits& limits = {}) {
  detail::require(!marked.empty(), "refine_local: marked set is empty");
  const int ntri = static_cast<int>(mesh.num_triangles());
  for (int k : marked)
    detail::require(k >= 0 && k < ntri, "refine_local: marked triangle index out of range");

  std::unordered_map<std::uint64_t, std::vector<int>> edge_tris;
  edge_tris.reserve(static_cast<std::size_t>(ntri) * 3);
  for (int k = 0; k < ntri; ++k) {
    const auto& t = mesh.triangle(k);
    for (int e = 0; e < 3; ++e)
      edge_tris[detail::edge_key(t[e], t[(e + 1) % 3])].push_back(k);
  }

  std::unordered_set<std::uint64_t> marked_edges;
  std::vector<std::uint64_t> queue;
  auto mark = [&](std::uint64_t key) {
    if (marked_edges.insert(key).second)
      queue.push_back(key);
  };
  for (int k : marked) {
    const auto& t = mesh.triangle(k);
    for (int e = 0; e < 3; ++e)
      mark(detail::edge_key(t[e], t[(e + 1) % 3]));
  }
  // Closure: a triangle with any bisected edge must also bisect its refinement edge.
  while (!queue.empty()) {
    std::uint64_t key = queue.back();
    queue.pop_back();
    for (int k : edge_tris[key]) {
      const auto& t = mesh.triangle(k);
      mark(detail::edge_key(t[1], t[2]));
    }
  }

  std::vector<Point> nodes = mesh.nodes();
  std::unordered_map<std::uint64_t, int> midpoint;
  auto mid = [&](int a, int b) {
    auto key = detail::edge_key(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end())
      return it->second;
    Point pa = nodes[a], pb = nodes[b];
    nodes.push_back({0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)});
    int id = static_cast<int>(nodes.size()) - 1;
    midpoint.emplace(key, id);
    return id;
  };

  std::vector<TriMesh::Tri> tris;
  std::vector<int> parent;
  tris.reserve(mesh.num_triangles() + 4 * marked.size());
  std::function<void(const TriMesh::Tri&, int)> split = [&](const TriMesh::Tri& t, int origin) {
    if (!marked_edges.count(detail::edge_key(t[1], t[2]))) {
      tris.push_back(t);
      parent.push_back(origin);
      return;
    }
    int m = mid(t[1], t[2]);
    split({m, t[0], t[1]}, origin);
    split({m, t[2], t[0]}, origin);
  };
  for (int k = 0; k < ntri; ++k)
    split(mesh.triangle(k), k);

  std::vector<BoundaryEdge> bedges;
  bedges.reserve(mesh.boundary_edges().size() + midpoint.size());
  for (const auto& e : mesh.boundary_edges()) {
    auto it = midpoint.find(detail::edge_key(e.a, e.b));
    if (it == midpoint.end()) {
      bedges.push_back(e);
    } else {
      bedges.push_back({e.a, it->second, e.label});
      bedges.push_back({it->second, e.b, e.label});
    }
  }

  TriMesh out(std::move(nodes), std::move(tris), std::move(bedges), mesh.level() + 1, std::move(parent));
  auto shape = check_shape(out);
  if (shape.min_diameter < limits.a1)
    throw NumericalError("refine_local: element diameter " + std::to_string(shape.min_diameter) +
                         " fell below a1; the marking tolerance is too small");
  if (shape.max_diameter_over_inradius > limits.a2)
    throw NumericalError("refine_local: shape regularity bound a2 violated");
  if (shape.quasi_uniformity > limits.c_T)
    throw NumericalError("refine_local: quasi-uniformity bound c_T violated");
  return out;
}

} // namespace cipadapt
