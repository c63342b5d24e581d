#pragma once

// P1 finite-element machinery on a TriMesh: nodal fields, point location,
// exact mass/stiffness assembly, interpolation and L2 projection.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <optional>
#include <vector>

#include "mesh.hpp"

namespace cipadapt {

/// Continuous piecewise-linear function given by its nodal values.
struct NodalField {
  MeshPtr mesh;
  std::vector<double> values;

  NodalField() = default;
  NodalField(MeshPtr m, std::vector<double> v) : mesh(std::move(m)), values(std::move(v)) {
    detail::require(mesh != nullptr, "NodalField needs a mesh");
    detail::require(values.size() == mesh->num_nodes(), "NodalField: one value per node required");
  }
  NodalField(MeshPtr m, double constant) : mesh(std::move(m)) {
    detail::require(mesh != nullptr, "NodalField needs a mesh");
    values.assign(mesh->num_nodes(), constant);
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  template <class F> static NodalField from_function(MeshPtr m, F&& f) {
    std::vector<double> v(m->num_nodes());
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = f(m->node(static_cast<int>(i)));
    return NodalField(std::move(m), std::move(v));
  }
};

inline Eigen::Map<const Eigen::VectorXd> as_vector(const NodalField& f) {
  return {f.values.data(), static_cast<Eigen::Index>(f.values.size())};
}

/// Bucket grid over triangle bounding boxes for point-in-triangle queries.
class PointLocator {
public:
  struct Hit {
    int triangle = -1;
    std::array<double, 3> bary{};
  };

  explicit PointLocator(MeshPtr mesh) : mesh_(std::move(mesh)) {
    box_ = mesh_->bounding_box();
    const double n = static_cast<double>(mesh_->num_triangles());
    const int cells = std::max(1, static_cast<int>(std::sqrt(n / 2.0)));
    nx_ = ny_ = cells;
    cw_ = std::max(box_.width(), 1e-300) / nx_;
    ch_ = std::max(box_.height(), 1e-300) / ny_;
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    tol_ = 1e-12 * box_.diameter();
    for (std::size_t k = 0; k < mesh_->num_triangles(); ++k) {
      const auto& t = mesh_->triangle(static_cast<int>(k));
      double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
      for (int v : t) {
        x0 = std::min(x0, mesh_->node(v).x);
        x1 = std::max(x1, mesh_->node(v).x);
        y0 = std::min(y0, mesh_->node(v).y);
        y1 = std::max(y1, mesh_->node(v).y);
      }
      int i0 = cell_x(x0 - tol_), i1 = cell_x(x1 + tol_), j0 = cell_y(y0 - tol_), j1 = cell_y(y1 + tol_);
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i)
          buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(k));
    }
  }

  /// Geometric tolerance: 1e-12 times the mesh bounding-box diameter.
  double tolerance() const { return tol_; }
  const MeshPtr& mesh() const { return mesh_; }

  std::optional<Hit> locate(Point p) const {
    if (!box_.contains(p, tol_))
      return std::nullopt;
    const auto& bucket = buckets_[static_cast<std::size_t>(cell_y(p.y)) * nx_ + cell_x(p.x)];
    std::optional<Hit> best;
    double best_min = -1e300;
    for (int k : bucket) {
      auto b = barycentric(k, p);
      double mn = std::min({b[0], b[1], b[2]});
      if (mn > best_min) {
        best_min = mn;
        best = Hit{k, b};
      }
      if (mn >= 0.0)
        return best;
    }
    // Accept points within the geometric tolerance of the closest triangle.
    if (best && best_min * 2.0 * mesh_->area(best->triangle) / mesh_->diameter(best->triangle) >= -tol_)
      return best;
    return std::nullopt;
  }

  std::array<double, 3> barycentric(int k, Point p) const {
    const auto& t = mesh_->triangle(k);
    Point a = mesh_->node(t[0]), b = mesh_->node(t[1]), c = mesh_->node(t[2]);
    double inv = 1.0 / (2.0 * mesh_->area(k));
    double l0 = ((b.x - p.x) * (c.y - p.y) - (c.x - p.x) * (b.y - p.y)) * inv;
    double l1 = ((c.x - p.x) * (a.y - p.y) - (a.x - p.x) * (c.y - p.y)) * inv;
    return {l0, l1, 1.0 - l0 - l1};
  }

private:
  int cell_x(double x) const { return std::clamp(static_cast<int>((x - box_.xmin) / cw_), 0, nx_ - 1); }
  int cell_y(double y) const { return std::clamp(static_cast<int>((y - box_.ymin) / ch_), 0, ny_ - 1); }

  MeshPtr mesh_;
  Rect box_;
  int nx_ = 1, ny_ = 1;
  double cw_ = 1, ch_ = 1, tol_ = 0;
  std::vector<std::vector<int>> buckets_;
};

/// Evaluates a nodal field at arbitrary points; throws if a point lies outside.
class FieldEvaluator {
public:
  explicit FieldEvaluator(const NodalField& f) : field_(&f), locator_(f.mesh) {}

  double operator()(Point p) const {
    auto hit = locator_.locate(p);
    if (!hit)
      throw ValidationError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                            ") lies outside the mesh");
    const auto& t = field_->mesh->triangle(hit->triangle);
    return hit->bary[0] * field_->values[t[0]] + hit->bary[1] * field_->values[t[1]] +
           hit->bary[2] * field_->values[t[2]];
  }

private:
  const NodalField* field_;
  PointLocator locator_;
};

/// Nodal interpolant of `field` on `target`. Exact when `target` refines the
/// source mesh.
inline NodalField interpolate(const NodalField& field, MeshPtr target) {
  FieldEvaluator eval(field);
  std::vector<double> v(target->num_nodes());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = eval(target->node(static_cast<int>(i)));
  return NodalField(std::move(target), std::move(v));
}

// ---------------------------------------------------------------- assembly

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

/// Triangles whose centroid lies inside `region`; all triangles if absent.
inline std::vector<char> triangle_mask(const TriMesh& mesh, const std::optional<Rect>& region) {
  std::vector<char> mask(mesh.num_triangles(), 1);
  if (region)
    for (std::size_t k = 0; k < mask.size(); ++k)
      mask[k] = region->contains(mesh.centroid(static_cast<int>(k))) ? 1 : 0;
  return mask;
}

/// Consistent P1 mass matrix, exact for products of linears:
/// M_K = |K|/12 * [2 1 1; 1 2 1; 1 1 2].
inline SparseMatrix mass_matrix(const TriMesh& mesh, const std::optional<Rect>& region = {}) {
  auto mask = triangle_mask(mesh, region);
  Triplets trip;
  trip.reserve(9 * mesh.num_triangles());
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k) {
    if (!mask[k])
      continue;
    const auto& t = mesh.triangle(static_cast<int>(k));
    double a = mesh.area(static_cast<int>(k)) / 12.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(t[i], t[j], i == j ? 2.0 * a : a);
  }
  auto n = static_cast<Eigen::Index>(mesh.num_nodes());
  SparseMatrix m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

inline SparseMatrix stiffness_matrix(const TriMesh& mesh) {
  Triplets trip;
  trip.reserve(9 * mesh.num_triangles());
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k) {
    const auto& t = mesh.triangle(static_cast<int>(k));
    Point p[3] = {mesh.node(t[0]), mesh.node(t[1]), mesh.node(t[2])};
    double area = mesh.area(static_cast<int>(k));
    // gradient of barycentric i is rot90(opposite edge) / (2|K|)
    double gx[3], gy[3];
    for (int i = 0; i < 3; ++i) {
      Point a = p[(i + 1) % 3], b = p[(i + 2) % 3];
      gx[i] = (a.y - b.y) / (2.0 * area);
      gy[i] = (b.x - a.x) / (2.0 * area);
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(t[i], t[j], area * (gx[i] * gx[j] + gy[i] * gy[j]));
  }
  auto n = static_cast<Eigen::Index>(mesh.num_nodes());
  SparseMatrix a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

/// Row sums of the mass matrix weighted by the P1 function `c`:
/// entry i is the integral of c * phi_i.
inline Eigen::VectorXd weighted_lumped_mass(const TriMesh& mesh, const Eigen::VectorXd& c) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.num_nodes()));
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k) {
    const auto& t = mesh.triangle(static_cast<int>(k));
    double a = mesh.area(static_cast<int>(k)) / 12.0;
    double s = c[t[0]] + c[t[1]] + c[t[2]];
    for (int i = 0; i < 3; ++i)
      m[t[i]] += a * (c[t[i]] + s);
  }
  return m;
}

/// Lumped 1D mass of the edges carrying one of `labels`: half the edge length
/// to each endpoint.
inline Eigen::VectorXd boundary_lumped_mass(const TriMesh& mesh, std::span<const int> labels) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.num_nodes()));
  for (const auto& e : mesh.boundary_edges()) {
    if (std::find(labels.begin(), labels.end(), e.label) == labels.end())
      continue;
    double len = distance(mesh.node(e.a), mesh.node(e.b));
    b[e.a] += 0.5 * len;
    b[e.b] += 0.5 * len;
  }
  return b;
}

/// Consistent 1D mass matrix of the edges carrying `label`.
inline SparseMatrix boundary_mass_matrix(const TriMesh& mesh, int label) {
  Triplets trip;
  for (const auto& e : mesh.boundary_edges()) {
    if (e.label != label)
      continue;
    double len = distance(mesh.node(e.a), mesh.node(e.b));
    trip.emplace_back(e.a, e.a, len / 3.0);
    trip.emplace_back(e.b, e.b, len / 3.0);
    trip.emplace_back(e.a, e.b, len / 6.0);
    trip.emplace_back(e.b, e.a, len / 6.0);
  }
  auto n = static_cast<Eigen::Index>(mesh.num_nodes());
  SparseMatrix m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

// ------------------------------------------------------------ L2 algebra

namespace detail {
inline void require_same_mesh(const NodalField& a, const NodalField& b) {
  if (a.mesh != b.mesh && (a.mesh == nullptr || b.mesh == nullptr || a.mesh->checksum() != b.mesh->checksum()))
    throw ValidationError("fields live on different meshes");
}
} // namespace detail

/// L2 inner product, exact for P1 functions; restricted to triangles with
/// centroid in `region` when given.
inline double l2_inner(const NodalField& a, const NodalField& b, const std::optional<Rect>& region = {}) {
  detail::require_same_mesh(a, b);
  const TriMesh& mesh = *a.mesh;
  double sum = 0.0;
  for (std::size_t k = 0; k < mesh.num_triangles(); ++k) {
    if (region && !region->contains(mesh.centroid(static_cast<int>(k))))
      continue;
    const auto& t = mesh.triangle(static_cast<int>(k));
    double sa = 0.0, sb = 0.0, sab = 0.0;
    for (int v : t) {
      sa += a.values[v];
      sb += b.values[v];
      sab += a.values[v] * b.values[v];
    }
    sum += mesh.area(static_cast<int>(k)) / 12.0 * (sab + sa * sb);
  }
  return sum;
}

inline double l2_norm(const NodalField& f, const std::optional<Rect>& region = {}) {
  return std::sqrt(std::max(0.0, l2_inner(f, f, region)));
}

inline NodalField operator-(const NodalField& a, const NodalField& b) {
  detail::require_same_mesh(a, b);
  std::vector<double> v(a.values.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a.values[i] - b.values[i];
  return NodalField(a.mesh, std::move(v));
}

/// Orthogonal L2 projection of a field on a refined mesh onto the P1 space of
/// one of its ancestor meshes.
inline NodalField l2_project(const NodalField& field, MeshPtr coarse) {
  const TriMesh& fine = *field.mesh;
  PointLocator loc(coarse);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(coarse->num_nodes()));
  const double bary_tol = 1e-9;
  for (std::size_t k = 0; k < fine.num_triangles(); ++k) {
    auto hit = loc.locate(fine.centroid(static_cast<int>(k)));
    if (!hit)
      throw ValidationError("l2_project: fine mesh is not covered by the coarse mesh");
    const auto& ct = coarse->triangle(hit->triangle);
    const auto& ft = fine.triangle(static_cast<int>(k));
    // phi_j of the coarse triangle evaluated at the three fine vertices
    std::array<std::array<double, 3>, 3> g{};
    for (int a = 0; a < 3; ++a) {
      auto b = loc.barycentric(hit->triangle, fine.node(ft[a]));
      for (int j = 0; j < 3; ++j) {
        if (b[j] < -bary_tol)
          throw ValidationError("l2_project: target mesh is not an ancestor of the field's mesh");
        g[j][a] = b[j];
      }
    }
    double w = fine.area(static_cast<int>(k)) / 12.0;
    double sf = field.values[ft[0]] + field.values[ft[1]] + field.values[ft[2]];
    for (int j = 0; j < 3; ++j) {
      double sg = g[j][0] + g[j][1] + g[j][2];
      double sfg = 0.0;
      for (int a = 0; a < 3; ++a)
        sfg += field.values[ft[a]] * g[j][a];
      rhs[ct[j]] += w * (sfg + sf * sg);
    }
  }
  SparseMatrix m = mass_matrix(*coarse);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(m);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("l2_project: mass matrix factorization failed");
  Eigen::VectorXd x = ldlt.solve(rhs);
  return NodalField(std::move(coarse), std::vector<double>(x.data(), x.data() + x.size()));
}

} // namespace cipadapt
