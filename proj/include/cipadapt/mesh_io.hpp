#pragma once

// Plain-text mesh and field files.
//
//   tri-mesh v1           field v1
//   nodes N               checksum <16 hex digits>
//   x y   (N lines)       v     (N lines)
//   tris M
//   i j k (M lines)
//   bedges B
//   i j label (B lines)

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>

#include "fem.hpp"

namespace cipadapt {

inline void write_mesh(std::ostream& os, const TriMesh& mesh) {
  os << "tri-mesh v1\n";
  os << "nodes " << mesh.num_nodes() << '\n';
  os << std::setprecision(17);
  for (const auto& p : mesh.nodes())
    os << p.x << ' ' << p.y << '\n';
  os << "tris " << mesh.num_triangles() << '\n';
  for (const auto& t : mesh.triangles())
    os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  os << "bedges " << mesh.boundary_edges().size() << '\n';
  for (const auto& e : mesh.boundary_edges())
    os << e.a << ' ' << e.b << ' ' << e.label << '\n';
}

namespace detail {
inline void expect_token(std::istream& is, const std::string& want) {
  std::string tok;
  if (!(is >> tok) || tok != want)
    throw IoError("expected '" + want + "' but found '" + tok + "'");
}
template <class T> T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v))
    throw IoError(std::string("failed to read ") + what);
  return v;
}
} // namespace detail

inline TriMesh read_mesh(std::istream& is) {
  detail::expect_token(is, "tri-mesh");
  detail::expect_token(is, "v1");
  detail::expect_token(is, "nodes");
  auto n = detail::read_value<std::size_t>(is, "node count");
  std::vector<Point> nodes(n);
  for (auto& p : nodes) {
    p.x = detail::read_value<double>(is, "node x");
    p.y = detail::read_value<double>(is, "node y");
  }
  detail::expect_token(is, "tris");
  auto m = detail::read_value<std::size_t>(is, "triangle count");
  std::vector<TriMesh::Tri> tris(m);
  for (auto& t : tris)
    for (int& v : t)
      v = detail::read_value<int>(is, "triangle index");
  detail::expect_token(is, "bedges");
  auto b = detail::read_value<std::size_t>(is, "edge count");
  std::vector<BoundaryEdge> edges(b);
  for (auto& e : edges) {
    e.a = detail::read_value<int>(is, "edge node");
    e.b = detail::read_value<int>(is, "edge node");
    e.label = detail::read_value<int>(is, "edge label");
  }
  return TriMesh(std::move(nodes), std::move(tris), std::move(edges));
}

inline void write_field(std::ostream& os, const NodalField& f) {
  os << "field v1\n";
  os << "checksum " << checksum_hex(f.mesh->checksum()) << '\n';
  os << std::setprecision(17);
  for (double v : f.values)
    os << v << '\n';
}

/// Reads a field file; the stored checksum must match `mesh`.
inline NodalField read_field(std::istream& is, MeshPtr mesh) {
  detail::expect_token(is, "field");
  detail::expect_token(is, "v1");
  detail::expect_token(is, "checksum");
  std::string sum;
  is >> sum;
  if (sum != checksum_hex(mesh->checksum()))
    throw ValidationError("field checksum " + sum + " does not match mesh checksum " +
                          checksum_hex(mesh->checksum()));
  std::vector<double> v(mesh->num_nodes());
  for (auto& x : v)
    x = detail::read_value<double>(is, "field value");
  return NodalField(std::move(mesh), std::move(v));
}

inline void save_mesh(const std::filesystem::path& p, const TriMesh& mesh) {
  std::ofstream os(p);
  if (!os)
    throw IoError("cannot write " + p.string());
  write_mesh(os, mesh);
}

inline MeshPtr load_mesh(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is)
    throw IoError("cannot read " + p.string());
  return std::make_shared<const TriMesh>(read_mesh(is));
}

inline void save_field(const std::filesystem::path& p, const NodalField& f) {
  std::ofstream os(p);
  if (!os)
    throw IoError("cannot write " + p.string());
  write_field(os, f);
}

inline NodalField load_field(const std::filesystem::path& p, MeshPtr mesh) {
  std::ifstream is(p);
  if (!is)
    throw IoError("cannot read " + p.string());
  return read_field(is, std::move(mesh));
}

} // namespace cipadapt
