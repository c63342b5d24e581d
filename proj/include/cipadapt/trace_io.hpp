#pragma once

// Trace CSV files and transfer of traces between detector sets / time grids.
//
// CSV layout: header `t, <node_id>, <node_id>, ...`, then one row per sample
// instant.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "wave.hpp"

namespace cipadapt {

inline void write_trace_csv(std::ostream& os, const BoundaryTraceMatrix& tr) {
  tr.validate();
  os << 't';
  for (int d : tr.detector_nodes)
    os << ", " << d;
  os << '\n' << std::setprecision(17);
  for (std::size_t j = 0; j < tr.times.size(); ++j) {
    os << tr.times[j];
    for (std::size_t i = 0; i < tr.detector_nodes.size(); ++i)
      os << ", " << tr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    os << '\n';
  }
}

/// Reads a trace CSV. Detector positions are taken from `mesh` when given.
inline BoundaryTraceMatrix read_trace_csv(std::istream& is, const TriMesh* mesh = nullptr) {
  std::string line;
  if (!std::getline(is, line))
    throw IoError("trace file is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ','))
      out.push_back(cell);
    return out;
  };
  auto header = split(line);
  if (header.empty() || header[0].find('t') == std::string::npos)
    throw IoError("trace header must start with 't'");
  BoundaryTraceMatrix tr;
  for (std::size_t i = 1; i < header.size(); ++i) {
    try {
      tr.detector_nodes.push_back(std::stoi(header[i]));
    } catch (const std::exception&) {
      throw IoError("bad detector id '" + header[i] + "' in trace header");
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw IoError("trace row has " + std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(header.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw IoError("bad number '" + c + "' in trace file");
      }
    }
    rows.push_back(std::move(row));
  }
  tr.values.resize(static_cast<Eigen::Index>(tr.detector_nodes.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    tr.times.push_back(rows[j][0]);
    for (std::size_t i = 0; i < tr.detector_nodes.size(); ++i)
      tr.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i + 1];
  }
  if (mesh) {
    for (int d : tr.detector_nodes) {
      if (d < 0 || static_cast<std::size_t>(d) >= mesh->num_nodes())
        throw IoError("trace detector " + std::to_string(d) + " is not a node of the mesh");
      tr.positions.push_back(mesh->node(d));
    }
  } else {
    tr.positions.assign(tr.detector_nodes.size(), Point{});
  }
  tr.validate();
  return tr;
}

inline void save_trace_csv(const std::filesystem::path& p, const BoundaryTraceMatrix& tr) {
  std::ofstream os(p);
  if (!os)
    throw IoError("cannot write " + p.string());
  write_trace_csv(os, tr);
}

inline BoundaryTraceMatrix load_trace_csv(const std::filesystem::path& p, const TriMesh* mesh = nullptr) {
  std::ifstream is(p);
  if (!is)
    throw IoError("cannot read " + p.string());
  return read_trace_csv(is, mesh);
}

/// Transfers a trace to new detector positions and sample times. Each target
/// position must coincide with a source detector or lie on the segment
/// between two source detectors (tolerance `tol`); values are interpolated
/// linearly along that segment and linearly in time.
inline BoundaryTraceMatrix resample_trace(const BoundaryTraceMatrix& src, const std::vector<int>& nodes,
                                          const std::vector<Point>& positions, const std::vector<double>& times,
                                          double tol = 1e-9) {
  src.validate();
  detail::require(nodes.size() == positions.size(), "resample_trace: nodes/positions size mismatch");
  detail::require(!src.times.empty(), "resample_trace: empty source trace");
  const double t_end = src.times.back();
  for (double t : times)
    if (t < src.times.front() - 1e-9 * std::max(1.0, t_end) || t > t_end + 1e-9 * std::max(1.0, t_end))
      throw ValidationError("resample_trace: target time " + std::to_string(t) + " outside the data interval");

  // spatial weights: target i = (1 - s) * src[a] + s * src[b]
  struct Stencil {
    int a = -1, b = -1;
    double s = 0.0;
  };
  std::vector<Stencil> stencil(positions.size());
  const auto& sp = src.positions;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Point p = positions[i];
    int nearest = -1;
    double dmin = 1e300;
    for (std::size_t j = 0; j < sp.size(); ++j) {
      double d = distance(p, sp[j]);
      if (d < dmin) {
        dmin = d;
        nearest = static_cast<int>(j);
      }
    }
    if (dmin <= tol) {
      stencil[i] = {nearest, nearest, 0.0};
      continue;
    }
    // partner: the closest detector b with p on segment [a, b]
    int partner = -1;
    double best_ab = 1e300;
    for (std::size_t j = 0; j < sp.size(); ++j) {
      if (static_cast<int>(j) == nearest)
        continue;
      double ab = distance(sp[nearest], sp[j]);
      double detour = dmin + distance(p, sp[j]) - ab;
      if (detour <= tol && ab < best_ab) {
        best_ab = ab;
        partner = static_cast<int>(j);
      }
    }
    if (partner < 0)
      throw ValidationError("resample_trace: target detector (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                            ") does not lie on the source detector polyline");
    double ab = distance(sp[nearest], sp[partner]);
    stencil[i] = {nearest, partner, dmin / ab};
  }

  BoundaryTraceMatrix out;
  out.detector_nodes = nodes;
  out.positions = positions;
  out.times = times;
  out.values.resize(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(times.size()));
  const auto& st = src.times;
  for (std::size_t j = 0; j < times.size(); ++j) {
    double t = std::clamp(times[j], st.front(), st.back());
    auto it = std::upper_bound(st.begin(), st.end(), t);
    std::size_t hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - st.begin(), st.size() - 1));
    std::size_t lo = hi == 0 ? 0 : hi - 1;
    double w = (hi == lo) ? 0.0 : (t - st[lo]) / (st[hi] - st[lo]);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& s = stencil[i];
      auto at = [&](std::size_t col) {
        return (1.0 - s.s) * src.values(s.a, static_cast<Eigen::Index>(col)) +
               s.s * src.values(s.b, static_cast<Eigen::Index>(col));
      };
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (1.0 - w) * at(lo) + w * at(hi);
    }
  }
  return out;
}

} // namespace cipadapt
