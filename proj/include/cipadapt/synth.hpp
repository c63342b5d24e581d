#pragma once

// Synthetic inputs: the exact phantom, simulated boundary data on an
// independent grid, multiplicative noise and a degraded starting guess.

#include "error.hpp"
#include "fem.hpp"
#include "mesh_io.hpp"
#include "wave.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cipadapt {

/// Axis-aligned square with a constant value; boundary points belong to it.
struct Square {
  Point center;
  double side = 0.5;
  double value = 4.0;

  bool contains(Point p) const {
    const double r = side / 2 + 1e-12;
    return std::abs(p.x - center.x) <= r && std::abs(p.y - center.y) <= r;
  }
};

/// c = 1 outside omega, the inclusion value inside an inclusion and
/// 1 + b(x) elsewhere in omega, where b is a product of squared sines that
/// vanishes on the open quadrant `flat`.
struct Phantom {
  Rect omega{-3, 3, -3, 3};
  std::vector<Square> inclusions{{{-1.5, 1.0}, 0.5, 4.0}, {{1.5, 1.0}, 0.5, 4.0}};
  double bump_amplitude = 0.5;
  double bump_period = 2.875;
  Rect flat{-2.875, 0.0, -2.875, 0.0};

  double background(Point p) const {
    if (flat.strictly_contains(p))
      return 1.0;
    const double k = std::numbers::pi / bump_period;
    const double sx = std::sin(k * p.x), sy = std::sin(k * p.y);
    return 1.0 + bump_amplitude * sx * sx * sy * sy;
  }

  double operator()(Point p) const {
    if (!omega.contains(p, 1e-12))
      return 1.0;
    for (const auto& s : inclusions)
      if (s.contains(p))
        return s.value;
    return background(p);
  }

  double max_value() const {
    double m = 1.0 + std::max(0.0, bump_amplitude);
    for (const auto& s : inclusions)
      m = std::max(m, s.value);
    return m;
  }

  void validate() const {
    detail::require(omega.width() > 0 && omega.height() > 0, "phantom.omega must have positive extent");
    detail::require(bump_amplitude >= 0.0, "phantom.bump_amplitude must be non-negative");
    detail::require(bump_period > 0.0, "phantom.bump_period must be positive");
    for (const auto& s : inclusions) {
      detail::require(s.side > 0.0, "phantom.inclusions.side must be positive");
      detail::require(s.value >= 1.0, "phantom.inclusions.value must be at least 1");
      detail::require(omega.contains(s.center), "phantom.inclusions.center must lie in omega");
    }
  }
};

inline NodalField sample_phantom(const Phantom& ph, MeshPtr mesh) {
  return NodalField::from_function(std::move(mesh), [&](Point p) { return ph(p); });
}

// ------------------------------------------------------------------ data

struct SyntheticData {
  BoundaryTraceMatrix trace;
  std::uint64_t sim_mesh_checksum = 0;
  WaveConfig wave; // with the resolved time step
};

/// Forward solve with the phantom on `sim_mesh`; the trace is taken at
/// every solver step on the nodes labelled as measurement surface.
inline SyntheticData generate_data(const Phantom& ph, MeshPtr sim_mesh, const WaveConfig& cfg) {
  ph.validate();
  const int surface = label_of(Side::surface);
  if (!sim_mesh->has_label(surface))
    throw ValidationError("generate_data: simulation mesh has no measurement surface");
  SyntheticData out;
  out.wave = resolve_time_step(*sim_mesh, 1.0, cfg);
  auto h = solve_forward(sim_mesh, sample_phantom(ph, sim_mesh), out.wave);
  out.trace = extract_trace(h, sim_mesh->nodes_with_label(surface));
  out.sim_mesh_checksum = sim_mesh->checksum();
  return out;
}

// ----------------------------------------------------------------- noise

struct NoiseSpec {
  double level = 0.02;
  std::uint64_t seed = 1;
  /// Draw a separate factor for every sample instead of one per time index.
  bool per_sample = false;

  void validate() const { detail::require(level >= 0.0 && std::isfinite(level), "noise.level must be non-negative"); }
};

/// g_ij <- g_ij (1 + level a (gmax - gmin)), a ~ U[-1, 1] drawn per time
/// index (or per sample), gmax/gmin the extremes of the clean data.
inline BoundaryTraceMatrix add_noise(const BoundaryTraceMatrix& g, const NoiseSpec& spec) {
  spec.validate();
  g.validate();
  BoundaryTraceMatrix out = g;
  if (spec.level == 0.0 || g.values.size() == 0)
    return out;
  const double range = g.values.maxCoeff() - g.values.minCoeff();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index j = 0; j < g.values.cols(); ++j) {
    double a = u(rng);
    for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
      if (spec.per_sample && i > 0)
        a = u(rng);
      out.values(i, j) = g.values(i, j) * (1.0 + spec.level * a * range);
    }
  }
  return out;
}

// ---------------------------------------------------------------- c_glob

enum class CGlobMode { blur, scaled, shifted, file };

inline std::string to_string(CGlobMode m) {
  switch (m) {
  case CGlobMode::blur: return "blur";
  case CGlobMode::scaled: return "scaled";
  case CGlobMode::shifted: return "shifted";
  case CGlobMode::file: return "file";
  }
  return "?";
}

inline CGlobMode cglob_mode_from_string(const std::string& s) {
  for (auto m : {CGlobMode::blur, CGlobMode::scaled, CGlobMode::shifted, CGlobMode::file})
    if (to_string(m) == s)
      return m;
  throw ValidationError("c_glob.mode: unknown value '" + s + "' (blur, scaled, shifted, file)");
}

/// Stand-in for a first-stage reconstruction.
///  blur:    Gaussian-smoothed phantom, excess over 1 rescaled to `peak`
///  scaled:  phantom excess over 1 rescaled to `peak`, no smoothing
///  shifted: as blur, with inclusion `shift_index` moved by `offset`
///  file:    field loaded from `path` (checksum must match the mesh)
/// The slowly varying background is left out unless `with_background`.
struct CGlobSpec {
  CGlobMode mode = CGlobMode::blur;
  double sigma = 0.3;
  bool with_background = false;
  std::optional<double> peak = 3.2;
  std::size_t shift_index = 0;
  Point offset{0.0, -0.5};
  std::filesystem::path path;

  void validate(const Phantom& ph) const {
    detail::require(sigma >= 0.0, "c_glob.sigma must be non-negative");
    if (peak)
      detail::require(*peak > 1.0, "c_glob.peak must exceed 1");
    if (mode == CGlobMode::shifted)
      detail::require(shift_index < ph.inclusions.size(), "c_glob.shift_index is out of range");
    if (mode == CGlobMode::file)
      detail::require(!path.empty(), "c_glob.path is required in file mode");
  }
};

namespace detail {

// Gaussian average of f over a disc of radius 3 sigma by midpoint
// quadrature with spacing sigma / 4.
template <class F> double gaussian_smooth(const F& f, Point p, double sigma) {
  if (sigma == 0.0)
    return f(p);
  const int n = 12;
  const double hq = sigma / 4.0;
  double sum = 0.0, wsum = 0.0;
  for (int i = -n; i < n; ++i)
    for (int j = -n; j < n; ++j) {
      const double dx = (i + 0.5) * hq, dy = (j + 0.5) * hq;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 9.0 * sigma * sigma)
        continue;
      const double w = std::exp(-r2 / (2.0 * sigma * sigma));
      sum += w * f(Point{p.x + dx, p.y + dy});
      wsum += w;
    }
  return sum / wsum;
}

} // namespace detail

inline NodalField make_c_glob(const Phantom& ph, MeshPtr mesh, const CGlobSpec& spec) {
  ph.validate();
  spec.validate(ph);
  if (spec.mode == CGlobMode::file)
    return load_field(spec.path, std::move(mesh));

  Phantom src = ph;
  if (!spec.with_background)
    src.bump_amplitude = 0.0;
  if (spec.mode == CGlobMode::shifted) {
    auto& s = src.inclusions[spec.shift_index];
    s.center = {s.center.x + spec.offset.x, s.center.y + spec.offset.y};
  }
  const double sigma = spec.mode == CGlobMode::scaled ? 0.0 : spec.sigma;
  NodalField c = NodalField::from_function(mesh, [&](Point p) {
    return ph.omega.contains(p, 1e-12) ? detail::gaussian_smooth(src, p, sigma) : 1.0;
  });
  if (spec.peak) {
    double mx = *std::max_element(c.values.begin(), c.values.end());
    if (mx <= 1.0)
      throw ValidationError("c_glob: phantom has no excess over 1 to rescale");
    const double s = (*spec.peak - 1.0) / (mx - 1.0);
    for (auto& v : c.values)
      v = 1.0 + (v - 1.0) * s;
  }
  return c;
}

} // namespace cipadapt
