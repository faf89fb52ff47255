#pragma once

/// Synthetic data: disks, C shapes and smooth random velocity fields.
///
/// Shapes are balls (3D grids) or disks (grids with a singleton z axis) centred
/// on the grid. Intensities are a Gaussian-CDF ramp of width `ramp_sigma`
/// across the boundary, so they lie in [0, 1] and exceed 0.5 exactly on the
/// labelled voxels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>

#include "svfreg/prob_model.hpp"

namespace svfreg {

struct SynthImage {
  Volume image;
  SegmentationMap labels;
};

struct CShapeParams {
  /// Fractions of the image size; sampled from the default ranges when unset.
  std::optional<double> outer_fraction;
  std::optional<double> inner_fraction;
  double opening_angle_deg = 60.0;
  double ramp_sigma = 1.0;
  Label label = 1;
};

struct CShape : SynthImage {
  double outer_radius = 0.0;
  double inner_radius = 0.0;
  double opening_angle_deg = 0.0;
};

inline constexpr double kCShapeOuterMin = 1.0 / 3.5;
inline constexpr double kCShapeOuterMax = 1.0 / 2.5;
inline constexpr double kCShapeInnerMin = 1.0 / 6.5;
inline constexpr double kCShapeInnerMax = 1.0 / 5.5;

namespace detail {

/// Size used for radius fractions: the smallest non-singleton extent.
inline double image_size(const GridSpec& g) {
  Index s = 0;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] > 1) s = s == 0 ? g.dims[a] : std::min(s, g.dims[a]);
  if (s == 0) throw InvalidArgument("grid has no extent");
  return double(s);
}

inline Point grid_center(const GridSpec& g) {
  return {0.5 * double(g.dims[0] - 1), 0.5 * double(g.dims[1] - 1), 0.5 * double(g.dims[2] - 1)};
}

/// Gaussian-CDF ramp of a signed inside-distance.
inline double ramp(double inside_distance, double sigma) {
  return 0.5 * std::erfc(-inside_distance / (std::numbers::sqrt2 * sigma));
}

template <class F>
SynthImage rasterize(const GridSpec& g, double ramp_sigma, Label label, F&& inside_distance) {
  if (!(ramp_sigma > 0.0)) throw InvalidArgument("ramp sigma must be positive");
  SynthImage out{Volume(g), SegmentationMap(g)};
  for (Index i = 0; i < g.voxel_count(); ++i) {
    const double s = inside_distance(lattice_point(g.coords(i)));
    out.image[i] = static_cast<float>(ramp(s, ramp_sigma));
    out.labels[i] = s > 0.0 ? label : Label{0};
  }
  return out;
}

}  // namespace detail

/// Ball (or disk on a pseudo-2D grid) of radius radius_fraction x image size.
inline SynthImage make_disk(const GridSpec& grid, double radius_fraction,
                            std::optional<Point> center = std::nullopt, double ramp_sigma = 1.0,
                            Label label = 1) {
  grid.validate();
  if (!(radius_fraction > 0.0 && radius_fraction < 0.5))
    throw InvalidArgument("disk radius fraction must lie in (0, 0.5)");
  const double r = radius_fraction * detail::image_size(grid);
  const Point c = center.value_or(detail::grid_center(grid));
  return detail::rasterize(grid, ramp_sigma, label, [&](const Point& p) { return r - norm(p - c); });
}

/// Spherical shell between the inner and outer radius with a wedge of
/// `opening_angle_deg` (azimuth around z, centred on +x) removed.
inline CShape make_cshape(const GridSpec& grid, const CShapeParams& params, std::uint64_t seed) {
  grid.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> outer_dist(kCShapeOuterMin, kCShapeOuterMax);
  std::uniform_real_distribution<double> inner_dist(kCShapeInnerMin, kCShapeInnerMax);
  const double outer_frac = params.outer_fraction.value_or(outer_dist(rng));
  const double inner_frac = params.inner_fraction.value_or(inner_dist(rng));
  if (!(outer_frac > 0.0 && outer_frac < 0.5) || !(inner_frac > 0.0))
    throw InvalidArgument("C-shape radius fractions must lie in (0, 0.5)");
  if (!(params.opening_angle_deg >= 0.0 && params.opening_angle_deg < 360.0))
    throw InvalidArgument("opening angle must lie in [0, 360)");

  const double size = detail::image_size(grid);
  const double outer = outer_frac * size;
  const double inner = inner_frac * size;
  if (outer - inner < 1.0) throw InvalidArgument("C-shape outer radius must exceed inner by >= 1 voxel");

  const Point c = detail::grid_center(grid);
  const double half = 0.5 * params.opening_angle_deg * std::numbers::pi / 180.0;
  auto inside = [&](const Point& p) {
    const Point d = p - c;
    const double r = norm(d);
    double s = std::min(outer - r, r - inner);
    if (half > 0.0) {
      const double rho = std::hypot(d.x, d.y);
      const double theta = std::abs(std::atan2(d.y, d.x));
      const double off = theta - half;  // > 0 outside the wedge
      double wedge = 0.0;
      if (off >= 0.0)
        wedge = off < 0.5 * std::numbers::pi ? rho * std::sin(off) : rho;
      else
        wedge = -rho * std::sin(std::min(-off, 0.5 * std::numbers::pi));
      s = std::min(s, wedge);
    }
    return s;
  };
  CShape out;
  static_cast<SynthImage&>(out) = detail::rasterize(grid, params.ramp_sigma, params.label, inside);
  out.outer_radius = outer;
  out.inner_radius = inner;
  out.opening_angle_deg = params.opening_angle_deg;
  return out;
}

/// Smoothed white noise rescaled so that max |v| = max_magnitude.
template <class T = float>
BasicVectorField<T> random_smooth_velocity(const GridSpec& grid, double max_magnitude,
                                           double smoothness_sigma, std::uint64_t seed) {
  if (!(max_magnitude >= 0.0)) throw InvalidArgument("max magnitude must be non-negative");
  std::mt19937_64 rng(seed);
  BasicVectorField<double> noise = standard_normal_field<double>(grid, rng);
  BasicVectorField<double> smooth = gaussian_convolve(noise, smoothness_sigma);
  double peak = 0.0;
  for (const auto& v : smooth.values()) peak = std::max(peak, norm(v));
  BasicVectorField<T> out(grid);
  if (max_magnitude == 0.0 || peak == 0.0) return out;
  const double s = max_magnitude / peak;
  for (Index i = 0; i < out.size(); ++i) out[i] = vec_cast<T>(smooth[i] * s);
  return out;
}

}  // namespace svfreg
