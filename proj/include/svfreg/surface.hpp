#pragma once

/// Anatomical surfaces as point sets: boundary extraction from label maps,
/// exact Euclidean distance transforms and surface point sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "svfreg/transform.hpp"

namespace svfreg {

/// N continuous voxel coordinates on a structure boundary.
struct SurfacePoints {
  std::vector<Point> points;
  Label source_label = 0;

  std::size_t size() const { return points.size(); }

  void validate(const GridSpec& g) const {
    if (points.empty()) throw InvalidArgument("surface point set is empty");
    for (const Point& p : points) {
      if (!is_finite(p)) throw InvalidArgument("surface point is not finite");
      for (int a = 0; a < 3; ++a)
        if (p[a] < 0.0 || p[a] > double(g.dims[a] - 1))
          throw InvalidArgument("surface point outside the grid");
    }
  }
};

/// Per-voxel Euclidean distance (voxel units) to the nearest set voxel of a mask.
struct DistanceMap {
  Lattice<double> distances;

  const GridSpec& grid() const { return distances.grid(); }
  double operator[](Index i) const { return distances[i]; }
};

inline BinaryMask label_mask(const SegmentationMap& seg, Label label) {
  BinaryMask out(seg.grid());
  for (Index i = 0; i < seg.size(); ++i) out[i] = seg[i] == label ? 1 : 0;
  return out;
}

/// Voxels of `label` with a 6-neighbour of another label or lying on the grid
/// border. Singleton axes (pseudo-2D slabs) do not count as a border.
inline BinaryMask boundary_mask(const SegmentationMap& seg, Label label) {
  const GridSpec& g = seg.grid();
  BinaryMask out(g);
  bool present = false;
  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  for (Index i = 0; i < seg.size(); ++i) {
    if (seg[i] != label) continue;
    present = true;
    const Index3 c = g.coords(i);
    const Index v[3] = {c.x, c.y, c.z};
    bool edge = false;
    for (int a = 0; a < 3 && !edge; ++a) {
      if (g.dims[a] == 1) continue;
      if (v[a] == 0 || v[a] == g.dims[a] - 1) {
        edge = true;
        break;
      }
      if (seg[i - stride[a]] != label || seg[i + stride[a]] != label) edge = true;
    }
    out[i] = edge ? 1 : 0;
  }
  if (!present) throw InvalidArgument("label " + std::to_string(label) + " absent from map");
  return out;
}

namespace detail {

/// One pass of the lower-envelope squared distance transform along a line.
/// f holds squared distances (infinity = no site). Writes into d.
inline void squared_edt_line(const std::vector<double>& f, std::vector<double>& d,
                             std::vector<Index>& v, std::vector<double>& z) {
  const auto n = static_cast<Index>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    const double fq = f[static_cast<std::size_t>(q)];
    if (fq == inf) continue;
    double s = -inf;
    while (k >= 0) {
      const Index p = v[static_cast<std::size_t>(k)];
      s = ((fq + double(q * q)) - (f[static_cast<std::size_t>(p)] + double(p * p))) /
          (2.0 * double(q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -inf : s;
    z[static_cast<std::size_t>(k + 1)] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j + 1)] < double(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    d[static_cast<std::size_t>(q)] = double((q - p) * (q - p)) + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace detail

/// Exact Euclidean distance transform: three separable lower-envelope passes
/// on squared distances, then a square root.
inline DistanceMap distance_transform(const BinaryMask& mask) {
  const GridSpec& g = mask.grid();
  constexpr double inf = std::numeric_limits<double>::infinity();
  Lattice<double> sq(g);
  bool any = false;
  for (Index i = 0; i < mask.size(); ++i) {
    sq[i] = mask[i] ? 0.0 : inf;
    any = any || mask[i];
  }
  if (!any) throw InvalidArgument("distance_transform: mask is empty");

  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  for (int a = 0; a < 3; ++a) {
    const Index n = g.dims[a];
    if (n == 1) continue;
    std::vector<double> f(static_cast<std::size_t>(n)), d(f.size()), z(f.size() + 1);
    std::vector<Index> v(f.size());
    for (Index i = 0; i < g.voxel_count(); ++i) {
      const Index3 c = g.coords(i);
      const Index pos = a == 0 ? c.x : (a == 1 ? c.y : c.z);
      if (pos != 0) continue;  // visit each line once, from its first voxel
      for (Index q = 0; q < n; ++q) f[static_cast<std::size_t>(q)] = sq[i + q * stride[a]];
      detail::squared_edt_line(f, d, v, z);
      for (Index q = 0; q < n; ++q) sq[i + q * stride[a]] = d[static_cast<std::size_t>(q)];
    }
  }
  for (double& x : sq.values()) x = std::sqrt(x);
  return {std::move(sq)};
}

/// min(100000, 20 x boundary voxel count).
inline std::size_t default_surface_sample_count(const BinaryMask& mask) {
  const auto count = static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [](auto m) { return m != 0; }));
  return std::min<std::size_t>(100000, 20 * count);
}

/// Uniform draws (with replacement) among the set voxel centres of `mask`.
inline SurfacePoints sample_surface_points(const BinaryMask& mask, std::size_t n,
                                           std::uint64_t seed, Label label = 0) {
  if (n < 1) throw InvalidArgument("sample count must be >= 1");
  std::vector<Index> sites;
  for (Index i = 0; i < mask.size(); ++i)
    if (mask[i]) sites.push_back(i);
  if (sites.empty()) throw InvalidArgument("sample_surface_points: mask is empty");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sites.size() - 1);
  SurfacePoints out;
  out.source_label = label;
  out.points.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    out.points.push_back(detail::lattice_point(mask.grid().coords(sites[pick(rng)])));
  return out;
}

/// p <- p + phi(p), phi sampled trilinearly with clamping.
template <class T>
SurfacePoints warp_points(const SurfacePoints& pts, const BasicVectorField<T>& phi) {
  SurfacePoints out;
  out.source_label = pts.source_label;
  out.points.reserve(pts.size());
  for (const Point& p : pts.points) {
    detail::require_finite_point(p);
    out.points.push_back(p + sample_vector(phi, p));
  }
  return out;
}

}  // namespace svfreg
