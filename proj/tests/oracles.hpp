#pragma once

// Reference implementations used only by the tests. They deliberately avoid
// the library's interpolation helpers so that each check has an independent
// second route to the expected value.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "svfreg/grid.hpp"
#include "printers.hpp"
#include "svfreg/surface.hpp"

namespace svfreg::oracle {

/// Plain trilinear interpolation with clamp-to-edge, written from the formula.
template <class T>
double trilinear(const Lattice<T>& vol, double x, double y, double z) {
  const GridSpec& g = vol.grid();
  auto axis = [](double c, Index n, Index& i0, Index& i1, double& t) {
    c = std::min(std::max(c, 0.0), double(n - 1));
    i0 = static_cast<Index>(std::floor(c));
    if (i0 > n - 2) i0 = std::max<Index>(n - 2, 0);
    i1 = std::min<Index>(i0 + 1, n - 1);
    t = c - double(i0);
  };
  Index x0, x1, y0, y1, z0, z1;
  double tx, ty, tz;
  axis(x, g.dims[0], x0, x1, tx);
  axis(y, g.dims[1], y0, y1, ty);
  axis(z, g.dims[2], z0, z1, tz);
  auto v = [&](Index a, Index b, Index c) { return double(vol.at(a, b, c)); };
  const double c00 = v(x0, y0, z0) * (1 - tx) + v(x1, y0, z0) * tx;
  const double c10 = v(x0, y1, z0) * (1 - tx) + v(x1, y1, z0) * tx;
  const double c01 = v(x0, y0, z1) * (1 - tx) + v(x1, y0, z1) * tx;
  const double c11 = v(x0, y1, z1) * (1 - tx) + v(x1, y1, z1) * tx;
  const double c0 = c00 * (1 - ty) + c10 * ty;
  const double c1 = c01 * (1 - ty) + c11 * ty;
  return c0 * (1 - tz) + c1 * tz;
}

template <class T>
Lattice<double> component(const Lattice<Vec3<T>>& f, int c) {
  Lattice<double> out(f.grid());
  for (Index i = 0; i < f.size(); ++i) out[i] = double(f[i][c]);
  return out;
}

/// Position map (Id + a) o (Id + b) evaluated pointwise at an arbitrary point.
template <class T>
Vec3<double> composed_position(const Lattice<Vec3<T>>& a, const Lattice<Vec3<T>>& b,
                               const Vec3<double>& p) {
  const Lattice<double> ax = component(a, 0), ay = component(a, 1), az = component(a, 2);
  const Lattice<double> bx = component(b, 0), by = component(b, 1), bz = component(b, 2);
  const Vec3<double> q{p.x + trilinear(bx, p.x, p.y, p.z), p.y + trilinear(by, p.x, p.y, p.z),
                       p.z + trilinear(bz, p.x, p.y, p.z)};
  return {q.x + trilinear(ax, q.x, q.y, q.z), q.y + trilinear(ay, q.x, q.y, q.z),
          q.z + trilinear(az, q.x, q.y, q.z)};
}

/// Exact squared Euclidean distance to the nearest set voxel, by exhaustive search.
inline Lattice<double> brute_force_distance(const BinaryMask& mask) {
  const GridSpec& g = mask.grid();
  std::vector<Index3> sites;
  for (Index i = 0; i < mask.size(); ++i)
    if (mask[i]) sites.push_back(g.coords(i));
  Lattice<double> out(g);
  for (Index i = 0; i < mask.size(); ++i) {
    const Index3 p = g.coords(i);
    double best = std::numeric_limits<double>::infinity();
    for (const Index3& s : sites) {
      const double dx = double(p.x - s.x), dy = double(p.y - s.y), dz = double(p.z - s.z);
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

/// Dense graph Laplacian D - A of the 6-neighbour grid graph (row-major n x n).
inline std::vector<double> dense_laplacian(const GridSpec& g) {
  const Index n = g.voxel_count();
  std::vector<double> L(static_cast<std::size_t>(n * n), 0.0);
  for (Index i = 0; i < n; ++i) {
    const Index3 c = g.coords(i);
    const Index3 nb[6] = {{c.x - 1, c.y, c.z}, {c.x + 1, c.y, c.z}, {c.x, c.y - 1, c.z},
                          {c.x, c.y + 1, c.z}, {c.x, c.y, c.z - 1}, {c.x, c.y, c.z + 1}};
    for (const Index3& q : nb) {
      if (!g.contains(q)) continue;
      const Index j = g.flat(q);
      L[static_cast<std::size_t>(i * n + j)] -= 1.0;
      L[static_cast<std::size_t>(i * n + i)] += 1.0;
    }
  }
  return L;
}

/// Central finite difference of a scalar function of one parameter.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace svfreg::oracle
