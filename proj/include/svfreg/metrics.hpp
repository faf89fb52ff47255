#pragma once

/// Registration quality and deformation regularity measures.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "svfreg/loss.hpp"
#include "svfreg/surface.hpp"
#include "svfreg/transform.hpp"

namespace svfreg {

struct DiceResult {
  /// nullopt when the label is absent from both maps.
  std::map<Label, std::optional<double>> per_label;
  /// Mean over defined labels; nullopt when none is defined.
  std::optional<double> mean;
};

inline DiceResult dice(const SegmentationMap& a, const SegmentationMap& b,
                       const std::vector<Label>& labels) {
  require_same_grid(a, b, "dice");
  DiceResult out;
  double sum = 0.0;
  int defined = 0;
  for (Label l : labels) {
    std::int64_t na = 0, nb = 0, both = 0;
    for (Index i = 0; i < a.size(); ++i) {
      const bool ia = a[i] == l;
      const bool ib = b[i] == l;
      na += ia;
      nb += ib;
      both += ia && ib;
    }
    if (na + nb == 0) {
      out.per_label[l] = std::nullopt;
      continue;
    }
    const double d = 2.0 * double(both) / double(na + nb);
    out.per_label[l] = d;
    sum += d;
    ++defined;
  }
  if (defined > 0) out.mean = sum / defined;
  return out;
}

/// Non-background labels occurring in either map, ascending.
inline std::vector<Label> foreground_labels(const SegmentationMap& a, const SegmentationMap& b) {
  std::set<Label> s;
  for (Label l : a.values())
    if (l != 0) s.insert(l);
  for (Label l : b.values())
    if (l != 0) s.insert(l);
  return {s.begin(), s.end()};
}

/// det(grad(Id + u)) per voxel; central differences, one-sided on the border,
/// zero derivative along singleton axes.
template <class T>
BasicVolume<double> jacobian_determinant(const BasicVectorField<T>& u) {
  const GridSpec& g = u.grid();
  BasicVolume<double> out(g);
  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  for (Index i = 0; i < u.size(); ++i) {
    const Index3 c = g.coords(i);
    const Index v[3] = {c.x, c.y, c.z};
    double j[3][3];  // j[r][a] = d u_r / d x_a + delta
    for (int a = 0; a < 3; ++a) {
      Vec3<double> d;
      const Index n = g.dims[a];
      if (n > 1) {
        const Index lo = v[a] > 0 ? i - stride[a] : i;
        const Index hi = v[a] < n - 1 ? i + stride[a] : i;
        const double h = (v[a] > 0 ? 1.0 : 0.0) + (v[a] < n - 1 ? 1.0 : 0.0);
        d = (vec_cast<double>(u[hi]) - vec_cast<double>(u[lo])) * (1.0 / h);
      }
      for (int r = 0; r < 3; ++r) j[r][a] = d[r] + (r == a ? 1.0 : 0.0);
    }
    out[i] = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
             j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
             j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
  }
  return out;
}

/// Voxels with a non-positive Jacobian determinant.
template <class T>
std::int64_t count_folding(const BasicVectorField<T>& u) {
  const BasicVolume<double> det = jacobian_determinant(u);
  return std::count_if(det.values().begin(), det.values().end(), [](double d) { return d <= 0.0; });
}

struct JacobianStats {
  double mean_determinant = 0.0;
  double folding_fraction = 0.0;
  std::int64_t folding_count = 0;
};

template <class T>
JacobianStats jacobian_stats(const BasicVectorField<T>& u) {
  const BasicVolume<double> det = jacobian_determinant(u);
  JacobianStats s;
  double sum = 0.0;
  for (double d : det.values()) {
    sum += d;
    if (d <= 0.0) ++s.folding_count;
  }
  s.mean_determinant = sum / double(det.size());
  s.folding_fraction = double(s.folding_count) / double(det.size());
  return s;
}

struct DistanceStats {
  double max = 0.0;
  double median = 0.0;
  double mean = 0.0;
};

inline DistanceStats distance_stats(std::vector<double> d) {
  if (d.empty()) throw InvalidArgument("no distances to summarize");
  DistanceStats s;
  double sum = 0.0;
  for (double x : d) sum += x;
  s.mean = sum / double(d.size());
  std::sort(d.begin(), d.end());
  s.max = d.back();
  const std::size_t h = d.size() / 2;
  s.median = d.size() % 2 == 1 ? d[h] : 0.5 * (d[h - 1] + d[h]);
  return s;
}

struct SurfaceDistanceStats {
  DistanceStats fixed_to_moving;   ///< fixed points moved by phi, against the moving surface
  DistanceStats moving_to_fixed;   ///< moving points moved by phi^-1, against the fixed surface
  DistanceStats symmetric;         ///< both directions pooled
};

template <class T>
SurfaceDistanceStats surface_distance_stats(const SurfaceInputs& s, const BasicVectorField<T>& phi,
                                            const BasicVectorField<T>& phi_inv) {
  s.validate(phi.grid());
  require_same_grid(phi, phi_inv, "surface_distance_stats");
  auto collect = [](const SurfacePoints& pts, const DistanceMap& dist, const BasicVectorField<T>& w) {
    std::vector<double> d;
    d.reserve(pts.size());
    for (const Point& x : pts.points) d.push_back(sample_trilinear(dist.distances, x + sample_vector(w, x)));
    return d;
  };
  std::vector<double> a = collect(s.fixed_points, s.moving_distance, phi);
  std::vector<double> b = collect(s.moving_points, s.fixed_distance, phi_inv);
  SurfaceDistanceStats out;
  out.fixed_to_moving = distance_stats(a);
  out.moving_to_fixed = distance_stats(b);
  a.insert(a.end(), b.begin(), b.end());
  out.symmetric = distance_stats(std::move(a));
  return out;
}

struct InverseConsistency {
  double mean = 0.0;
  double max = 0.0;
};

inline constexpr Index kBorderMargin = 2;

/// True when `p` lies at least `margin` voxels inside the grid. The margin is
/// only applied along axes long enough to keep an interior.
inline bool is_interior(const GridSpec& g, const Index3& p, Index margin) {
  const Index v[3] = {p.x, p.y, p.z};
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] <= 2 * margin) continue;
    if (v[a] < margin || v[a] >= g.dims[a] - margin) return false;
  }
  return true;
}

/// Statistics of |(Id + phi) o (Id + phi_inv) - Id| away from a border margin.
template <class T>
InverseConsistency inverse_consistency(const BasicVectorField<T>& phi,
                                       const BasicVectorField<T>& phi_inv,
                                       Index margin = kBorderMargin) {
  const BasicVectorField<T> c = compose(phi, phi_inv);
  const GridSpec& g = c.grid();
  InverseConsistency out;
  double sum = 0.0;
  std::int64_t n = 0;
  for (Index i = 0; i < c.size(); ++i) {
    if (!is_interior(g, g.coords(i), margin)) continue;
    const double e = norm(c[i]);
    sum += e;
    out.max = std::max(out.max, e);
    ++n;
  }
  if (n > 0) out.mean = sum / double(n);
  return out;
}

/// Ordinary least-squares line y = slope x + intercept.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("linear_fit needs >= 2 paired samples");
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("linear_fit needs distinct x values");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
  return f;
}

}  // namespace svfreg
