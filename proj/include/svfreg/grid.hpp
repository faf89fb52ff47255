#pragma once

/// Lattice geometry and the dense containers every other module works on.
///
/// Voxels are addressed as (x, y, z) with x varying fastest:
///   flat = x + dims.x * (y + dims.y * z)
/// Vector fields hold displacements or velocities in voxel units of their own
/// grid; physical spacing only enters at resampling and metric boundaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svfreg/errors.hpp"

namespace svfreg {

using Index = std::int64_t;

template <class T>
struct Vec3 {
  T x{};
  T y{};
  T z{};

  constexpr T& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr const T& operator[](int axis) const {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(T s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, T s) { return a *= s; }
  friend constexpr Vec3 operator*(T s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

template <class To, class From>
constexpr Vec3<To> vec_cast(const Vec3<From>& v) {
  return {static_cast<To>(v.x), static_cast<To>(v.y), static_cast<To>(v.z)};
}

template <class T>
double dot(const Vec3<T>& a, const Vec3<T>& b) {
  return double(a.x) * double(b.x) + double(a.y) * double(b.y) + double(a.z) * double(b.z);
}

template <class T>
double norm(const Vec3<T>& v) {
  return std::sqrt(dot(v, v));
}

template <class T>
bool is_finite(const Vec3<T>& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

using Point = Vec3<double>;

struct Index3 {
  Index x = 0;
  Index y = 0;
  Index z = 0;
  friend constexpr bool operator==(const Index3&, const Index3&) = default;
};

/// Rectilinear lattice: voxel counts and physical spacing per axis.
///
/// Axes of extent 1 are allowed and behave as degenerate (pseudo-2D slabs);
/// sampling along such an axis is constant.
struct GridSpec {
  std::array<Index, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  GridSpec() = default;
  GridSpec(std::array<Index, 3> d, std::array<double, 3> s = {1.0, 1.0, 1.0})
      : dims(d), spacing(s) {
    validate();
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw InvalidArgument("grid dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw InvalidArgument("grid spacing must be positive and finite");
    }
  }

  Index voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  Index flat(Index x, Index y, Index z) const { return x + dims[0] * (y + dims[1] * z); }
  Index flat(const Index3& c) const { return flat(c.x, c.y, c.z); }

  Index3 coords(Index i) const {
    const Index x = i % dims[0];
    const Index rest = i / dims[0];
    return {x, rest % dims[1], rest / dims[1]};
  }

  bool contains(const Index3& c) const {
    return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < dims[0] && c.y < dims[1] && c.z < dims[2];
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline std::string describe(const GridSpec& g) {
  return std::to_string(g.dims[0]) + "x" + std::to_string(g.dims[1]) + "x" +
         std::to_string(g.dims[2]);
}

/// Dense value-per-voxel container on a GridSpec.
template <class V>
class Lattice {
 public:
  using value_type = V;

  Lattice() = default;
  explicit Lattice(const GridSpec& grid, V fill = V{})
      : grid_(grid), values_(static_cast<std::size_t>(grid.voxel_count()), fill) {
    grid_.validate();
  }
  Lattice(const GridSpec& grid, std::vector<V> values) : grid_(grid), values_(std::move(values)) {
    grid_.validate();
    if (static_cast<Index>(values_.size()) != grid_.voxel_count())
      throw InvalidArgument("lattice value count " + std::to_string(values_.size()) +
                            " does not match grid " + describe(grid_));
  }

  const GridSpec& grid() const { return grid_; }
  Index size() const { return static_cast<Index>(values_.size()); }

  V& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
  const V& operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }

  V& at(Index x, Index y, Index z) { return (*this)[grid_.flat(x, y, z)]; }
  const V& at(Index x, Index y, Index z) const { return (*this)[grid_.flat(x, y, z)]; }

  std::span<V> values() & { return values_; }
  std::span<const V> values() const& { return values_; }
  void values() && = delete;  // a span into a temporary would dangle

  friend bool operator==(const Lattice&, const Lattice&) = default;

 private:
  GridSpec grid_;
  std::vector<V> values_;
};

template <class T>
using BasicVolume = Lattice<T>;
template <class T>
using BasicVectorField = Lattice<Vec3<T>>;

using Volume = BasicVolume<float>;
using VectorField = BasicVectorField<float>;

using Label = std::uint16_t;
using SegmentationMap = Lattice<Label>;
using BinaryMask = Lattice<std::uint8_t>;

template <class A, class B>
void require_same_grid(const Lattice<A>& a, const Lattice<B>& b, const char* what) {
  if (!(a.grid() == b.grid()))
    throw GridMismatch(std::string(what) + ": grid " + describe(a.grid()) + " vs " +
                       describe(b.grid()));
}

template <class T>
bool all_finite(const BasicVolume<T>& v) {
  return std::all_of(v.values().begin(), v.values().end(),
                     [](T x) { return std::isfinite(x); });
}

template <class T>
bool all_finite(const BasicVectorField<T>& v) {
  return std::all_of(v.values().begin(), v.values().end(),
                     [](const Vec3<T>& x) { return is_finite(x); });
}

template <class L>
void require_finite(const L& field, const char* what) {
  if (!all_finite(field)) throw InvalidArgument(std::string(what) + " contains non-finite values");
}

template <class To, class From>
Lattice<Vec3<To>> field_cast(const Lattice<Vec3<From>>& f) {
  Lattice<Vec3<To>> out(f.grid());
  for (Index i = 0; i < f.size(); ++i) out[i] = vec_cast<To>(f[i]);
  return out;
}

template <class To, class From>
Lattice<To> volume_cast(const Lattice<From>& f) {
  Lattice<To> out(f.grid());
  for (Index i = 0; i < f.size(); ++i) out[i] = static_cast<To>(f[i]);
  return out;
}

/// Zero displacement, i.e. the position map p -> p.
template <class T = float>
BasicVectorField<T> identity_map(const GridSpec& grid) {
  return BasicVectorField<T>(grid);
}

namespace detail {

/// Linear-interpolation cell along one axis with clamp-to-edge.
/// `inside` is false when the coordinate was clamped; the derivative there is zero.
struct AxisCell {
  Index i0 = 0;
  Index i1 = 0;
  double t = 0.0;
  bool inside = false;
};

inline AxisCell axis_cell(double x, Index n) {
  if (n == 1) return {0, 0, 0.0, false};
  const double hi = static_cast<double>(n - 1);
  const bool inside = x >= 0.0 && x <= hi;
  const double xc = std::clamp(x, 0.0, hi);
  const Index i0 = std::min<Index>(static_cast<Index>(std::floor(xc)), n - 2);
  return {i0, i0 + 1, xc - static_cast<double>(i0), inside};
}

/// Visits the 8 trilinear corners of `p`. The callback receives the flat index,
/// the interpolation weight and the derivative of that weight w.r.t. p.
template <class F>
inline void visit_corners(const GridSpec& g, const Point& p, F&& f) {
  const AxisCell cx = axis_cell(p.x, g.dims[0]);
  const AxisCell cy = axis_cell(p.y, g.dims[1]);
  const AxisCell cz = axis_cell(p.z, g.dims[2]);
  const double wx[2] = {1.0 - cx.t, cx.t};
  const double wy[2] = {1.0 - cy.t, cy.t};
  const double wz[2] = {1.0 - cz.t, cz.t};
  const double dx[2] = {cx.inside ? -1.0 : 0.0, cx.inside ? 1.0 : 0.0};
  const double dy[2] = {cy.inside ? -1.0 : 0.0, cy.inside ? 1.0 : 0.0};
  const double dz[2] = {cz.inside ? -1.0 : 0.0, cz.inside ? 1.0 : 0.0};
  const Index xs[2] = {cx.i0, cx.i1};
  const Index ys[2] = {cy.i0, cy.i1};
  const Index zs[2] = {cz.i0, cz.i1};
  for (int c = 0; c < 2; ++c) {
    for (int b = 0; b < 2; ++b) {
      for (int a = 0; a < 2; ++a) {
        const Index idx = g.flat(xs[a], ys[b], zs[c]);
        const double w = wx[a] * wy[b] * wz[c];
        const Point dw{dx[a] * wy[b] * wz[c], wx[a] * dy[b] * wz[c], wx[a] * wy[b] * dz[c]};
        f(idx, w, dw);
      }
    }
  }
}

inline Point lattice_point(const Index3& c) {
  return {static_cast<double>(c.x), static_cast<double>(c.y), static_cast<double>(c.z)};
}

}  // namespace detail

/// Trilinear sample of a vector field at a continuous voxel coordinate.
template <class T>
Vec3<double> sample_vector(const BasicVectorField<T>& field, const Point& p) {
  Vec3<double> acc;
  detail::visit_corners(field.grid(), p, [&](Index idx, double w, const Point&) {
    acc += vec_cast<double>(field[idx]) * w;
  });
  return acc;
}

/// Resamples `field` onto `target` by trilinear interpolation.
///
/// Both grids share a physical origin at voxel (0,0,0). Vectors are converted
/// between the two voxel units so the physical displacement is preserved.
template <class T>
BasicVectorField<T> resample_field(const BasicVectorField<T>& field, const GridSpec& target) {
  target.validate();
  require_finite(field, "resample_field input");
  if (field.grid() == target) return field;

  const GridSpec& src = field.grid();
  std::array<double, 3> coord_scale{};
  std::array<double, 3> vec_scale{};
  for (int a = 0; a < 3; ++a) {
    coord_scale[a] = target.spacing[a] / src.spacing[a];
    vec_scale[a] = src.spacing[a] / target.spacing[a];
  }
  BasicVectorField<T> out(target);
  for (Index i = 0; i < out.size(); ++i) {
    const Index3 c = target.coords(i);
    const Point p{c.x * coord_scale[0], c.y * coord_scale[1], c.z * coord_scale[2]};
    const Vec3<double> v = sample_vector(field, p);
    out[i] = {static_cast<T>(v.x * vec_scale[0]), static_cast<T>(v.y * vec_scale[1]),
              static_cast<T>(v.z * vec_scale[2])};
  }
  return out;
}

/// Adjoint of resample_field: maps a gradient on the target grid back to `source`.
template <class T>
BasicVectorField<double> resample_field_adjoint(const BasicVectorField<T>& upstream,
                                                const GridSpec& source) {
  const GridSpec& target = upstream.grid();
  BasicVectorField<double> out(source);
  if (source == target) {
    for (Index i = 0; i < out.size(); ++i) out[i] = vec_cast<double>(upstream[i]);
    return out;
  }
  std::array<double, 3> coord_scale{};
  std::array<double, 3> vec_scale{};
  for (int a = 0; a < 3; ++a) {
    coord_scale[a] = target.spacing[a] / source.spacing[a];
    vec_scale[a] = source.spacing[a] / target.spacing[a];
  }
  for (Index i = 0; i < upstream.size(); ++i) {
    const Index3 c = target.coords(i);
    const Point p{c.x * coord_scale[0], c.y * coord_scale[1], c.z * coord_scale[2]};
    const Vec3<double> g{upstream[i].x * vec_scale[0], upstream[i].y * vec_scale[1],
                         upstream[i].z * vec_scale[2]};
    detail::visit_corners(source, p, [&](Index idx, double w, const Point&) { out[idx] += g * w; });
  }
  return out;
}

/// Grid of a velocity field stored at 1/`factor` of the image resolution.
inline GridSpec coarsened_grid(const GridSpec& image, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be >= 1");
  if (factor == 1) return image;
  GridSpec g = image;
  for (int a = 0; a < 3; ++a) {
    if (image.dims[a] == 1) continue;
    g.dims[a] = std::max<Index>(2, (image.dims[a] + factor - 1) / factor);
    g.spacing[a] = image.spacing[a] * factor;
  }
  return g;
}

}  // namespace svfreg
