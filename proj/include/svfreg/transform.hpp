#pragma once

/// Spatial transform primitives: trilinear sampling, image warping and
/// composition of displacement fields, plus the adjoints used for gradients.
///
/// Out-of-bounds sample points are clamped to the grid (edge extension). The
/// derivative of a clamped coordinate is taken as zero.

#include <cmath>
#include <string>

#include "svfreg/grid.hpp"

namespace svfreg {

namespace detail {

inline void require_finite_point(const Point& p) {
  if (!is_finite(p)) throw InvalidArgument("sample point is not finite");
}

/// Value and spatial gradient of the trilinear interpolant of `vol` at `p`.
template <class T>
double sample_with_gradient(const BasicVolume<T>& vol, const Point& p, Point& grad) {
  double acc = 0.0;
  grad = {};
  visit_corners(vol.grid(), p, [&](Index idx, double w, const Point& dw) {
    const double v = static_cast<double>(vol[idx]);
    acc += w * v;
    grad += dw * v;
  });
  return acc;
}

/// Value and Jacobian (row i = gradient of component i) of an interpolated vector field.
template <class T>
Vec3<double> sample_vector_with_jacobian(const BasicVectorField<T>& field, const Point& p,
                                         Vec3<double> (&jac)[3]) {
  Vec3<double> acc;
  jac[0] = jac[1] = jac[2] = {};
  visit_corners(field.grid(), p, [&](Index idx, double w, const Point& dw) {
    const Vec3<double> v = vec_cast<double>(field[idx]);
    acc += v * w;
    jac[0] += dw * v.x;
    jac[1] += dw * v.y;
    jac[2] += dw * v.z;
  });
  return acc;
}

}  // namespace detail

/// Trilinear interpolation of `vol` at a continuous voxel coordinate (clamped).
template <class T>
double sample_trilinear(const BasicVolume<T>& vol, const Point& p) {
  detail::require_finite_point(p);
  double acc = 0.0;
  detail::visit_corners(vol.grid(), p, [&](Index idx, double w, const Point&) {
    acc += w * static_cast<double>(vol[idx]);
  });
  return acc;
}

/// out(p) = m(p + phi(p)).
template <class T, class U>
BasicVolume<T> warp_image(const BasicVolume<T>& m, const BasicVectorField<U>& phi) {
  require_same_grid(m, phi, "warp_image");
  BasicVolume<T> out(m.grid());
  const GridSpec& g = m.grid();
  for (Index i = 0; i < out.size(); ++i) {
    const Point q = detail::lattice_point(g.coords(i)) + vec_cast<double>(phi[i]);
    out[i] = static_cast<T>(sample_trilinear(m, q));
  }
  return out;
}

/// Nearest-neighbour warp for categorical label maps.
template <class L, class U>
Lattice<L> warp_labels(const Lattice<L>& labels, const BasicVectorField<U>& phi) {
  require_same_grid(labels, phi, "warp_labels");
  const GridSpec& g = labels.grid();
  Lattice<L> out(g);
  for (Index i = 0; i < out.size(); ++i) {
    const Point q = detail::lattice_point(g.coords(i)) + vec_cast<double>(phi[i]);
    detail::require_finite_point(q);
    Index3 n;
    n.x = std::clamp<Index>(static_cast<Index>(std::lround(q.x)), 0, g.dims[0] - 1);
    n.y = std::clamp<Index>(static_cast<Index>(std::lround(q.y)), 0, g.dims[1] - 1);
    n.z = std::clamp<Index>(static_cast<Index>(std::lround(q.z)), 0, g.dims[2] - 1);
    out[i] = labels[g.flat(n)];
  }
  return out;
}

/// Displacement of (Id + a) o (Id + b):  c(p) = b(p) + a(p + b(p)).
template <class T>
BasicVectorField<T> compose(const BasicVectorField<T>& a, const BasicVectorField<T>& b) {
  require_same_grid(a, b, "compose");
  const GridSpec& g = a.grid();
  BasicVectorField<T> out(g);
  for (Index i = 0; i < out.size(); ++i) {
    const Vec3<double> bp = vec_cast<double>(b[i]);
    const Point q = detail::lattice_point(g.coords(i)) + bp;
    detail::require_finite_point(q);
    out[i] = vec_cast<T>(bp + sample_vector(a, q));
  }
  return out;
}

/// Accumulates the adjoint of compose(a, b) for upstream gradient `grad_c`
/// into `grad_a` and `grad_b`. Passing the same object for both is allowed.
template <class T>
void compose_adjoint(const BasicVectorField<T>& a, const BasicVectorField<T>& b,
                     const BasicVectorField<double>& grad_c, BasicVectorField<double>& grad_a,
                     BasicVectorField<double>& grad_b) {
  require_same_grid(a, b, "compose_adjoint");
  require_same_grid(a, grad_c, "compose_adjoint");
  const GridSpec& g = a.grid();
  for (Index i = 0; i < g.voxel_count(); ++i) {
    const Vec3<double> gc = grad_c[i];
    const Point q = detail::lattice_point(g.coords(i)) + vec_cast<double>(b[i]);
    Vec3<double> jt;  // J_a(q)^T gc
    detail::visit_corners(g, q, [&](Index idx, double w, const Point& dw) {
      const Vec3<double> av = vec_cast<double>(a[idx]);
      jt += dw * dot(av, gc);
      grad_a[idx] += gc * w;
    });
    grad_b[i] += gc + jt;
  }
}

/// Gradient of  sum_p upstream(p) * warp_image(m, phi)(p)  with respect to phi.
template <class T, class U>
BasicVectorField<double> grad_warp_image(const BasicVolume<T>& m, const BasicVectorField<U>& phi,
                                         const BasicVolume<double>& upstream) {
  require_same_grid(m, phi, "grad_warp_image");
  require_same_grid(m, upstream, "grad_warp_image");
  const GridSpec& g = m.grid();
  BasicVectorField<double> out(g);
  for (Index i = 0; i < out.size(); ++i) {
    const double up = upstream[i];
    if (up == 0.0) continue;
    const Point q = detail::lattice_point(g.coords(i)) + vec_cast<double>(phi[i]);
    Point grad;
    detail::sample_with_gradient(m, q, grad);
    out[i] = grad * up;
  }
  return out;
}

}  // namespace svfreg
