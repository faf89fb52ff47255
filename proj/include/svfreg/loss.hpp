#pragma once

/// Negative variational lower bound, with additive constants dropped:
///
///   data    = 1/(2 sI^2 K) sum_k ||f - m o phi_k||^2
///   kl      = 1/2 [ sum_{p,c} (lambda deg(p) var(p,c) - log var(p,c)) + mu^T lambda L mu ]
///   surface = 1/(2 sS^2 K) sum_k 1/2 [ mean_n d_m(s_f[n] + phi_k(s_f[n]))^2
///                                      + mean_n d_f(s_m[n] + phi_k^-1(s_m[n]))^2 ]
///
/// Dropped constants: log|Lambda|, the Gaussian normalizers and the -3d of the
/// KL. Losses are comparable across runs of this library only.
///
/// Surfaces follow the same pull-back convention as images: a fixed-space point
/// x corresponds to moving-space point x + phi(x), so fixed points travel by phi
/// and are measured against the moving surface, and moving points travel by
/// phi^-1 and are measured against the fixed surface.

#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "svfreg/prob_model.hpp"
#include "svfreg/surface.hpp"
#include "svfreg/transform.hpp"

namespace svfreg {

struct LossBreakdown {
  double data = 0.0;
  double kl = 0.0;
  double surface = 0.0;
  double total = 0.0;
};

/// Squared distances follow the Gaussian surface likelihood; plain distances
/// are the alternative reading of the bidirectional distance approximation.
enum class SurfaceDistance { squared, unsquared };

inline std::string_view to_string(SurfaceDistance d) {
  return d == SurfaceDistance::squared ? "squared" : "unsquared";
}

struct SurfaceInputs {
  SurfacePoints fixed_points;
  SurfacePoints moving_points;
  DistanceMap fixed_distance;
  DistanceMap moving_distance;
  SurfaceDistance distance = SurfaceDistance::squared;

  void validate(const GridSpec& image_grid) const {
    if (fixed_points.points.empty() || moving_points.points.empty())
      throw InvalidArgument("surface term needs both fixed and moving point sets");
    if (fixed_distance.distances.size() == 0 || moving_distance.distances.size() == 0)
      throw InvalidArgument("surface term needs both distance maps");
    if (!(fixed_distance.grid() == image_grid) || !(moving_distance.grid() == image_grid))
      throw GridMismatch("surface distance maps must share the image grid");
    fixed_points.validate(image_grid);
    moving_points.validate(image_grid);
  }
};

template <class T>
double data_term(const BasicVolume<T>& f, const BasicVolume<T>& m,
                 std::span<const BasicVectorField<T>> phis, double sigma_image_sq) {
  if (phis.empty()) throw InvalidArgument("data_term needs at least one deformation sample");
  if (!(sigma_image_sq > 0.0)) throw InvalidArgument("sigma_image_sq must be positive");
  require_same_grid(f, m, "data_term");
  double acc = 0.0;
  for (const auto& phi : phis) {
    const BasicVolume<T> w = warp_image(m, phi);
    for (Index i = 0; i < f.size(); ++i) {
      const double r = double(f[i]) - double(w[i]);
      acc += r * r;
    }
  }
  return acc / (2.0 * sigma_image_sq * double(phis.size()));
}

template <class T>
double kl_term(const PosteriorParams<T>& post, const PriorParams& prior) {
  require_same_grid(post.mu, post.log_var, "kl_term");
  prior.validate();
  const GridSpec& g = post.mu.grid();
  double trace = 0.0;
  for (Index i = 0; i < post.log_var.size(); ++i) {
    const double ld = prior.lambda * neighbor_degree(g, g.coords(i));
    for (int c = 0; c < 3; ++c) {
      const double lv = double(post.log_var[i][c]);
      trace += ld * std::exp(lv) - lv;
    }
  }
  return 0.5 * (trace + prior_energy(prior, post.mu));
}

/// d/dmu and d/dlog_var of kl_term.
template <class T>
void kl_term_gradient(const PosteriorParams<T>& post, const PriorParams& prior,
                      BasicVectorField<double>& grad_mu, BasicVectorField<double>& grad_log_var) {
  const GridSpec& g = post.mu.grid();
  const BasicVectorField<double> lap = laplacian_apply(prior, field_cast<double>(post.mu));
  for (Index i = 0; i < post.mu.size(); ++i) {
    grad_mu[i] += lap[i];
    const double ld = prior.lambda * neighbor_degree(g, g.coords(i));
    for (int c = 0; c < 3; ++c)
      grad_log_var[i][c] += 0.5 * (ld * std::exp(double(post.log_var[i][c])) - 1.0);
  }
}

namespace detail {

inline double distance_power(double d, SurfaceDistance mode) {
  return mode == SurfaceDistance::squared ? d * d : d;
}

/// Mean over points of d(x + phi(x))^k; optionally scatters `scale` times its
/// gradient into grad_phi.
template <class T>
double directional_surface_cost(const SurfacePoints& pts, const DistanceMap& dist,
                                const BasicVectorField<T>& phi, SurfaceDistance mode,
                                BasicVectorField<double>* grad_phi, double scale) {
  require_same_grid(dist.distances, phi, "surface_term");
  double acc = 0.0;
  const double inv_n = 1.0 / double(pts.size());
  for (const Point& x : pts.points) {
    const Point y = x + sample_vector(phi, x);
    require_finite_point(y);
    Point grad;
    const double d = sample_with_gradient(dist.distances, y, grad);
    acc += distance_power(d, mode);
    if (grad_phi != nullptr) {
      const double dcost = mode == SurfaceDistance::squared ? 2.0 * d : 1.0;
      const Vec3<double> g = grad * (dcost * scale * inv_n);
      visit_corners(phi.grid(), x, [&](Index idx, double w, const Point&) { (*grad_phi)[idx] += g * w; });
    }
  }
  return acc * inv_n;
}

}  // namespace detail

/// Surface term for a single deformation sample (K = 1).
template <class T>
double surface_term(const SurfaceInputs& s, const BasicVectorField<T>& phi,
                    const BasicVectorField<T>& phi_inv, double sigma_surface_sq) {
  if (!(sigma_surface_sq > 0.0)) throw InvalidArgument("sigma_surface_sq must be positive");
  s.validate(phi.grid());
  require_same_grid(phi, phi_inv, "surface_term");
  const double fwd =
      detail::directional_surface_cost(s.fixed_points, s.moving_distance, phi, s.distance, nullptr, 0.0);
  const double bwd = detail::directional_surface_cost(s.moving_points, s.fixed_distance, phi_inv,
                                                      s.distance, nullptr, 0.0);
  return 0.5 * (fwd + bwd) / (2.0 * sigma_surface_sq);
}

/// Accumulates `weight` x d(surface_term)/d(phi, phi_inv).
template <class T>
double surface_term_gradient(const SurfaceInputs& s, const BasicVectorField<T>& phi,
                             const BasicVectorField<T>& phi_inv, double sigma_surface_sq,
                             double weight, BasicVectorField<double>& grad_phi,
                             BasicVectorField<double>& grad_phi_inv) {
  const double c = weight * 0.5 / (2.0 * sigma_surface_sq);
  const double fwd =
      detail::directional_surface_cost(s.fixed_points, s.moving_distance, phi, s.distance, &grad_phi, c);
  const double bwd = detail::directional_surface_cost(s.moving_points, s.fixed_distance, phi_inv,
                                                      s.distance, &grad_phi_inv, c);
  return weight * 0.5 * (fwd + bwd) / (2.0 * sigma_surface_sq);
}

/// Sum of the enabled terms. Surface inputs and inverse deformations must be
/// supplied together.
template <class T>
LossBreakdown total_loss(const BasicVolume<T>& f, const BasicVolume<T>& m,
                         const PosteriorParams<T>& post, const PriorParams& prior,
                         const Hyperparams& hyper, std::span<const BasicVectorField<T>> phis,
                         const SurfaceInputs* surface = nullptr,
                         std::span<const BasicVectorField<T>> phis_inv = {}) {
  hyper.validate();
  if ((surface == nullptr) != phis_inv.empty())
    throw InvalidArgument("surface term needs both surface inputs and inverse deformations");
  if (surface != nullptr && phis_inv.size() != phis.size())
    throw InvalidArgument("one inverse deformation per sample is required");

  LossBreakdown out;
  out.data = data_term(f, m, phis, hyper.sigma_image_sq);
  out.kl = kl_term(post, prior);
  if (surface != nullptr) {
    double acc = 0.0;
    for (std::size_t k = 0; k < phis.size(); ++k)
      acc += surface_term(*surface, phis[k], phis_inv[k], hyper.sigma_surface_sq);
    out.surface = acc / double(phis.size());
  }
  out.total = out.data + out.kl + out.surface;
  return out;
}

}  // namespace svfreg
