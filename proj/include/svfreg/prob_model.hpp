#pragma once

/// Generative-model pieces: the Laplacian smoothness prior on velocities, the
/// Gaussian variational posterior and reparameterized sampling from it.
///
/// Prior:      z ~ N(0, (lambda L)^-1), L = D - A on the 6-neighbour voxel graph.
/// Posterior:  z ~ N(mu, Sigma) with Sigma diagonal, or Sigma = C G G^T C^T where
///             C is a fixed Gaussian smoothing convolution ("smoothed" mode).

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "svfreg/grid.hpp"

namespace svfreg {

struct PriorParams {
  double lambda = 20.0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw InvalidArgument("prior lambda must be positive");
  }
};

enum class CovarianceMode { diagonal, smoothed };

inline std::string_view to_string(CovarianceMode m) {
  return m == CovarianceMode::diagonal ? "diagonal" : "smoothed";
}

inline CovarianceMode parse_covariance_mode(std::string_view s) {
  if (s == "diagonal") return CovarianceMode::diagonal;
  if (s == "smoothed") return CovarianceMode::smoothed;
  throw InvalidArgument("unknown covariance mode '" + std::string(s) + "'");
}

/// Variational posterior parameters. log_var holds the log of the diagonal of
/// G G^T (smoothed mode) or of Sigma itself (diagonal mode), per voxel and
/// vector component.
template <class T>
struct PosteriorParams {
  BasicVectorField<T> mu;
  BasicVectorField<T> log_var;
  CovarianceMode mode = CovarianceMode::diagonal;
  double sigma_c = 1.0;

  static PosteriorParams initial(const GridSpec& grid, double log_var0,
                                 CovarianceMode mode = CovarianceMode::diagonal,
                                 double sigma_c = 1.0) {
    const T lv = static_cast<T>(log_var0);
    return {BasicVectorField<T>(grid), BasicVectorField<T>(grid, Vec3<T>{lv, lv, lv}), mode,
            sigma_c};
  }

  void validate() const {
    require_same_grid(mu, log_var, "posterior mu/log_var");
    require_finite(mu, "posterior mu");
    require_finite(log_var, "posterior log_var");
    if (mode == CovarianceMode::smoothed && !(sigma_c > 0.0))
      throw InvalidArgument("sigma_c must be positive in smoothed mode");
  }
};

struct Hyperparams {
  double sigma_image_sq = 0.02;
  double sigma_surface_sq = 4.0;
  int samples = 1;

  void validate() const {
    if (!(sigma_image_sq > 0.0)) throw InvalidArgument("sigma_image_sq must be positive");
    if (!(sigma_surface_sq > 0.0)) throw InvalidArgument("sigma_surface_sq must be positive");
    if (samples < 1) throw InvalidArgument("sample count must be >= 1");
  }
};

/// Number of in-bounds 6-neighbours of voxel c.
inline int neighbor_degree(const GridSpec& g, const Index3& c) {
  int d = 0;
  const Index v[3] = {c.x, c.y, c.z};
  for (int a = 0; a < 3; ++a) {
    if (v[a] > 0) ++d;
    if (v[a] < g.dims[a] - 1) ++d;
  }
  return d;
}

/// lambda * L * field, per component.
template <class T>
BasicVectorField<T> laplacian_apply(const PriorParams& prior, const BasicVectorField<T>& field) {
  prior.validate();
  const GridSpec& g = field.grid();
  BasicVectorField<T> out(g);
  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  for (Index i = 0; i < field.size(); ++i) {
    const Index3 c = g.coords(i);
    const Index v[3] = {c.x, c.y, c.z};
    const Vec3<double> self = vec_cast<double>(field[i]);
    Vec3<double> acc;
    for (int a = 0; a < 3; ++a) {
      if (v[a] > 0) acc += self - vec_cast<double>(field[i - stride[a]]);
      if (v[a] < g.dims[a] - 1) acc += self - vec_cast<double>(field[i + stride[a]]);
    }
    out[i] = vec_cast<T>(acc * prior.lambda);
  }
  return out;
}

/// mu^T (lambda L) mu summed over components, via the neighbour-difference
/// expansion (lambda/2) sum_i sum_{j in N(i)} (mu_i - mu_j)^2.
template <class T>
double prior_energy(const PriorParams& prior, const BasicVectorField<T>& mu) {
  prior.validate();
  const GridSpec& g = mu.grid();
  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  double acc = 0.0;
  for (Index i = 0; i < mu.size(); ++i) {
    const Index3 c = g.coords(i);
    const Index v[3] = {c.x, c.y, c.z};
    for (int a = 0; a < 3; ++a) {
      if (v[a] < g.dims[a] - 1) {
        const Vec3<double> d = vec_cast<double>(mu[i]) - vec_cast<double>(mu[i + stride[a]]);
        acc += dot(d, d);
      }
    }
  }
  // Each unordered edge appears twice among ordered pairs: (lambda/2) * 2.
  return prior.lambda * acc;
}

/// Normalized Gaussian taps on [-R, R], R = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidArgument("gaussian sigma must be positive");
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (Index k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * double(k * k) / (sigma * sigma));
    taps[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

/// Separable 3D convolution with a truncated, unit-sum Gaussian. Samples
/// outside the grid are zero, so the operator is symmetric: it is its own adjoint.
template <class T>
BasicVectorField<T> gaussian_convolve(const BasicVectorField<T>& field, double sigma) {
  const std::vector<double> taps = gaussian_kernel(sigma);
  const auto radius = static_cast<Index>(taps.size() / 2);
  const GridSpec& g = field.grid();

  std::vector<Vec3<double>> cur(static_cast<std::size_t>(field.size()));
  for (Index i = 0; i < field.size(); ++i) cur[static_cast<std::size_t>(i)] = vec_cast<double>(field[i]);
  std::vector<Vec3<double>> next(cur.size());

  const Index stride[3] = {1, g.dims[0], g.dims[0] * g.dims[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const Index n = g.dims[axis];
    for (Index i = 0; i < field.size(); ++i) {
      const Index3 c = g.coords(i);
      const Index pos = axis == 0 ? c.x : (axis == 1 ? c.y : c.z);
      const Index lo = std::max<Index>(0, pos - radius);
      const Index hi = std::min<Index>(n - 1, pos + radius);
      Vec3<double> acc;
      for (Index q = lo; q <= hi; ++q) {
        const double w = taps[static_cast<std::size_t>(q - pos + radius)];
        acc += cur[static_cast<std::size_t>(i + (q - pos) * stride[axis])] * w;
      }
      next[static_cast<std::size_t>(i)] = acc;
    }
    std::swap(cur, next);
  }
  BasicVectorField<T> out(g);
  for (Index i = 0; i < out.size(); ++i) out[i] = vec_cast<T>(cur[static_cast<std::size_t>(i)]);
  return out;
}

/// exp(log_var / 2) elementwise.
template <class T>
Vec3<double> posterior_stddev(const Vec3<T>& log_var) {
  return {std::exp(0.5 * double(log_var.x)), std::exp(0.5 * double(log_var.y)),
          std::exp(0.5 * double(log_var.z))};
}

/// Noise term of the reparameterization before smoothing: exp(log_var/2) * r.
template <class T>
BasicVectorField<T> scaled_noise(const PosteriorParams<T>& post, const BasicVectorField<T>& noise) {
  BasicVectorField<T> out(noise.grid());
  for (Index i = 0; i < noise.size(); ++i) {
    const Vec3<double> s = posterior_stddev(post.log_var[i]);
    const Vec3<double> r = vec_cast<double>(noise[i]);
    out[i] = vec_cast<T>(Vec3<double>{s.x * r.x, s.y * r.y, s.z * r.z});
  }
  return out;
}

/// z = mu + sqrt(Sigma) r (diagonal) or z = mu + C_sigma_c (exp(log_var/2) * r).
template <class T>
BasicVectorField<T> sample_posterior(const PosteriorParams<T>& post,
                                     const BasicVectorField<T>& noise) {
  require_same_grid(post.mu, post.log_var, "sample_posterior");
  require_same_grid(post.mu, noise, "sample_posterior");
  BasicVectorField<T> eps = scaled_noise(post, noise);
  if (post.mode == CovarianceMode::smoothed) eps = gaussian_convolve(eps, post.sigma_c);
  BasicVectorField<T> z(post.mu.grid());
  for (Index i = 0; i < z.size(); ++i)
    z[i] = vec_cast<T>(vec_cast<double>(post.mu[i]) + vec_cast<double>(eps[i]));
  return z;
}

/// Solves 1 / sqrt(2 pi sigma_c^(3/2)) = (6 lambda)^-1 for sigma_c.
inline double sigma_c_from_lambda(double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  const double six_lambda = 6.0 * lambda;
  return std::pow(six_lambda * six_lambda / (2.0 * std::numbers::pi), 2.0 / 3.0);
}

template <class T, class Rng>
BasicVectorField<T> standard_normal_field(const GridSpec& grid, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  BasicVectorField<T> out(grid);
  for (auto& v : out.values()) {
    const double x = normal(rng);
    const double y = normal(rng);
    const double z = normal(rng);
    v = vec_cast<T>(Vec3<double>{x, y, z});
  }
  return out;
}

/// Exact draw from the prior N(0, (lambda L)^+) restricted to zero-mean fields.
///
/// The free-boundary grid Laplacian is diagonalized by the separable DCT-II
/// basis with eigenvalues sum_a (2 - 2 cos(pi k_a / n_a)), so the sample is an
/// inverse DCT of white coefficients scaled by 1/sqrt(lambda * eigenvalue).
template <class T, class Rng>
BasicVectorField<T> sample_prior(const PriorParams& prior, const GridSpec& grid, Rng& rng) {
  prior.validate();
  grid.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index count = grid.voxel_count();

  std::array<std::vector<double>, 3> eig;
  std::array<std::vector<double>, 3> basis;  // basis[a][x * n + k]
  for (int a = 0; a < 3; ++a) {
    const Index n = grid.dims[a];
    eig[a].resize(static_cast<std::size_t>(n));
    basis[a].resize(static_cast<std::size_t>(n * n));
    for (Index k = 0; k < n; ++k) {
      eig[a][static_cast<std::size_t>(k)] = 2.0 - 2.0 * std::cos(std::numbers::pi * double(k) / double(n));
      const double norm_k = k == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
      for (Index x = 0; x < n; ++x)
        basis[a][static_cast<std::size_t>(x * n + k)] =
            norm_k * std::cos(std::numbers::pi * double(k) * (double(x) + 0.5) / double(n));
    }
  }

  std::vector<Vec3<double>> coef(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const Index3 k = grid.coords(i);
    const double e = eig[0][static_cast<std::size_t>(k.x)] + eig[1][static_cast<std::size_t>(k.y)] +
                     eig[2][static_cast<std::size_t>(k.z)];
    Vec3<double> c{normal(rng), normal(rng), normal(rng)};
    coef[static_cast<std::size_t>(i)] = e > 1e-12 ? c * (1.0 / std::sqrt(prior.lambda * e)) : Vec3<double>{};
  }

  const Index stride[3] = {1, grid.dims[0], grid.dims[0] * grid.dims[1]};
  std::vector<Vec3<double>> next(coef.size());
  for (int a = 0; a < 3; ++a) {
    const Index n = grid.dims[a];
    for (Index i = 0; i < count; ++i) {
      const Index3 c = grid.coords(i);
      const Index pos = a == 0 ? c.x : (a == 1 ? c.y : c.z);
      const Index line = i - pos * stride[a];
      Vec3<double> acc;
      for (Index k = 0; k < n; ++k)
        acc += coef[static_cast<std::size_t>(line + k * stride[a])] *
               basis[a][static_cast<std::size_t>(pos * n + k)];
      next[static_cast<std::size_t>(i)] = acc;
    }
    std::swap(coef, next);
  }
  BasicVectorField<T> out(grid);
  for (Index i = 0; i < count; ++i) out[i] = vec_cast<T>(coef[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace svfreg
