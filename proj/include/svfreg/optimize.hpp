#pragma once

/// Per-pair registration by direct minimization of the variational loss over
/// the posterior parameters (mu, log_var) of a stationary velocity field.
///
/// Gradient pipeline (reverse order of the forward pass):
///   loss -> warp adjoint -> [resample adjoint] -> T squaring adjoints
///        -> v/2^T scaling -> reparameterization -> (mu, log_var)
/// plus the closed-form KL gradient.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svfreg/integrate.hpp"
#include "svfreg/loss.hpp"
#include "svfreg/metrics.hpp"
#include "svfreg/prob_model.hpp"

namespace svfreg {

struct RegistrationConfig {
  PriorParams prior{20.0};
  Hyperparams hyper{0.02, 4.0, 1};
  IntegratorConfig integrator{Integrator::scaling_squaring, 7};
  int iterations = 500;
  double step_size = 0.01;
  std::uint64_t seed = 0;
  CovarianceMode posterior_mode = CovarianceMode::diagonal;
  /// Smoothing width in smoothed mode; derived from lambda when unset.
  std::optional<double> sigma_c;
  int velocity_downsample = 1;
  double initial_log_var = std::log(0.1);

  double effective_sigma_c() const { return sigma_c.value_or(sigma_c_from_lambda(prior.lambda)); }

  void validate() const {
    prior.validate();
    hyper.validate();
    integrator.validate();
    if (integrator.method != Integrator::scaling_squaring)
      throw InvalidArgument("registration gradients require the scaling_squaring integrator");
    if (iterations < 0) throw InvalidArgument("iterations must be non-negative");
    if (!(step_size > 0.0)) throw InvalidArgument("step size must be positive");
    if (velocity_downsample != 1 && velocity_downsample != 2)
      throw InvalidArgument("velocity downsample must be 1 or 2");
    if (sigma_c && !(*sigma_c > 0.0)) throw InvalidArgument("sigma_c must be positive");
    if (!std::isfinite(initial_log_var)) throw InvalidArgument("initial log variance must be finite");
  }
};

/// Images (and optional surfaces) of one registration pair, all on one grid.
template <class T>
struct RegistrationPair {
  const BasicVolume<T>& fixed;
  const BasicVolume<T>& moving;
  const SurfaceInputs* surfaces = nullptr;

  void validate() const {
    require_same_grid(fixed, moving, "fixed/moving images");
    require_finite(fixed, "fixed image");
    require_finite(moving, "moving image");
    if (surfaces != nullptr) surfaces->validate(fixed.grid());
  }
};

template <class T>
struct LossAndGrad {
  LossBreakdown loss;
  BasicVectorField<double> grad_mu;
  BasicVectorField<double> grad_log_var;
};

namespace detail {

template <class T>
BasicVectorField<T> to_image_grid(const BasicVectorField<T>& u, const GridSpec& image) {
  return u.grid() == image ? u : resample_field(u, image);
}

}  // namespace detail

/// Loss and exact gradients for the given standard-normal noise draws (one per sample).
template <class T>
LossAndGrad<T> loss_and_grad(const RegistrationPair<T>& pair, const PosteriorParams<T>& post,
                             const RegistrationConfig& cfg,
                             std::span<const BasicVectorField<T>> noise) {
  cfg.validate();
  post.validate();
  if (noise.size() != static_cast<std::size_t>(cfg.hyper.samples))
    throw InvalidArgument("loss_and_grad needs exactly one noise field per sample");
  const GridSpec& image = pair.fixed.grid();
  const GridSpec& vel = post.mu.grid();
  const int squarings = cfg.integrator.steps;
  const double k_inv = 1.0 / double(noise.size());
  const bool smoothed = post.mode == CovarianceMode::smoothed;

  LossAndGrad<T> out{{}, BasicVectorField<double>(vel), BasicVectorField<double>(vel)};

  for (const auto& r : noise) {
    require_same_grid(post.mu, r, "noise sample");
    const BasicVectorField<T> z = sample_posterior(post, r);

    const SquaringTape<T> tape = exp_ss_taped(z, squarings);
    const BasicVectorField<T> phi = detail::to_image_grid(tape.result(), image);
    const BasicVolume<T> warped = warp_image(pair.moving, phi);

    BasicVolume<double> upstream(image);
    double sse = 0.0;
    for (Index i = 0; i < image.voxel_count(); ++i) {
      const double res = double(pair.fixed[i]) - double(warped[i]);
      sse += res * res;
      upstream[i] = -res * k_inv / cfg.hyper.sigma_image_sq;
    }
    out.loss.data += sse * k_inv / (2.0 * cfg.hyper.sigma_image_sq);
    BasicVectorField<double> grad_phi = grad_warp_image(pair.moving, phi, upstream);

    BasicVectorField<double> grad_z(vel);
    if (pair.surfaces != nullptr) {
      const SquaringTape<T> tape_inv = exp_ss_taped(negated(z), squarings);
      const BasicVectorField<T> phi_inv = detail::to_image_grid(tape_inv.result(), image);
      BasicVectorField<double> grad_phi_inv(image);
      out.loss.surface += surface_term_gradient(*pair.surfaces, phi, phi_inv, cfg.hyper.sigma_surface_sq,
                                                k_inv, grad_phi, grad_phi_inv);
      const BasicVectorField<double> g_inv =
          exp_ss_backward(tape_inv, resample_field_adjoint(grad_phi_inv, vel));
      for (Index i = 0; i < vel.voxel_count(); ++i) grad_z[i] -= g_inv[i];
    }
    const BasicVectorField<double> g_fwd = exp_ss_backward(tape, resample_field_adjoint(grad_phi, vel));
    for (Index i = 0; i < vel.voxel_count(); ++i) grad_z[i] += g_fwd[i];

    // z = mu + C(exp(log_var/2) * r):  dz/dmu = I, d/dlog_var = 1/2 exp(log_var/2) r (C^T g).
    const BasicVectorField<double> grad_eps = smoothed ? gaussian_convolve(grad_z, post.sigma_c) : grad_z;
    for (Index i = 0; i < vel.voxel_count(); ++i) {
      out.grad_mu[i] += grad_z[i];
      const Vec3<double> s = posterior_stddev(post.log_var[i]);
      for (int c = 0; c < 3; ++c) out.grad_log_var[i][c] += 0.5 * s[c] * double(r[i][c]) * grad_eps[i][c];
    }
  }

  out.loss.kl = kl_term(post, cfg.prior);
  kl_term_gradient(post, cfg.prior, out.grad_mu, out.grad_log_var);
  out.loss.total = out.loss.data + out.loss.kl + out.loss.surface;
  return out;
}

/// MAP deformation: phi = exp(mu), phi_inv = exp(-mu), on the image grid.
template <class T>
struct Deformation {
  BasicVectorField<T> phi;
  BasicVectorField<T> phi_inv;
};

template <class T>
Deformation<T> map_deformation(const PosteriorParams<T>& post, const RegistrationConfig& cfg,
                               const GridSpec& image) {
  const int squarings = cfg.integrator.steps;
  return {detail::to_image_grid(exp_ss(post.mu, squarings), image),
          detail::to_image_grid(exp_ss(negated(post.mu), squarings), image)};
}

struct RegistrationMetrics {
  JacobianStats jacobian;
  InverseConsistency inverse;
  double max_scaled_velocity = 0.0;  ///< max |mu| / 2^T
  std::optional<DiceResult> dice;
  std::optional<SurfaceDistanceStats> surface;
};

struct RegistrationReport {
  std::vector<LossBreakdown> trace;
  RegistrationMetrics metrics;
  std::map<std::string, double> timings_ms;
};

template <class T>
struct RegistrationResult {
  PosteriorParams<T> posterior;
  Deformation<T> deformation;
  RegistrationReport report;
};

using ProgressCallback = std::function<void(int iteration, const LossBreakdown&)>;

namespace detail {

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<double> m1;
  std::vector<double> m2;

  explicit AdamState(std::size_t n) : m1(n, 0.0), m2(n, 0.0) {}

  /// Applies one bias-corrected update to `params` (3 scalars per voxel).
  template <class T>
  void step(BasicVectorField<T>& params, const BasicVectorField<double>& grad, double lr, int t) {
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (Index i = 0; i < params.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const auto k = static_cast<std::size_t>(3 * i + c);
        const double g = grad[i][c];
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
        const double update = lr * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + epsilon);
        params[i][c] = static_cast<T>(double(params[i][c]) - update);
      }
    }
  }
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

/// Deformation quality measures for a finished registration.
template <class T>
RegistrationMetrics deformation_metrics(const Deformation<T>& d, const PosteriorParams<T>& post,
                                        const RegistrationConfig& cfg,
                                        const SurfaceInputs* surfaces = nullptr) {
  RegistrationMetrics m;
  m.jacobian = jacobian_stats(d.phi);
  m.inverse = inverse_consistency(d.phi, d.phi_inv);
  m.max_scaled_velocity = scaled_step_magnitude(post.mu, cfg.integrator.steps);
  if (surfaces != nullptr) m.surface = surface_distance_stats(*surfaces, d.phi, d.phi_inv);
  return m;
}

/// Runs the optimizer from mu = 0, log_var = initial_log_var.
template <class T>
RegistrationResult<T> register_pair(const RegistrationPair<T>& pair, const RegistrationConfig& cfg,
                                    const ProgressCallback& progress = {}) {
  cfg.validate();
  pair.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const GridSpec image = pair.fixed.grid();
  const GridSpec vel = coarsened_grid(image, cfg.velocity_downsample);
  PosteriorParams<T> post = PosteriorParams<T>::initial(
      vel, cfg.initial_log_var, cfg.posterior_mode,
      cfg.posterior_mode == CovarianceMode::smoothed ? cfg.effective_sigma_c() : 1.0);

  std::mt19937_64 rng(cfg.seed);
  const auto n = static_cast<std::size_t>(3 * vel.voxel_count());
  detail::AdamState adam_mu(n);
  detail::AdamState adam_lv(n);

  RegistrationReport report;
  report.trace.reserve(static_cast<std::size_t>(cfg.iterations));
  std::vector<BasicVectorField<T>> noise;
  for (int it = 1; it <= cfg.iterations; ++it) {
    noise.clear();
    for (int k = 0; k < cfg.hyper.samples; ++k) noise.push_back(standard_normal_field<T>(vel, rng));
    LossAndGrad<T> lg = loss_and_grad<T>(pair, post, cfg, noise);
    if (!std::isfinite(lg.loss.total))
      throw Divergence("loss became non-finite at iteration " + std::to_string(it), it);
    report.trace.push_back(lg.loss);
    if (progress) progress(it, lg.loss);
    adam_mu.step(post.mu, lg.grad_mu, cfg.step_size, it);
    adam_lv.step(post.log_var, lg.grad_log_var, cfg.step_size, it);
    if (!all_finite(post.mu) || !all_finite(post.log_var))
      throw Divergence("parameters became non-finite at iteration " + std::to_string(it), it);
  }
  report.timings_ms["optimize"] = detail::elapsed_ms(t0);

  const auto t1 = std::chrono::steady_clock::now();
  Deformation<T> d = map_deformation(post, cfg, image);
  report.timings_ms["map_deformation"] = detail::elapsed_ms(t1);

  const auto t2 = std::chrono::steady_clock::now();
  report.metrics = deformation_metrics(d, post, cfg, pair.surfaces);
  report.timings_ms["metrics"] = detail::elapsed_ms(t2);

  return {std::move(post), std::move(d), std::move(report)};
}

}  // namespace svfreg
