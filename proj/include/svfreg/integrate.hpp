#pragma once

/// Integration of stationary velocity fields into displacement fields.
///
/// exp(v) is the time-1 flow of dphi/dt = v(phi), phi(0) = Id. Three fixed-step
/// integrators are provided; scaling and squaring is the one used for
/// registration and the only one with a reverse-mode adjoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "svfreg/transform.hpp"

namespace svfreg {

enum class Integrator { scaling_squaring, euler, rk4 };

inline std::string_view to_string(Integrator m) {
  switch (m) {
    case Integrator::scaling_squaring:
      return "scaling_squaring";
    case Integrator::euler:
      return "euler";
    case Integrator::rk4:
      return "rk4";
  }
  return "?";
}

inline Integrator parse_integrator(std::string_view s) {
  if (s == "scaling_squaring" || s == "ss") return Integrator::scaling_squaring;
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  throw InvalidArgument("unknown integrator '" + std::string(s) + "'");
}

inline constexpr int kMaxSquarings = 16;

struct IntegratorConfig {
  Integrator method = Integrator::scaling_squaring;
  int steps = 7;

  void validate() const {
    if (steps < 1) throw InvalidArgument("integrator steps must be >= 1");
    if (method == Integrator::scaling_squaring && steps > kMaxSquarings)
      throw InvalidArgument("scaling and squaring supports at most 16 squarings");
  }
};

/// Intermediate displacements of scaling and squaring, kept for the adjoint.
/// states[0] = v / 2^T, states[t] = states[t-1] o states[t-1].
template <class T>
struct SquaringTape {
  std::vector<BasicVectorField<T>> states;
  int squarings = 0;

  const BasicVectorField<T>& result() const { return states.back(); }
};

template <class T>
SquaringTape<T> exp_ss_taped(const BasicVectorField<T>& v, int squarings) {
  if (squarings < 0 || squarings > kMaxSquarings)
    throw InvalidArgument("squaring count must be in [0, 16]");
  require_finite(v, "velocity field");
  SquaringTape<T> tape;
  tape.squarings = squarings;
  tape.states.reserve(static_cast<std::size_t>(squarings) + 1);

  const double scale = std::ldexp(1.0, -squarings);
  BasicVectorField<T> u(v.grid());
  for (Index i = 0; i < u.size(); ++i) u[i] = vec_cast<T>(vec_cast<double>(v[i]) * scale);
  tape.states.push_back(std::move(u));
  for (int t = 0; t < squarings; ++t) {
    const auto& prev = tape.states.back();
    tape.states.push_back(compose(prev, prev));
  }
  return tape;
}

/// Scaling and squaring: u <- v / 2^T, then u <- u o u, T times.
template <class T>
BasicVectorField<T> exp_ss(const BasicVectorField<T>& v, int squarings) {
  if (squarings < 0 || squarings > kMaxSquarings)
    throw InvalidArgument("squaring count must be in [0, 16]");
  require_finite(v, "velocity field");
  const double scale = std::ldexp(1.0, -squarings);
  BasicVectorField<T> u(v.grid());
  for (Index i = 0; i < u.size(); ++i) u[i] = vec_cast<T>(vec_cast<double>(v[i]) * scale);
  for (int t = 0; t < squarings; ++t) u = compose(u, u);
  return u;
}

/// Reverse pass of exp_ss_taped: gradient w.r.t. the velocity given the
/// gradient w.r.t. the final displacement.
template <class T>
BasicVectorField<double> exp_ss_backward(const SquaringTape<T>& tape,
                                         const BasicVectorField<double>& grad_out) {
  BasicVectorField<double> grad = grad_out;
  for (int t = tape.squarings; t >= 1; --t) {
    const auto& u = tape.states[static_cast<std::size_t>(t - 1)];
    BasicVectorField<double> prev(u.grid());
    compose_adjoint(u, u, grad, prev, prev);
    grad = std::move(prev);
  }
  const double scale = std::ldexp(1.0, -tape.squarings);
  for (Index i = 0; i < grad.size(); ++i) grad[i] *= scale;
  return grad;
}

/// Forward Euler on each voxel trajectory: u <- u + v(p + u) / N, N times.
template <class T>
BasicVectorField<T> exp_euler(const BasicVectorField<T>& v, int steps) {
  if (steps < 1) throw InvalidArgument("euler steps must be >= 1");
  require_finite(v, "velocity field");
  const GridSpec& g = v.grid();
  const double h = 1.0 / steps;
  BasicVectorField<T> out(g);
  for (Index i = 0; i < out.size(); ++i) {
    const Point p = detail::lattice_point(g.coords(i));
    Vec3<double> u;
    for (int s = 0; s < steps; ++s) u += sample_vector(v, p + u) * h;
    out[i] = vec_cast<T>(u);
  }
  return out;
}

/// Classical fourth-order Runge-Kutta on each voxel trajectory.
template <class T>
BasicVectorField<T> exp_rk4(const BasicVectorField<T>& v, int steps) {
  if (steps < 1) throw InvalidArgument("rk4 steps must be >= 1");
  require_finite(v, "velocity field");
  const GridSpec& g = v.grid();
  const double h = 1.0 / steps;
  BasicVectorField<T> out(g);
  for (Index i = 0; i < out.size(); ++i) {
    const Point p = detail::lattice_point(g.coords(i));
    Vec3<double> u;
    for (int s = 0; s < steps; ++s) {
      const Vec3<double> k1 = sample_vector(v, p + u);
      const Vec3<double> k2 = sample_vector(v, p + u + k1 * (0.5 * h));
      const Vec3<double> k3 = sample_vector(v, p + u + k2 * (0.5 * h));
      const Vec3<double> k4 = sample_vector(v, p + u + k3 * h);
      u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    out[i] = vec_cast<T>(u);
  }
  return out;
}

template <class T>
BasicVectorField<T> integrate(const BasicVectorField<T>& v, const IntegratorConfig& cfg) {
  cfg.validate();
  switch (cfg.method) {
    case Integrator::scaling_squaring:
      return exp_ss(v, cfg.steps);
    case Integrator::euler:
      return exp_euler(v, cfg.steps);
    case Integrator::rk4:
      return exp_rk4(v, cfg.steps);
  }
  throw InvalidArgument("unknown integrator");
}

template <class T>
BasicVectorField<T> negated(const BasicVectorField<T>& v) {
  BasicVectorField<T> out(v.grid());
  for (Index i = 0; i < v.size(); ++i) out[i] = -v[i];
  return out;
}

/// Displacement of exp(-v), the inverse of exp(v).
template <class T>
BasicVectorField<T> invert(const BasicVectorField<T>& v, const IntegratorConfig& cfg) {
  return integrate(negated(v), cfg);
}

/// Largest |v| / 2^T, the magnitude of the first scaled step.
template <class T>
double scaled_step_magnitude(const BasicVectorField<T>& v, int squarings) {
  double m = 0.0;
  for (const auto& x : v.values()) m = std::max(m, norm(x));
  return std::ldexp(m, -squarings);
}

/// Wall-clock milliseconds of exp_ss(v, T) for T = 1..max_squarings.
/// T values are interleaved across rounds and the fastest round is kept, so a
/// transient slowdown does not land on a single T.
template <class T>
std::vector<double> squaring_timings_ms(const BasicVectorField<T>& v, int max_squarings, int rounds) {
  if (max_squarings < 1 || max_squarings > kMaxSquarings) throw InvalidArgument("max squarings out of range");
  std::vector<double> best(static_cast<std::size_t>(max_squarings), std::numeric_limits<double>::infinity());
  for (int r = 0; r < std::max(1, rounds); ++r) {
    for (int t = 1; t <= max_squarings; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      const BasicVectorField<T> u = exp_ss(v, t);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (u.size() != v.size()) throw Error("exp_ss returned a field of the wrong size");
      auto& b = best[static_cast<std::size_t>(t - 1)];
      b = std::min(b, ms);
    }
  }
  return best;
}

}  // namespace svfreg
