// svfreg command-line tool.
//
// Exit codes: 0 success, 1 invalid arguments, 2 I/O or format error,
// 3 grid mismatch, 4 optimizer divergence.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "svfreg/svfreg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace svfreg;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIO = 2, kGrid = 3, kDiverged = 4 };

void log_line(const std::string& s) { std::cerr << "svfreg: " << s << '\n'; }

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed for '" + path + "'");
}

Volume read_image(const std::string& path) { return to_volume(read_volume_file(path)); }
SegmentationMap read_labels(const std::string& path) { return to_labels(read_volume_file(path)); }
VectorField read_field(const std::string& path) { return to_vector_field(read_volume_file(path)); }

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// register -----------------------------------------------------------------

struct RegisterArgs {
  std::string fixed, moving, fixed_seg, moving_seg, out_dir;
  std::optional<int> label;
  bool surface_loss = true;
  std::string surface_distance = "squared";
  std::optional<std::size_t> surface_points;
  std::string posterior_mode = "diagonal";
  std::optional<double> sigma_c;
  int log_every = 25;
  RegistrationConfig cfg;
};

void add_register(CLI::App& app, RegisterArgs& a) {
  auto* c = app.add_subcommand("register", "Register a moving image to a fixed image");
  c->add_option("--fixed", a.fixed, "Fixed image")->required();
  c->add_option("--moving", a.moving, "Moving image")->required();
  c->add_option("--fixed-seg", a.fixed_seg, "Fixed segmentation (labels)");
  c->add_option("--moving-seg", a.moving_seg, "Moving segmentation (labels)");
  c->add_option("--label", a.label, "Structure label whose surfaces enter the surface term");
  c->add_flag("!--no-surface-loss", a.surface_loss,
              "Evaluate surface distances for --label but leave them out of the loss");
  c->add_option("--surface-distance", a.surface_distance, "Surface cost: squared or unsquared distances")
      ->check(CLI::IsMember({"squared", "unsquared"}));
  c->add_option("--surface-points", a.surface_points, "Surface points per structure (default: adaptive)");
  c->add_option("--out-dir", a.out_dir, "Output directory")->required();

  RegistrationConfig& k = a.cfg;
  c->add_option("--lambda", k.prior.lambda, "Prior precision scale")->capture_default_str();
  c->add_option("--sigma-image-sq", k.hyper.sigma_image_sq, "Image noise variance")->capture_default_str();
  c->add_option("--sigma-surface-sq", k.hyper.sigma_surface_sq, "Surface noise variance")->capture_default_str();
  c->add_option("--samples", k.hyper.samples, "Posterior samples per iteration")->capture_default_str();
  c->add_option("--steps", k.integrator.steps, "Scaling-and-squaring steps")->capture_default_str();
  c->add_option("--iterations", k.iterations, "Optimizer iterations")->capture_default_str();
  c->add_option("--step-size", k.step_size, "Optimizer step size")->capture_default_str();
  c->add_option("--seed", k.seed, "Noise seed")->capture_default_str();
  c->add_option("--posterior-mode", a.posterior_mode, "diagonal or smoothed")
      ->check(CLI::IsMember({"diagonal", "smoothed"}));
  c->add_option("--sigma-c", a.sigma_c, "Smoothing width in smoothed mode (default: from lambda)");
  c->add_option("--velocity-downsample", k.velocity_downsample, "Velocity grid coarsening (1 or 2)")
      ->capture_default_str();
  c->add_option("--initial-log-var", k.initial_log_var, "Initial log variance")->capture_default_str();
  c->add_option("--log-every", a.log_every, "Progress interval in iterations (0 disables)")->capture_default_str();
}

SurfaceInputs build_surfaces(const SegmentationMap& fixed, const SegmentationMap& moving, Label label,
                             const RegisterArgs& a) {
  const BinaryMask mf = boundary_mask(fixed, label);
  const BinaryMask mm = boundary_mask(moving, label);
  SurfaceInputs s;
  s.fixed_points = sample_surface_points(mf, a.surface_points.value_or(default_surface_sample_count(mf)),
                                         a.cfg.seed ^ 0x5eedf1ull, label);
  s.moving_points = sample_surface_points(mm, a.surface_points.value_or(default_surface_sample_count(mm)),
                                          a.cfg.seed ^ 0x5eedd2ull, label);
  s.fixed_distance = distance_transform(mf);
  s.moving_distance = distance_transform(mm);
  s.distance = a.surface_distance == "squared" ? SurfaceDistance::squared : SurfaceDistance::unsquared;
  return s;
}

int run_register(RegisterArgs& a) {
  const auto t_start = std::chrono::steady_clock::now();
  std::map<std::string, double> timings;
  RegistrationConfig& cfg = a.cfg;
  cfg.posterior_mode = parse_covariance_mode(a.posterior_mode);
  cfg.sigma_c = a.sigma_c;
  cfg.validate();
  if (a.fixed_seg.empty() != a.moving_seg.empty())
    throw InvalidArgument("--fixed-seg and --moving-seg must be given together");
  if (a.label && a.fixed_seg.empty()) throw InvalidArgument("--label requires --fixed-seg and --moving-seg");

  auto t0 = std::chrono::steady_clock::now();
  const Volume fixed = read_image(a.fixed);
  const Volume moving = read_image(a.moving);
  require_same_grid(fixed, moving, "fixed/moving images");
  std::optional<SegmentationMap> fixed_seg, moving_seg;
  if (!a.fixed_seg.empty()) {
    fixed_seg = read_labels(a.fixed_seg);
    moving_seg = read_labels(a.moving_seg);
    require_same_grid(fixed, *fixed_seg, "fixed segmentation");
    require_same_grid(fixed, *moving_seg, "moving segmentation");
  }
  timings["read"] = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  std::optional<SurfaceInputs> surfaces;
  if (a.label) surfaces = build_surfaces(*fixed_seg, *moving_seg, static_cast<Label>(*a.label), a);
  timings["surfaces"] = ms_since(t0);

  fs::create_directories(a.out_dir);
  const RegistrationPair<float> pair{fixed, moving, surfaces && a.surface_loss ? &*surfaces : nullptr};
  const int every = a.log_every;
  auto res = register_pair(pair, cfg, [every](int it, const LossBreakdown& l) {
    if (every > 0 && it % every == 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "iter %5d  total %.6g  data %.6g  kl %.6g  surface %.6g", it, l.total,
                    l.data, l.kl, l.surface);
      log_line(buf);
    }
  });
  for (const auto& [k, v] : res.report.timings_ms) timings[k] = v;

  t0 = std::chrono::steady_clock::now();
  RegistrationMetrics& m = res.report.metrics;
  if (surfaces && !m.surface) m.surface = surface_distance_stats(*surfaces, res.deformation.phi, res.deformation.phi_inv);
  const Volume warped = warp_image(moving, res.deformation.phi);
  std::optional<SegmentationMap> warped_seg;
  if (moving_seg) {
    warped_seg = warp_labels(*moving_seg, res.deformation.phi);
    m.dice = dice(*fixed_seg, *warped_seg, foreground_labels(*fixed_seg, *moving_seg));
  }
  double mean_norm = 0.0, max_norm = 0.0;
  for (const auto& v : res.posterior.mu.values()) {
    const double n = norm(vec_cast<double>(v));
    mean_norm += n;
    max_norm = std::max(max_norm, n);
  }
  mean_norm /= double(res.posterior.mu.size());
  timings["evaluate"] = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  const fs::path out(a.out_dir);
  write_volume_file((out / "velocity_mean.svf").string(), from_vector_field(res.posterior.mu, VolumeKind::velocity));
  write_volume_file((out / "phi.svf").string(), from_vector_field(res.deformation.phi, VolumeKind::displacement));
  write_volume_file((out / "phi_inv.svf").string(),
                    from_vector_field(res.deformation.phi_inv, VolumeKind::displacement));
  write_volume_file((out / "warped.svf").string(), from_volume(warped));
  if (warped_seg)
    write_volume_file((out / "warped_seg.svf").string(),
                      from_labels(*warped_seg, read_volume_file(a.moving_seg).header.dtype));

  json trace = json::array();
  for (const auto& l : res.report.trace) trace.push_back(to_json(l));
  json metrics = to_json(m);
  metrics["velocity_mean_norm"] = mean_norm;
  metrics["velocity_max_norm"] = max_norm;
  json inputs = {{"fixed", a.fixed}, {"moving", a.moving}};
  if (fixed_seg) {
    inputs["fixed_seg"] = a.fixed_seg;
    inputs["moving_seg"] = a.moving_seg;
  }
  json config = to_json(cfg);
  config["label"] = a.label ? json(*a.label) : json(nullptr);
  config["surface_loss"] = surfaces && a.surface_loss;
  config["surface_distance"] = a.surface_distance;
  config["surface_points"] = surfaces ? json({{"fixed", surfaces->fixed_points.size()},
                                              {"moving", surfaces->moving_points.size()}})
                                      : json(nullptr);
  const json report = {{"tool", "svfreg"},        {"version", std::string(kVersion)},
                       {"inputs", inputs},        {"config", config},
                       {"final_loss", to_json(res.report.trace.empty() ? LossBreakdown{} : res.report.trace.back())},
                       {"metrics", metrics},      {"trace", trace}};
  write_json((out / "report.json").string(), report);
  timings["write"] = ms_since(t0);
  timings["total"] = ms_since(t_start);
  write_json((out / "timings.json").string(), json(timings));

  char buf[200];
  std::snprintf(buf, sizeof buf, "done: folding %lld, mean |J| %.4f, inverse consistency mean %.4g max %.4g",
                static_cast<long long>(m.jacobian.folding_count), m.jacobian.mean_determinant, m.inverse.mean,
                m.inverse.max);
  log_line(buf);
  if (m.dice && m.dice->mean) log_line("mean dice " + std::to_string(*m.dice->mean));
  return kOk;
}

// warp ---------------------------------------------------------------------

struct WarpArgs {
  std::string image, field, out;
  bool labels = false;
};

void add_warp(CLI::App& app, WarpArgs& a) {
  auto* c = app.add_subcommand("warp", "Warp an image or label map by a displacement field");
  c->add_option("--image", a.image, "Input volume")->required();
  c->add_option("--field", a.field, "Displacement field")->required();
  c->add_option("--out", a.out, "Output volume")->required();
  c->add_flag("--labels", a.labels, "Nearest-neighbour label warping");
}

int run_warp(const WarpArgs& a) {
  const VolumeFile in = read_volume_file(a.image);
  const VectorField phi = read_field(a.field);
  if (a.labels) {
    if (in.header.kind != VolumeKind::labels) throw FormatError("--labels needs a labels volume, got '" +
                                                                std::string(to_string(in.header.kind)) + "'");
    const SegmentationMap s = to_labels(in);
    write_volume_file(a.out, from_labels(warp_labels(s, phi), in.header.dtype));
  } else {
    if (in.header.kind == VolumeKind::labels) log_line("warning: interpolating a labels volume; use --labels");
    write_volume_file(a.out, from_volume(warp_image(to_volume(in), phi), in.header.kind == VolumeKind::labels
                                                                                ? VolumeKind::image
                                                                                : in.header.kind));
  }
  return kOk;
}

// exp / invert -----------------------------------------------------------------

struct ExpArgs {
  std::string velocity, out, report;
  std::string method = "scaling_squaring";
  std::optional<int> steps;
  std::optional<std::string> compare_method;
  std::optional<int> compare_steps;
  bool timing_table = false;
  int repeats = 5;
};

int default_steps(Integrator m) { return m == Integrator::scaling_squaring ? 7 : (m == Integrator::rk4 ? 64 : 1024); }

void add_exp(CLI::App& app, ExpArgs& a) {
  auto* c = app.add_subcommand("exp", "Integrate a stationary velocity field into a displacement");
  c->add_option("--velocity", a.velocity, "Velocity field")->required();
  c->add_option("--method", a.method, "scaling_squaring, euler or rk4")
      ->check(CLI::IsMember({"scaling_squaring", "euler", "rk4"}));
  c->add_option("--steps", a.steps, "Squarings (scaling_squaring) or time steps (default 7 / 1024 / 64)");
  c->add_option("--out", a.out, "Output displacement field")->required();
  c->add_option("--compare-method", a.compare_method, "Second integrator for a cross-check")
      ->check(CLI::IsMember({"scaling_squaring", "euler", "rk4"}));
  c->add_option("--compare-steps", a.compare_steps, "Steps for the second integrator");
  c->add_flag("--timing-table", a.timing_table, "Time scaling and squaring for T = 1..10");
  c->add_option("--repeats", a.repeats, "Timing rounds over T = 1..10 (fastest kept)")->capture_default_str();
  c->add_option("--report", a.report, "JSON report (comparison and timing table)");
}

struct InvertArgs {
  std::string field, out;
  std::string method = "scaling_squaring";
  std::optional<int> steps;
};

void add_invert(CLI::App& app, InvertArgs& a) {
  auto* c = app.add_subcommand("invert", "Displacement of the inverse map exp(-v) of a velocity field");
  c->add_option("--field", a.field, "Velocity field")->required();
  c->add_option("--out", a.out, "Output displacement field")->required();
  c->add_option("--steps", a.steps, "Integration steps (default 7 squarings)");
  c->add_option("--method", a.method, "scaling_squaring, euler or rk4")
      ->check(CLI::IsMember({"scaling_squaring", "euler", "rk4"}));
}

IntegratorConfig integrator_config(const std::string& method, std::optional<int> steps) {
  IntegratorConfig c;
  c.method = parse_integrator(method);
  c.steps = steps.value_or(default_steps(c.method));
  c.validate();
  return c;
}

json timing_table(const VectorField& v, int rounds) {
  const std::vector<double> ms = squaring_timings_ms(v, 10, rounds);
  json rows = json::array();
  std::vector<double> xs;
  for (int t = 1; t <= 10; ++t) {
    rows.push_back({{"steps", t}, {"ms", ms[static_cast<std::size_t>(t - 1)]}});
    xs.push_back(t);
  }
  const LinearFit fit = linear_fit(xs, ms);
  return {{"rows", rows}, {"slope_ms", fit.slope}, {"intercept_ms", fit.intercept}, {"r_squared", fit.r_squared}};
}

int run_exp(const ExpArgs& a) {
  const VolumeFile f = read_volume_file(a.velocity);
  if (f.header.kind != VolumeKind::velocity) log_line("note: input kind is '" + std::string(to_string(f.header.kind)) + "'");
  const VectorField v = to_vector_field(f);
  const IntegratorConfig cfg = integrator_config(a.method, a.steps);
  const auto t0 = std::chrono::steady_clock::now();
  const VectorField u = integrate(v, cfg);
  const double ms = ms_since(t0);
  write_volume_file(a.out, from_vector_field(u, VolumeKind::displacement));

  json report = {{"method", std::string(to_string(cfg.method))}, {"steps", cfg.steps}, {"ms", ms},
                 {"max_scaled_velocity", scaled_step_magnitude(v, cfg.method == Integrator::scaling_squaring ? cfg.steps : 0)}};
  if (a.compare_method) {
    const IntegratorConfig other = integrator_config(*a.compare_method, a.compare_steps);
    const VectorField w = integrate(v, other);
    double all = 0.0, interior = 0.0;
    const GridSpec& g = v.grid();
    for (Index i = 0; i < g.voxel_count(); ++i) {
      const double d = norm(vec_cast<double>(u[i] - w[i]));
      all = std::max(all, d);
      if (is_interior(g, g.coords(i), kBorderMargin)) interior = std::max(interior, d);
    }
    report["compare"] = {{"method", std::string(to_string(other.method))},
                         {"steps", other.steps},
                         {"max_diff", all},
                         {"max_diff_interior", interior}};
    char buf[160];
    std::snprintf(buf, sizeof buf, "max |%s - %s| = %.3g (interior %.3g)", a.method.c_str(),
                  a.compare_method->c_str(), all, interior);
    log_line(buf);
  }
  if (a.timing_table) report["timing"] = timing_table(v, a.repeats);
  if (!a.report.empty()) write_json(a.report, report);
  return kOk;
}

int run_invert(const InvertArgs& a) {
  const VectorField v = read_field(a.field);
  write_volume_file(a.out, from_vector_field(invert(v, integrator_config(a.method, a.steps)), VolumeKind::displacement));
  return kOk;
}

// metrics ------------------------------------------------------------------

struct MetricsArgs {
  std::string a, b, field, inverse, out;
};

void add_metrics(CLI::App& app, MetricsArgs& a) {
  auto* c = app.add_subcommand("metrics", "Dice between label maps and deformation quality of fields");
  c->add_option("--a", a.a, "First label map");
  c->add_option("--b", a.b, "Second label map");
  c->add_option("--field", a.field, "Displacement field (Jacobian statistics)");
  c->add_option("--inverse", a.inverse, "Inverse displacement field (inverse consistency with --field)");
  c->add_option("--out", a.out, "JSON output")->required();
}

int run_metrics(const MetricsArgs& a) {
  if (a.a.empty() != a.b.empty()) throw InvalidArgument("--a and --b must be given together");
  if (a.a.empty() && a.field.empty()) throw InvalidArgument("nothing to measure: give --a/--b and/or --field");
  if (!a.inverse.empty() && a.field.empty()) throw InvalidArgument("--inverse requires --field");
  json out = json::object();
  if (!a.a.empty()) {
    const SegmentationMap sa = read_labels(a.a), sb = read_labels(a.b);
    const DiceResult d = dice(sa, sb, foreground_labels(sa, sb));
    out["dice"] = to_json(d);
    if (d.mean) log_line("mean dice " + std::to_string(*d.mean));
  }
  if (!a.field.empty()) {
    const VectorField phi = read_field(a.field);
    const JacobianStats j = jacobian_stats(phi);
    out["folding_count"] = j.folding_count;
    out["folding_fraction"] = j.folding_fraction;
    out["mean_jacobian_determinant"] = j.mean_determinant;
    if (!a.inverse.empty()) {
      const InverseConsistency ic = inverse_consistency(phi, read_field(a.inverse));
      out["inverse_consistency"] = {{"mean", ic.mean}, {"max", ic.max}};
    }
  }
  write_json(a.out, out);
  return kOk;
}

// synth --------------------------------------------------------------------

struct SynthArgs {
  std::string preset;
  std::vector<Index> dims{64, 64, 64};
  std::uint64_t seed = 0;
  std::string out_image, out_labels, out_velocity, out_params;
  double radius_fraction = 1.0 / 3.0;
  std::optional<double> outer_fraction, inner_fraction;
  double opening_angle = 60.0;
  double ramp_sigma = 1.0;
  std::vector<double> center_offset{0, 0, 0};
  double max_magnitude = 2.0;
  double smoothness = 8.0;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate synthetic shapes or smooth velocity fields");
  c->add_option("--preset", a.preset, "disk, cshape or velocity")
      ->required()
      ->check(CLI::IsMember({"disk", "cshape", "velocity"}));
  c->add_option("--dims", a.dims, "Grid size X Y Z")->expected(3)->capture_default_str();
  c->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  c->add_option("--out-image", a.out_image, "Output image (disk, cshape)");
  c->add_option("--out-labels", a.out_labels, "Output label map (disk, cshape)");
  c->add_option("--out-velocity", a.out_velocity, "Output velocity field (velocity)");
  c->add_option("--out-params", a.out_params, "JSON with the realized shape parameters");
  c->add_option("--radius-fraction", a.radius_fraction, "Disk radius / image size")->capture_default_str();
  c->add_option("--center-offset", a.center_offset, "Disk centre offset from the grid centre (voxels)")
      ->expected(3);
  c->add_option("--outer-fraction", a.outer_fraction, "C-shape outer radius / image size (default: sampled)");
  c->add_option("--inner-fraction", a.inner_fraction, "C-shape inner radius / image size (default: sampled)");
  c->add_option("--opening-angle", a.opening_angle, "C-shape opening in degrees")->capture_default_str();
  c->add_option("--ramp-sigma", a.ramp_sigma, "Edge ramp width in voxels")->capture_default_str();
  c->add_option("--max-magnitude", a.max_magnitude, "Velocity peak magnitude")->capture_default_str();
  c->add_option("--smoothness", a.smoothness, "Velocity smoothing sigma")->capture_default_str();
}

int run_synth(const SynthArgs& a) {
  const GridSpec g({a.dims[0], a.dims[1], a.dims[2]});
  json params = {{"preset", a.preset}, {"dims", a.dims}, {"seed", a.seed}};
  if (a.preset == "velocity") {
    if (a.out_velocity.empty()) throw InvalidArgument("velocity preset needs --out-velocity");
    write_volume_file(a.out_velocity, from_vector_field(random_smooth_velocity(g, a.max_magnitude, a.smoothness, a.seed),
                                                        VolumeKind::velocity));
    params["max_magnitude"] = a.max_magnitude;
    params["smoothness"] = a.smoothness;
  } else {
    if (a.out_image.empty() && a.out_labels.empty()) throw InvalidArgument("give --out-image and/or --out-labels");
    SynthImage im;
    if (a.preset == "disk") {
      const Point c = detail::grid_center(g) + Point{a.center_offset[0], a.center_offset[1], a.center_offset[2]};
      im = make_disk(g, a.radius_fraction, c, a.ramp_sigma);
      params["radius"] = a.radius_fraction * detail::image_size(g);
    } else {
      CShapeParams p;
      p.outer_fraction = a.outer_fraction;
      p.inner_fraction = a.inner_fraction;
      p.opening_angle_deg = a.opening_angle;
      p.ramp_sigma = a.ramp_sigma;
      CShape cs = make_cshape(g, p, a.seed);
      params["outer_radius"] = cs.outer_radius;
      params["inner_radius"] = cs.inner_radius;
      params["opening_angle_deg"] = cs.opening_angle_deg;
      im = std::move(cs);
    }
    if (!a.out_image.empty()) write_volume_file(a.out_image, from_volume(im.image));
    if (!a.out_labels.empty()) write_volume_file(a.out_labels, from_labels(im.labels));
  }
  if (!a.out_params.empty()) write_json(a.out_params, params);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic diffeomorphic registration with stationary velocity fields"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  RegisterArgs reg;
  WarpArgs warp;
  ExpArgs exp;
  InvertArgs inv;
  MetricsArgs met;
  SynthArgs syn;
  add_register(app, reg);
  add_warp(app, warp);
  add_invert(app, inv);
  add_exp(app, exp);
  add_metrics(app, met);
  add_synth(app, syn);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "register") return run_register(reg);
    if (cmd == "warp") return run_warp(warp);
    if (cmd == "invert") return run_invert(inv);
    if (cmd == "exp") return run_exp(exp);
    if (cmd == "metrics") return run_metrics(met);
    if (cmd == "synth") return run_synth(syn);
  } catch (const GridMismatch& e) {
    log_line(std::string("grid mismatch: ") + e.what());
    return kGrid;
  } catch (const Divergence& e) {
    log_line(std::string("diverged: ") + e.what());
    return kDiverged;
  } catch (const FormatError& e) {
    log_line(std::string("I/O error: ") + e.what());
    return kIO;
  } catch (const fs::filesystem_error& e) {
    log_line(std::string("I/O error: ") + e.what());
    return kIO;
  } catch (const InvalidArgument& e) {
    log_line(std::string("invalid argument: ") + e.what());
    return kUsage;
  }
  return kUsage;
}
