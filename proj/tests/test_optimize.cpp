#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "printers.hpp"
#include "svfreg/optimize.hpp"
#include "svfreg/synth.hpp"

using namespace svfreg;

namespace {

double worst_probe_error(const gradcheck::Options& o) {
  double worst = 0.0;
  for (const auto& p : gradcheck::run(o)) worst = std::max(worst, p.error());
  return worst;
}

double mean_abs_mu(const VectorField& mu) {
  double acc = 0.0;
  for (const auto& v : mu.values()) acc += norm(vec_cast<double>(v));
  return acc / double(mu.size());
}

RegistrationConfig quick_config(int iterations) {
  RegistrationConfig cfg;
  cfg.iterations = iterations;
  cfg.step_size = 0.05;
  cfg.hyper.sigma_image_sq = 0.06;
  return cfg;
}

}  // namespace

TEST(LossAndGrad, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    gradcheck::Options o;
    o.seed = seed;
    EXPECT_LT(worst_probe_error(o), 1e-3) << "seed " << seed;
  }
}

TEST(LossAndGrad, MatchesFiniteDifferencesWithSurfaceTerm) {
  gradcheck::Options o;
  o.surfaces = true;
  EXPECT_LT(worst_probe_error(o), 1e-3);
}

TEST(LossAndGrad, MatchesFiniteDifferencesSmoothedPosterior) {
  gradcheck::Options o;
  o.mode = CovarianceMode::smoothed;
  EXPECT_LT(worst_probe_error(o), 1e-3);
}

TEST(LossAndGrad, MatchesFiniteDifferencesDownsampledVelocity) {
  // One coarse voxel moves many fine sample positions, so a small step keeps
  // the difference quotient inside a single trilinear cell.
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    gradcheck::Options o;
    o.seed = seed;
    o.size = 8;
    o.downsample = 2;
    o.h = 1e-5;
    EXPECT_LT(worst_probe_error(o), 1e-3) << "seed " << seed;
  }
}

TEST(LossAndGrad, RegisteredPairHasZeroGradientAtIdentity) {
  const GridSpec g({8, 8, 8});
  const auto img = make_disk(g, 0.3).image;
  RegistrationConfig cfg;
  const auto post = PosteriorParams<float>::initial(g, -80.0);
  const std::vector<VectorField> noise{VectorField(g, Vec3<float>{1, -1, 1})};
  const auto lg = loss_and_grad<float>({img, img}, post, cfg, noise);
  EXPECT_EQ(lg.loss.data, 0.0);
  for (const auto& v : lg.grad_mu.values()) EXPECT_EQ(v, (Vec3<double>{0, 0, 0}));
}

TEST(LossAndGrad, KLStationaryLogVarOnFlatImages) {
  const GridSpec g({5, 4, 3});
  const Volume flat(g, 0.5f);
  RegistrationConfig cfg;
  auto post = PosteriorParams<double>::initial(g, 0.0);
  for (Index i = 0; i < g.voxel_count(); ++i) {
    const double lv = -std::log(cfg.prior.lambda * neighbor_degree(g, g.coords(i)));
    post.log_var[i] = {lv, lv, lv};
  }
  std::mt19937_64 rng(4);
  const std::vector noise{standard_normal_field<double>(g, rng)};
  const BasicVolume<double> f(g, 0.5);
  const auto lg = loss_and_grad<double>({f, f}, post, cfg, noise);
  for (const auto& v : lg.grad_log_var.values()) EXPECT_LT(norm(v), 1e-8);
}

TEST(LossAndGrad, RejectsWrongNoiseCount) {
  const GridSpec g({4, 4, 4});
  const Volume img(g);
  const auto post = PosteriorParams<float>::initial(g, -2.0);
  RegistrationConfig cfg;
  EXPECT_THROW(loss_and_grad<float>({img, img}, post, cfg, {}), InvalidArgument);
}

TEST(MapDeformation, ZeroAndConstantMean) {
  const GridSpec g({6, 6, 6});
  RegistrationConfig cfg;
  auto post = PosteriorParams<float>::initial(g, -2.0);
  auto d = map_deformation(post, cfg, g);
  EXPECT_EQ(d.phi, VectorField(g));
  EXPECT_EQ(d.phi_inv, VectorField(g));

  post.mu = VectorField(g, Vec3<float>{0.5f, -1.0f, 0.25f});
  d = map_deformation(post, cfg, g);
  for (Index i = 0; i < g.voxel_count(); ++i) {
    EXPECT_LT(norm(vec_cast<double>(d.phi[i] - Vec3<float>{0.5f, -1.0f, 0.25f})), 1e-5);
    EXPECT_LT(norm(vec_cast<double>(d.phi_inv[i] + Vec3<float>{0.5f, -1.0f, 0.25f})), 1e-5);
  }
}

TEST(MapDeformation, UpsamplesCoarseVelocityInFineVoxelUnits) {
  const GridSpec g({8, 8, 8});
  RegistrationConfig cfg;
  cfg.velocity_downsample = 2;
  auto post = PosteriorParams<float>::initial(coarsened_grid(g, 2), -2.0);
  post.mu = VectorField(post.mu.grid(), Vec3<float>{1, 0, 0});
  const auto d = map_deformation(post, cfg, g);
  EXPECT_EQ(d.phi.grid(), g);
  // One coarse voxel spans two fine voxels.
  for (const auto& v : d.phi.values()) EXPECT_NEAR(v.x, 2.0, 1e-5);
}

TEST(Register, SelfRegistrationStaysNearIdentity) {
  const GridSpec g({16, 16, 16});
  const auto img = make_disk(g, 0.3).image;
  RegistrationConfig cfg = quick_config(200);
  const auto res = register_pair<float>({img, img}, cfg);
  EXPECT_LT(mean_abs_mu(res.posterior.mu), 0.05);

  // 20-iteration moving average of the loss never rises after iteration 50.
  const auto& tr = res.report.trace;
  ASSERT_EQ(tr.size(), 200u);
  std::vector<double> total(tr.size());
  std::transform(tr.begin(), tr.end(), total.begin(), [](const LossBreakdown& l) { return l.total; });
  auto window = [&](std::size_t end) {
    return std::accumulate(total.begin() + static_cast<std::ptrdiff_t>(end - 20),
                           total.begin() + static_cast<std::ptrdiff_t>(end), 0.0) / 20.0;
  };
  for (std::size_t end = 70; end < total.size(); ++end) EXPECT_LE(window(end + 1), window(end)) << end;
  EXPECT_EQ(res.report.metrics.jacobian.folding_count, 0);
}

TEST(Register, RecoversTranslation) {
  const GridSpec g({32, 32, 32});
  const auto fixed = make_disk(g, 0.25);
  const auto moving = make_disk(g, 0.25, detail::grid_center(g) + Point{3, 0, 0});
  RegistrationConfig cfg = quick_config(200);
  cfg.velocity_downsample = 2;
  const auto res = register_pair<float>({fixed.image, moving.image}, cfg);
  Vec3<double> mean{0, 0, 0};
  std::int64_t n = 0;
  for (Index i = 0; i < g.voxel_count(); ++i)
    if (fixed.labels[i]) {
      mean += vec_cast<double>(res.deformation.phi[i]);
      ++n;
    }
  mean = mean * (1.0 / double(n));
  EXPECT_LT(norm(mean - Vec3<double>{3, 0, 0}), 0.5) << mean.x << " " << mean.y << " " << mean.z;
  EXPECT_EQ(res.report.metrics.jacobian.folding_count, 0);
  const auto warped = warp_labels(moving.labels, res.deformation.phi);
  EXPECT_GT(*dice(fixed.labels, warped, {1}).mean, 0.95);
}

TEST(Register, StrongerPriorGivesSmootherMean) {
  const GridSpec g({16, 16, 16});
  const auto fixed = make_disk(g, 0.3);
  const auto moving = make_disk(g, 0.22, detail::grid_center(g) + Point{1, -1, 0});
  RegistrationConfig cfg = quick_config(150);
  const auto weak = register_pair<float>({fixed.image, moving.image}, cfg);
  cfg.prior.lambda *= 10.0;
  const auto strong = register_pair<float>({fixed.image, moving.image}, cfg);
  const PriorParams unit{1.0};
  EXPECT_LT(prior_energy(unit, strong.posterior.mu), prior_energy(unit, weak.posterior.mu));
}

TEST(Register, DeterministicForFixedSeed) {
  const GridSpec g({10, 10, 10});
  const auto fixed = make_disk(g, 0.3);
  const auto moving = make_disk(g, 0.25);
  RegistrationConfig cfg = quick_config(30);
  cfg.seed = 99;
  const auto a = register_pair<float>({fixed.image, moving.image}, cfg);
  const auto b = register_pair<float>({fixed.image, moving.image}, cfg);
  EXPECT_EQ(a.posterior.mu, b.posterior.mu);
  EXPECT_EQ(a.posterior.log_var, b.posterior.log_var);
  ASSERT_EQ(a.report.trace.size(), b.report.trace.size());
  for (std::size_t k = 0; k < a.report.trace.size(); ++k) EXPECT_EQ(a.report.trace[k].total, b.report.trace[k].total);
  cfg.seed = 100;
  const auto c = register_pair<float>({fixed.image, moving.image}, cfg);
  EXPECT_NE(a.report.trace.back().total, c.report.trace.back().total);
}

TEST(Register, KLAtOptimumIsFiniteAndShiftInvariant) {
  const GridSpec g({10, 10, 10});
  const auto fixed = make_disk(g, 0.3);
  const auto moving = make_disk(g, 0.25);
  RegistrationConfig cfg = quick_config(40);
  auto res = register_pair<float>({fixed.image, moving.image}, cfg);
  const double kl = kl_term(res.posterior, cfg.prior);
  EXPECT_TRUE(std::isfinite(kl));
  for (auto& v : res.posterior.mu.values()) v += Vec3<float>{0.25f, -0.5f, 1.0f};
  EXPECT_NEAR(kl_term(res.posterior, cfg.prior), kl, 1e-6 * std::abs(kl));
}

TEST(Register, NonFiniteLossThrowsDivergence) {
  const GridSpec g({6, 6, 6});
  const auto fixed = make_disk(g, 0.3);
  const Volume moving(g);
  RegistrationConfig cfg = quick_config(5);
  cfg.hyper.sigma_image_sq = 1e-320;
  try {
    register_pair<float>({fixed.image, moving}, cfg);
    FAIL() << "expected Divergence";
  } catch (const Divergence& e) {
    EXPECT_EQ(e.iteration(), 1);
  }
}

TEST(Register, ValidatesConfigAndInputs) {
  const GridSpec g({6, 6, 6});
  const Volume a(g), b(GridSpec({6, 6, 5}));
  RegistrationConfig cfg = quick_config(1);
  EXPECT_THROW(register_pair<float>({a, b}, cfg), GridMismatch);
  cfg.velocity_downsample = 3;
  EXPECT_THROW(register_pair<float>({a, a}, cfg), InvalidArgument);
  cfg = quick_config(1);
  cfg.integrator.method = Integrator::euler;
  EXPECT_THROW(register_pair<float>({a, a}, cfg), InvalidArgument);
  cfg = quick_config(1);
  cfg.step_size = 0.0;
  EXPECT_THROW(register_pair<float>({a, a}, cfg), InvalidArgument);
  cfg = quick_config(1);
  cfg.prior.lambda = -1.0;
  EXPECT_THROW(register_pair<float>({a, a}, cfg), InvalidArgument);
}
