#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "svfreg/prob_model.hpp"
#include "svfreg/synth.hpp"

using namespace svfreg;

namespace {

BasicVectorField<double> random_field(const GridSpec& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return standard_normal_field<double>(g, rng);
}

double mean_sq_forward_difference(const BasicVectorField<double>& f) {
  const GridSpec& g = f.grid();
  double acc = 0.0;
  std::int64_t n = 0;
  for (Index i = 0; i < f.size(); ++i) {
    const Index3 c = g.coords(i);
    if (c.x + 1 < g.dims[0]) {
      const auto d = f[i] - f.at(c.x + 1, c.y, c.z);
      acc += dot(d, d);
      ++n;
    }
  }
  return acc / double(n);
}

}  // namespace

TEST(Laplacian, AnnihilatesConstants) {
  const BasicVectorField<double> f(GridSpec({5, 4, 3}), Vec3<double>{1.5, -2, 3});
  const auto out = laplacian_apply(PriorParams{3.0}, f);
  for (const auto& v : out.values()) EXPECT_EQ(v, (Vec3<double>{}));
}

TEST(Laplacian, SpikeGivesStencil) {
  const GridSpec g({5, 5, 5});
  BasicVectorField<double> f(g);
  f.at(2, 2, 2) = {1, 0, 0};
  const auto out = laplacian_apply(PriorParams{1.0}, f);
  for (Index i = 0; i < out.size(); ++i) {
    const Index3 c = g.coords(i);
    const Index dist = std::abs(c.x - 2) + std::abs(c.y - 2) + std::abs(c.z - 2);
    const double expected = dist == 0 ? 6.0 : (dist == 1 ? -1.0 : 0.0);
    EXPECT_EQ(out[i].x, expected);
    EXPECT_EQ(out[i].y, 0.0);
  }
}

TEST(Laplacian, MatchesDenseMatrixAndSumsToZero) {
  const GridSpec g({4, 3, 3});
  const auto f = random_field(g, 8);
  const double lambda = 2.5;
  const auto out = laplacian_apply(PriorParams{lambda}, f);
  const auto L = oracle::dense_laplacian(g);
  const Index n = g.voxel_count();
  Vec3<double> total;
  for (Index i = 0; i < n; ++i) {
    Vec3<double> row;
    for (Index j = 0; j < n; ++j) row += f[j] * L[static_cast<std::size_t>(i * n + j)];
    EXPECT_LT(norm(row * lambda - out[i]), 1e-12);
    total += out[i];
  }
  EXPECT_LT(norm(total), 1e-10);
}

TEST(PriorEnergy, EqualsQuadraticForm) {
  const GridSpec g({6, 5, 4});
  const PriorParams prior{20.0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto mu = random_field(g, seed);
    const auto lmu = laplacian_apply(prior, mu);
    double quad = 0.0;
    for (Index i = 0; i < mu.size(); ++i) quad += dot(mu[i], lmu[i]);
    EXPECT_NEAR(prior_energy(prior, mu), quad, 1e-10 * quad);
    EXPECT_GE(prior_energy(prior, mu), 0.0);
  }
}

TEST(PriorEnergy, ZeroForZeroAndConstantFields) {
  const GridSpec g({4, 4, 4});
  EXPECT_EQ(prior_energy(PriorParams{20}, BasicVectorField<double>(g)), 0.0);
  EXPECT_EQ(prior_energy(PriorParams{20}, BasicVectorField<double>(g, Vec3<double>{3, 1, -2})), 0.0);
}

TEST(PriorEnergy, TwoNodeGraph) {
  BasicVectorField<double> mu(GridSpec({2, 1, 1}));
  mu[1] = {3, 0, 0};
  EXPECT_DOUBLE_EQ(prior_energy(PriorParams{1.0}, mu), 9.0);
}

TEST(SamplePosterior, VanishingVarianceReturnsMean) {
  const GridSpec g({4, 4, 4});
  PosteriorParams<double> post{random_field(g, 1), BasicVectorField<double>(g, Vec3<double>{-80, -80, -80})};
  const auto r = random_field(g, 2);
  const auto z = sample_posterior(post, r);
  for (Index i = 0; i < z.size(); ++i) EXPECT_LT(norm(z[i] - post.mu[i]), 1e-15);
}

TEST(SamplePosterior, UnitDiagonalReturnsNoise) {
  const GridSpec g({4, 4, 4});
  const auto post = PosteriorParams<float>::initial(g, 0.0);
  std::mt19937_64 rng(3);
  const auto r = standard_normal_field<float>(g, rng);
  EXPECT_EQ(sample_posterior(post, r), r);
}

TEST(SamplePosterior, ShapeMismatchThrows) {
  const auto post = PosteriorParams<float>::initial(GridSpec({4, 4, 4}), 0.0);
  EXPECT_THROW(sample_posterior(post, VectorField(GridSpec({4, 4, 5}))), GridMismatch);
}

TEST(SamplePosterior, SmoothedVarianceMatchesKernelAutocorrelation) {
  const GridSpec g({8, 8, 8});
  const double sigma = 1.0;
  // diag(C C^T)[p] = prod_axes sum_{q in grid} w(q - p)^2 with w the unit-sum Gaussian.
  const Index radius = 3;
  std::vector<double> w;
  double sum = 0.0;
  for (Index k = -radius; k <= radius; ++k) {
    w.push_back(std::exp(-0.5 * double(k * k) / (sigma * sigma)));
    sum += w.back();
  }
  for (double& x : w) x /= sum;
  auto axis_energy = [&](Index p, Index n) {
    double e = 0.0;
    for (Index q = 0; q < n; ++q)
      if (std::abs(q - p) <= radius) e += w[static_cast<std::size_t>(q - p + radius)] * w[static_cast<std::size_t>(q - p + radius)];
    return e;
  };

  auto post = PosteriorParams<double>::initial(g, 0.0, CovarianceMode::smoothed, sigma);
  std::mt19937_64 rng(99);
  const int samples = 10000;
  std::vector<double> sumsq(static_cast<std::size_t>(g.voxel_count()), 0.0);
  for (int s = 0; s < samples; ++s) {
    const auto z = sample_posterior(post, standard_normal_field<double>(g, rng));
    for (Index i = 0; i < z.size(); ++i) sumsq[static_cast<std::size_t>(i)] += dot(z[i], z[i]);
  }
  for (Index i = 0; i < g.voxel_count(); ++i) {
    const Index3 c = g.coords(i);
    const double expected = axis_energy(c.x, 8) * axis_energy(c.y, 8) * axis_energy(c.z, 8);
    // The three components are independent draws of the same variance.
    EXPECT_NEAR(sumsq[static_cast<std::size_t>(i)] / (3.0 * samples), expected, 0.05 * expected) << i;
  }
}

TEST(SamplePosterior, SmoothingLowersHighFrequencyEnergy) {
  const GridSpec g({10, 10, 10});
  auto diag = PosteriorParams<double>::initial(g, std::log(0.3));
  diag.mu = random_smooth_velocity<double>(g, 1.0, 3.0, 4);
  auto smooth = diag;
  smooth.mode = CovarianceMode::smoothed;
  smooth.sigma_c = 1.0;
  const auto r = random_field(g, 12);
  EXPECT_LT(mean_sq_forward_difference(sample_posterior(smooth, r)),
            mean_sq_forward_difference(sample_posterior(diag, r)));
}

TEST(SamplePosterior, SeededDrawsAreReproducible) {
  const GridSpec g({5, 5, 5});
  auto post = PosteriorParams<float>::initial(g, -1.0, CovarianceMode::smoothed, 1.5);
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(sample_posterior(post, standard_normal_field<float>(g, a)),
            sample_posterior(post, standard_normal_field<float>(g, b)));
}

TEST(SigmaC, InvertsPrintedRelation) {
  // (6*20)^2 / (2 pi) = 2291.831..., raised to 2/3.
  EXPECT_NEAR(sigma_c_from_lambda(20.0), 173.8288068, 1e-6);
  EXPECT_NEAR(sigma_c_from_lambda(std::sqrt(2.0 * std::numbers::pi) / 6.0), 1.0, 1e-12);
  double prev = 0.0;
  for (double l = 0.1; l < 100.0; l *= 1.7) {
    const double s = sigma_c_from_lambda(l);
    EXPECT_GT(s, prev);
    prev = s;
    // Relation as printed: 1 / sqrt(2 pi s^(3/2)) == 1 / (6 l).
    EXPECT_NEAR(1.0 / std::sqrt(2.0 * std::numbers::pi * std::pow(s, 1.5)), 1.0 / (6.0 * l), 1e-12 / l);
  }
  EXPECT_THROW(sigma_c_from_lambda(0.0), InvalidArgument);
}

TEST(SamplePrior, ExpectedEnergyEqualsRank) {
  // E[z^T lambda L z] = tr(L L^+) = N - 1 per component.
  const GridSpec g({4, 4, 3});
  const PriorParams prior{20.0};
  std::mt19937_64 rng(7);
  const int draws = 400;
  double acc = 0.0;
  for (int d = 0; d < draws; ++d) acc += prior_energy(prior, sample_prior<double>(prior, g, rng));
  const double expected = 3.0 * double(g.voxel_count() - 1);
  // Each draw is chi-square with 3(N-1) dof; 4 standard errors.
  EXPECT_NEAR(acc / draws, expected, 4.0 * std::sqrt(2.0 * expected / draws));
}

TEST(SamplePrior, HasZeroMean) {
  const GridSpec g({6, 5, 4});
  std::mt19937_64 rng(1);
  const auto z = sample_prior<double>(PriorParams{20.0}, g, rng);
  Vec3<double> s;
  for (const auto& v : z.values()) s += v;
  EXPECT_LT(norm(s), 1e-10);
}
