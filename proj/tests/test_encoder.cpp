#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hyperagg/encoder.hpp"
#include "hyperagg/gradcheck.hpp"
#include "hyperagg/similarity.hpp"
#include "hyperagg/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hyperagg;

namespace {

std::vector<double> as_double(const Mask& m) {
  return {m.values().begin(), m.values().end()};
}

}  // namespace

TEST_CASE("embed scales each element by its coefficient") {
  FeatureSet f({"a"}, {{"s0", 2, 2}, {"s1", 1, 3}}, {1, 2, 3, 4, 5, 6, 7});
  SUBCASE("per stage") {
    Mask m(MaskResolution::PerStage, f.stages(), {2.0f, 0.5f});
    CHECK(embed(f, m, 0) == std::vector<double>{2, 4, 6, 8, 2.5, 3, 3.5});
  }
  SUBCASE("per channel") {
    Mask m(MaskResolution::PerChannel, f.stages(), {2.0f, 3.0f, 0.5f});
    CHECK(embed(f, m, 0) == std::vector<double>{2, 4, 9, 12, 2.5, 3, 3.5});
  }
  SUBCASE("per feature") {
    Mask m(MaskResolution::PerFeature, f.stages(), {1, 2, 3, 4, 5, 6, 7});
    CHECK(embed(f, m, 0) == std::vector<double>{1, 4, 9, 16, 25, 36, 49});
  }
  SUBCASE("all-zero mask") {
    Mask m(MaskResolution::PerFeature, f.stages(), std::vector<float>(7, 0.0f));
    CHECK(embed(f, m, 0) == std::vector<double>(7, 0.0));
  }
  SUBCASE("single channel broadcast") {
    FeatureSet g({"a"}, {{"s", 1, 3}}, {1, 2, 3});
    Mask m(MaskResolution::PerChannel, g.stages(), {2.0f});
    CHECK(embed(g, m, 0) == std::vector<double>{2, 4, 6});
  }
}

TEST_CASE("pair_dissimilarity reference cases") {
  FeatureSet same({"a", "b"}, {{"s", 2, 2}}, {1, 2, 3, 5, 1, 2, 3, 5});
  const Mask id = Mask::identity(MaskResolution::PerChannel, same.stages());
  CHECK(pair_dissimilarity(same, id, {0, 1}, 0.0) == 0.0);

  FeatureSet neg({"a", "b"}, {{"s", 1, 3}}, {1, 2, 4, -1, -2, -4});
  const Mask id1 = Mask::identity(MaskResolution::PerStage, neg.stages());
  CHECK(pair_dissimilarity(neg, id1, {0, 1}, 0.0) == doctest::Approx(2.0).epsilon(1e-15));

  // The training guard moves well-conditioned pairs only negligibly.
  std::mt19937_64 rng(2);
  const auto f = synthetic::random_features(rng, 2, synthetic::uniform_stages(3, 4, 2));
  const Mask m = synthetic::log_normal_mask(rng, MaskResolution::PerChannel, f.stages(), 0.5);
  CHECK(std::abs(pair_dissimilarity(f, m, {0, 1}) - pair_dissimilarity(f, m, {0, 1}, 0.0)) <
        1e-9);

  // Zeroed mask: evaluation raises, training stays finite.
  Mask zero = m;
  for (auto& v : zero.values()) v = 0.0f;
  CHECK(code_of([&] { pair_dissimilarity(f, zero, {0, 1}, 0.0); }) == ErrorCode::ZeroVariance);
  const auto g = pair_gradient(f, zero, {0, 1});
  CHECK(std::isfinite(g.dissimilarity));
  for (double v : g.gradient) CHECK(std::isfinite(v));

  // Identical images sit at the global minimum d = 0; the training guard
  // only nudges the gradient off zero by O(epsilon).
  const auto still = pair_gradient(same, id, {0, 1}, 0.0);
  CHECK(still.dissimilarity == 0.0);
  for (double v : still.gradient) CHECK(v == 0.0);
  for (double v : pair_gradient(same, id, {0, 1}).gradient) CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("pair_dissimilarity agrees with predicted_rdm entries") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const auto f = synthetic::random_features(rng, 5, synthetic::uniform_stages(2, 3, 3));
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.5);
    const auto m = predicted_rdm(f, mask);
    for (const auto& p : all_pairs(5)) {
      CHECK(std::abs(pair_dissimilarity(f, mask, p) - m(p.i, p.j)) <= 1e-7);
    }
  }
}

TEST_CASE("pair_dissimilarity matches the explicit hypercolumn oracle") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const std::size_t channels = 1 + static_cast<std::size_t>(trial % 5);
    const auto f = synthetic::random_features(rng, 3, {{"a", channels, 3}, {"b", 4, 1}});
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 1.0);
    const auto e0 = oracle::hypercolumn(f, mask, 0);
    const auto e1 = oracle::hypercolumn(f, mask, 2);
    CHECK(embed(f, mask, 0) == e0);
    CHECK(pair_dissimilarity(f, mask, {0, 2}, 0.0) ==
          doctest::Approx(1.0 - oracle::pearson(e0, e1)).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient agrees with central differences") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 24; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const auto f = synthetic::random_features(rng, 2, {{"a", 3, 2}, {"b", 2, 4}});
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.4);
    const auto beta = as_double(mask);
    const auto analytic = pair_gradient(f, mask, beta, {0, 1}).gradient;
    const auto numeric = finite_difference_gradient(f, mask, beta, {0, 1});
    CHECK(max_relative_error(analytic, numeric) < 1e-4);

    // The float32-coefficient path computes the same gradient.
    const auto via_mask = pair_gradient(f, mask, {0, 1}).gradient;
    for (std::size_t k = 0; k < beta.size(); ++k) CHECK(via_mask[k] == analytic[k]);

    // accumulate_pair_gradient adds scale * gradient.
    std::vector<double> acc(beta.size(), 1.0);
    accumulate_pair_gradient(f, mask, {0, 1}, -2.5, acc);
    for (std::size_t k = 0; k < beta.size(); ++k) {
      CHECK(acc[k] == doctest::Approx(1.0 - 2.5 * analytic[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradient is orthogonal to the coefficient vector") {
  // d is invariant to a global rescale of the mask, so beta . grad = 0.
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const auto f = synthetic::random_features(rng, 2, synthetic::uniform_stages(3, 3, 3));
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.6);
    const auto beta = as_double(mask);
    const auto g = pair_gradient(f, mask, beta, {0, 1}).gradient;
    const double dot = std::inner_product(beta.begin(), beta.end(), g.begin(), 0.0);
    const double scale = std::sqrt(std::inner_product(beta.begin(), beta.end(), beta.begin(), 0.0) *
                                   std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
    CHECK(std::abs(dot) <= 1e-6 * scale);
  }
}

TEST_CASE("directional derivative matches a finite difference along a random direction") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 12; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const auto f = synthetic::random_features(rng, 2, {{"a", 5, 2}, {"b", 3, 3}});
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.3);
    const auto beta = as_double(mask);
    std::vector<double> dir(beta.size());
    for (auto& v : dir) v = normal(rng);
    const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
    for (auto& v : dir) v /= norm;
    const auto g = pair_gradient(f, mask, beta, {0, 1}).gradient;
    const double analytic = std::inner_product(g.begin(), g.end(), dir.begin(), 0.0);
    const double h = 1e-4;
    std::vector<double> plus(beta), minus(beta);
    for (std::size_t k = 0; k < beta.size(); ++k) {
      plus[k] += h * dir[k];
      minus[k] -= h * dir[k];
    }
    const double numeric = (pair_dissimilarity(f, mask, plus, {0, 1}) -
                            pair_dissimilarity(f, mask, minus, {0, 1})) /
                           (2 * h);
    CHECK(std::abs(analytic - numeric) <= 1e-5 * std::abs(analytic));
  }
}

TEST_CASE("coarser gradients are sums of finer gradients") {
  std::mt19937_64 rng(13);
  const auto f = synthetic::random_features(rng, 2, {{"a", 3, 4}, {"b", 2, 2}});
  std::uniform_real_distribution<float> u(0.5f, 2.0f);
  const float sa = u(rng), sb = u(rng);

  const Mask stage(MaskResolution::PerStage, f.stages(), {sa, sb});
  const Mask channel(MaskResolution::PerChannel, f.stages(), {sa, sa, sa, sb, sb});
  std::vector<float> fine(3 * 4, sa);
  fine.insert(fine.end(), 2 * 2, sb);
  const Mask feature(MaskResolution::PerFeature, f.stages(), fine);

  const auto gs = pair_gradient(f, stage, {0, 1});
  const auto gc = pair_gradient(f, channel, {0, 1});
  const auto gf = pair_gradient(f, feature, {0, 1});
  CHECK(gs.dissimilarity == doctest::Approx(gc.dissimilarity).epsilon(1e-14));
  CHECK(gs.gradient[0] == doctest::Approx(gc.gradient[0] + gc.gradient[1] + gc.gradient[2]));
  CHECK(gs.gradient[1] == doctest::Approx(gc.gradient[3] + gc.gradient[4]));
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t p = 0; p < 4; ++p) sum += gf.gradient[c * 4 + p];
    CHECK(std::abs(gc.gradient[c] - sum) <= 1e-9);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    const double sum = gf.gradient[12 + c * 2] + gf.gradient[12 + c * 2 + 1];
    CHECK(std::abs(gc.gradient[3 + c] - sum) <= 1e-9);
  }
}

TEST_CASE("gradcheck harness") {
  GradcheckOptions options;
  options.instances = 30;
  const auto report = run_gradcheck(options);
  CHECK(report.passed);
  CHECK(report.cases.size() == 30);
  CHECK(report.worst_error < 1e-4);

  options.corrupt_gradient = true;
  CHECK_FALSE(run_gradcheck(options).passed);
}
