#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hyperagg/similarity.hpp"
#include "hyperagg/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hyperagg;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

}  // namespace

TEST_CASE("pearson examples") {
  const std::vector<double> a{1, 2, 3};
  CHECK(pearson(a, std::vector<double>{1, 2, 3}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(a, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));

  // Frozen from the textbook oracle (and numpy.corrcoef): 0.8.
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  CHECK(oracle::pearson(x, y) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(pearson(x, y) == doctest::Approx(0.8).epsilon(1e-14));

  CHECK(code_of([] { pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }) ==
        ErrorCode::ZeroVariance);
  CHECK(code_of([] { pearson(std::vector<double>{1}, std::vector<double>{1}); }) ==
        ErrorCode::DegenerateDataset);
  CHECK(code_of([] { pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("pearson properties") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> slope(0.01, 10.0), shift(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(rng, 2 + trial % 40);
    const auto y = random_vector(rng, x.size());
    // Affine invariance.
    std::vector<double> ax(x.size());
    const double a = slope(rng), b = shift(rng);
    std::transform(x.begin(), x.end(), ax.begin(), [&](double v) { return a * v + b; });
    CHECK(std::abs(pearson(x, ax) - 1.0) <= 1e-9);
    // Exact symmetry.
    CHECK(pearson(x, y) == pearson(y, x));
    CHECK(pearson(x, y) == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("spearman examples") {
  const std::vector<double> a{1, 2, 3};
  CHECK(spearman(a, std::vector<double>{10, 20, 30}) == doctest::Approx(1.0));
  CHECK(spearman(a, std::vector<double>{30, 20, 10}) == doctest::Approx(-1.0));

  // Ties get average ranks; frozen from the rank-then-pearson oracle
  // (scipy.stats.spearmanr agrees): 3 / sqrt(10).
  const std::vector<double> x{1, 2, 2, 3}, y{1, 3, 2, 4};
  CHECK(oracle::average_ranks(x) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(oracle::spearman(x, y) == doctest::Approx(0.9486832980505139).epsilon(1e-14));
  CHECK(spearman(x, y) == doctest::Approx(0.9486832980505139).epsilon(1e-14));

  CHECK(fractional_ranks(std::vector<double>{5, 1, 5, 5, 0}) ==
        std::vector<double>{4, 2, 4, 4, 1});
  CHECK(code_of([] { spearman(std::vector<double>{2, 2}, std::vector<double>{1, 2}); }) ==
        ErrorCode::ZeroVariance);
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_vector(rng, 3 + trial % 30);
    auto y = random_vector(rng, x.size());
    // Plant some ties.
    if (x.size() > 4) x[1] = x[3];
    std::vector<double> fx(x.size()), gy(y.size());
    std::transform(x.begin(), x.end(), fx.begin(), [](double v) { return std::exp(v); });
    std::transform(y.begin(), y.end(), gy.begin(), [](double v) { return v * v * v - 7.0; });
    const double base = spearman(x, y);
    CHECK(std::abs(spearman(fx, gy) - base) <= 1e-9);
    CHECK(base == doctest::Approx(oracle::spearman(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("predicted_rdm examples") {
  SUBCASE("identical feature arrays give zero dissimilarity") {
    FeatureSet f({"a", "b"}, {{"s", 2, 2}}, {1, 2, 3, 5, 1, 2, 3, 5});
    const auto m = predicted_rdm(f, Mask::identity(MaskResolution::PerChannel, f.stages()));
    CHECK(m(0, 1) == 0.0);
    CHECK(m(1, 0) == 0.0);
  }
  SUBCASE("negated embeddings give 2") {
    FeatureSet f({"a", "b"}, {{"s", 1, 4}}, {1, 2, 4, -1, -1, -2, -4, 1});
    const auto m = predicted_rdm(f, Mask::identity(MaskResolution::PerStage, f.stages()));
    CHECK(m(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("matches the brute-force hypercolumn oracle") {
    std::mt19937_64 rng(99);
    for (auto res : {MaskResolution::PerStage, MaskResolution::PerChannel,
                     MaskResolution::PerFeature}) {
      const auto f = synthetic::random_features(rng, 4, synthetic::uniform_stages(2, 3, 2));
      const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.5);
      const auto m = predicted_rdm(f, mask);
      const auto ref = oracle::rdm(f, mask);
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(m(i, j) - ref[i][j]) <= 1e-7);
      }
    }
  }
  SUBCASE("subset selects and orders images") {
    std::mt19937_64 rng(4);
    const auto f = synthetic::random_features(rng, 5, synthetic::uniform_stages(2, 2, 2));
    const Mask id = Mask::identity(MaskResolution::PerChannel, f.stages());
    const auto full = predicted_rdm(f, id);
    const std::vector<std::size_t> subset{4, 1, 2};
    const auto part = predicted_rdm(f, id, subset);
    REQUIRE(part.n == 3);
    CHECK(part(0, 1) == full(4, 1));
    CHECK(part(1, 2) == full(1, 2));
    const std::vector<std::size_t> bad{0, 7};
    CHECK(code_of([&] { predicted_rdm(f, id, bad); }) == ErrorCode::InvalidArgument);
  }
  SUBCASE("constant embedding names the image") {
    FeatureSet f({"a", "flat"}, {{"s", 1, 3}}, {1, 2, 3, 4, 4, 4});
    try {
      predicted_rdm(f, Mask::identity(MaskResolution::PerStage, f.stages()));
      FAIL("expected zero variance");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroVariance);
      CHECK(std::string(e.what()).find("flat") != std::string::npos);
    }
  }
}

TEST_CASE("predicted_rdm invariants") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const auto res = static_cast<MaskResolution>(trial % 3);
    const auto f = synthetic::random_features(rng, 6, {{"a", 3, 2}, {"b", 2, 3}, {"c", 4, 1}});
    const auto mask = synthetic::log_normal_mask(rng, res, f.stages(), 0.7);
    const auto m = predicted_rdm(f, mask);
    for (std::size_t i = 0; i < m.n; ++i) {
      CHECK(m(i, i) == 0.0);
      for (std::size_t j = 0; j < m.n; ++j) {
        CHECK(std::abs(m(i, j) - m(j, i)) <= 1e-6);
        CHECK(m(i, j) >= -1e-6);
        CHECK(m(i, j) <= 2.0 + 1e-6);
      }
    }
    // Global scale invariance.
    for (float c : {0.5f, 3.0f, 17.0f}) {
      Mask scaled = mask;
      for (auto& v : scaled.values()) v *= c;
      const auto s = predicted_rdm(f, scaled);
      for (std::size_t k = 0; k < m.values.size(); ++k) {
        CHECK(std::abs(s.values[k] - m.values[k]) <= 1e-6);
      }
    }
  }
}

namespace {

RdmStack stack_of(const std::vector<std::vector<float>>& subjects, std::size_t n) {
  return RdmStack(synthetic::image_ids(n), Modality::Other,
                  {RdmSlice{std::nullopt, subjects}});
}

std::vector<float> random_rdm(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  std::vector<float> m(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = m[j * n + i] = u(rng);
  }
  return m;
}

std::vector<float> with_noise(std::vector<float> m, std::size_t n,
                              std::normal_distribution<float>& noise, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = m[j * n + i] = m[i * n + j] + noise(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("noise_ceiling examples") {
  std::mt19937_64 rng(17);
  const std::size_t n = 8;
  const auto common = random_rdm(rng, n);

  CHECK(std::abs(noise_ceiling(stack_of({common, common, common}, n), 0) - 1.0) <= 1e-9);

  // Two subjects with exactly reversed ranks: rho = -1, squared = 1.
  auto reversed = common;
  for (auto& v : reversed) v = v == 0.0f ? 0.0f : 3.0f - v;
  CHECK(std::abs(noise_ceiling(stack_of({common, reversed}, n), 0) - 1.0) <= 1e-9);

  // Common structure plus independent noise: definition transcription.
  std::vector<std::vector<float>> subjects;
  std::normal_distribution<float> noise(0.0f, 0.3f);
  for (int k = 0; k < 3; ++k) subjects.push_back(with_noise(common, n, noise, rng));
  const auto stack = stack_of(subjects, n);
  const double ceiling = noise_ceiling(stack, 0);
  CHECK(ceiling == doctest::Approx(oracle::noise_ceiling(stack, 0)).epsilon(1e-12));
  CHECK(ceiling > 0.0);
  CHECK(ceiling < 1.0);

  CHECK(code_of([&] { noise_ceiling(stack_of({common}, n), 0); }) ==
        ErrorCode::UndefinedCeiling);
}

TEST_CASE("score examples") {
  std::mt19937_64 rng(31);
  const std::size_t n = 10;
  const auto target = random_rdm(rng, n);
  const auto ids = synthetic::image_ids(n);

  SUBCASE("perfect match with ceiling override") {
    const auto stack = stack_of({target}, n);
    SquareMatrix pred{n, std::vector<double>(target.begin(), target.end())};
    const auto report = score(pred, ids, stack, 0, 1.0);
    CHECK(report.per_subject_r2.size() == 1);
    CHECK(report.normalized_score_percent == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(code_of([&] { score(pred, ids, stack, 0); }) == ErrorCode::UndefinedCeiling);
  }

  SUBCASE("independent prediction scores near zero on average") {
    std::vector<std::vector<float>> subjects;
    std::normal_distribution<float> noise(0.0f, 0.1f);
    for (int k = 0; k < 4; ++k) subjects.push_back(with_noise(target, n, noise, rng));
    const auto stack = stack_of(subjects, n);
    double total = 0.0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
      auto upper = upper_triangle(std::span<const float>(target));
      std::shuffle(upper.begin(), upper.end(), rng);
      total += score(from_upper_triangle(upper), ids, stack, 0).normalized_score_percent;
    }
    // E[r^2] for 45 independent entries is about 1/44, i.e. ~2-3 % of the ceiling.
    CHECK(total / seeds < 6.0);
  }

  SUBCASE("planted structure matches the definition oracle") {
    std::vector<std::vector<float>> subjects;
    std::normal_distribution<float> noise(0.0f, 0.2f);
    for (int k = 0; k < 3; ++k) subjects.push_back(with_noise(target, n, noise, rng));
    const auto stack = stack_of(subjects, n);
    SquareMatrix pred{n, std::vector<double>(target.begin(), target.end())};
    const auto report = score(pred, ids, stack, 0);

    const auto pu = oracle::upper(std::vector<std::vector<double>>(
        [&] {
          std::vector<std::vector<double>> rows(n, std::vector<double>(n));
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) rows[i][j] = pred(i, j);
          return rows;
        }()));
    double mean_r2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double rho = oracle::spearman(pu, oracle::upper(stack, 0, k));
      CHECK(report.per_subject_r2[k] == doctest::Approx(rho * rho).epsilon(1e-12));
      mean_r2 += rho * rho / 3.0;
    }
    const double expected = 100.0 * mean_r2 / oracle::noise_ceiling(stack, 0);
    CHECK(report.normalized_score_percent == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("image ordering must match") {
    const auto stack = stack_of({target, target}, n);
    SquareMatrix pred{n, std::vector<double>(target.begin(), target.end())};
    auto swapped = ids;
    std::swap(swapped[0], swapped[1]);
    CHECK(code_of([&] { score(pred, swapped, stack, 0); }) == ErrorCode::IdMismatch);
  }
}
