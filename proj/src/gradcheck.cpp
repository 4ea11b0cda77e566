#include "hyperagg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hyperagg/encoder.hpp"
#include "hyperagg/synthetic.hpp"

namespace hyperagg {

std::vector<double> finite_difference_gradient(const FeatureSet& features, const Mask& layout,
                                               std::span<const double> coefficients,
                                               PairIndex pair) {
  std::vector<double> beta(coefficients.begin(), coefficients.end());
  std::vector<double> grad(beta.size());
  auto central = [&](std::size_t c, double h) {
    const double original = beta[c];
    beta[c] = original + h;
    const double up = pair_dissimilarity(features, layout, beta, pair);
    beta[c] = original - h;
    const double down = pair_dissimilarity(features, layout, beta, pair);
    beta[c] = original;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t c = 0; c < beta.size(); ++c) {
    const double h = 1e-3 * (1.0 + std::abs(beta[c]));
    // Richardson step: cancels the h^2 term of the central difference.
    grad[c] = (4.0 * central(c, 0.5 * h) - central(c, h)) / 3.0;
  }
  return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient sizes differ");
  }
  double scale = 0.0;
  for (std::size_t c = 0; c < analytic.size(); ++c) {
    scale = std::max({scale, std::abs(analytic[c]), std::abs(numeric[c])});
  }
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t c = 0; c < analytic.size(); ++c) {
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric[c]), floor});
    worst = std::max(worst, std::abs(analytic[c] - numeric[c]) / denom);
  }
  return worst;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  constexpr MaskResolution kResolutions[] = {MaskResolution::PerStage, MaskResolution::PerChannel,
                                             MaskResolution::PerFeature};
  std::mt19937_64 rng(options.seed);
  GradcheckReport report;
  for (std::size_t k = 0; k < options.instances; ++k) {
    std::uniform_int_distribution<std::size_t> stage_count(2, 4);
    std::uniform_int_distribution<std::size_t> channels(1, 8);
    std::uniform_int_distribution<std::size_t> spatial(1, 5);
    std::vector<StageSpec> stages;
    const std::size_t n_stages = stage_count(rng);
    for (std::size_t s = 0; s < n_stages; ++s) {
      stages.push_back({"layer" + std::to_string(s), channels(rng), spatial(rng)});
    }
    const auto features = synthetic::random_features(rng, 2, stages);
    const Mask layout = Mask::identity(kResolutions[k % 3], stages);

    std::uniform_real_distribution<double> coefficient(0.25, 2.0);
    std::vector<double> beta(layout.size());
    for (auto& b : beta) b = coefficient(rng);

    const PairIndex pair{0, 1};
    auto analytic = pair_gradient(features, layout, beta, pair).gradient;
    if (options.corrupt_gradient) {
      auto largest = std::max_element(analytic.begin(), analytic.end(), [](double a, double b) {
        return std::abs(a) < std::abs(b);
      });
      *largest *= 1.01;
    }
    const auto numeric = finite_difference_gradient(features, layout, beta, pair);

    GradcheckCase c;
    c.index = k;
    c.resolution = layout.resolution();
    c.stages = n_stages;
    c.coefficients = layout.size();
    c.max_relative_error = max_relative_error(analytic, numeric);
    c.passed = c.max_relative_error <= options.tolerance;
    report.worst_error = std::max(report.worst_error, c.max_relative_error);
    report.passed = report.passed && c.passed;
    report.cases.push_back(c);
  }
  return report;
}

}  // namespace hyperagg
