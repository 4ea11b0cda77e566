#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperagg/types.hpp"

namespace hyperagg {

/// Central differences of pair_dissimilarity with per-coordinate step
/// h = 1e-3 * (1 + |coefficient|), Richardson-extrapolated from h and h/2,
/// evaluated with 64-bit coefficients.
std::vector<double> finite_difference_gradient(const FeatureSet& features, const Mask& layout,
                                               std::span<const double> coefficients,
                                               PairIndex pair);

/// max_c |a_c - n_c| / max(|a_c|, |n_c|, floor), with the floor set to
/// 1e-3 of the largest gradient magnitude so that coordinates far below
/// the gradient's scale do not dominate.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 100;
  double tolerance = 1e-4;
  bool corrupt_gradient = false;  // negative control for the harness itself
};

struct GradcheckCase {
  std::size_t index = 0;
  MaskResolution resolution = MaskResolution::PerChannel;
  std::size_t stages = 0;
  std::size_t coefficients = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double worst_error = 0.0;
  bool passed = true;
};

/// Random instances with 2-4 stages, 1-8 channels, 1-5 spatial positions,
/// cycling through all three mask resolutions.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace hyperagg
