#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "hyperagg/types.hpp"

// Generators for synthetic corpora used by the gradient checker, the test
// suites and the planted-mask demo.
namespace hyperagg::synthetic {

std::vector<StageSpec> uniform_stages(std::size_t count, std::size_t channels,
                                      std::size_t spatial);

std::vector<std::string> image_ids(std::size_t count, const std::string& prefix = "img");

/// Standard-normal features for `images` images.
FeatureSet random_features(std::mt19937_64& rng, std::size_t images,
                           std::vector<StageSpec> stages, const std::string& prefix = "img");

/// Mask with coefficients exp(N(0, sigma^2)).
Mask log_normal_mask(std::mt19937_64& rng, MaskResolution resolution,
                     std::vector<StageSpec> stages, double sigma);

/// Every subject equals `base` plus independent symmetric Gaussian noise on
/// the off-diagonal entries (diagonal stays 0). noise_std == 0 gives
/// identical subjects.
RdmStack subject_stack(const SquareMatrix& base, std::vector<std::string> ids,
                       std::size_t subjects, double noise_std, std::mt19937_64& rng,
                       Modality modality = Modality::Other);

}  // namespace hyperagg::synthetic
