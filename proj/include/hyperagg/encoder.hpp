#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hyperagg/types.hpp"

namespace hyperagg {

/// Variance guard added to both variances while training so that a mask
/// which transiently zeroes an embedding still yields finite gradients.
inline constexpr double kTrainingEpsilon = 1e-12;

/// Masked hypercolumn of one image: each raw feature multiplied by the
/// coefficient that covers it, stages concatenated in order.
std::vector<double> embed(const FeatureSet& features, const Mask& mask, std::size_t image);

/// 1 - Pearson(embed(i), embed(j)) with the variance guard `epsilon`.
///
/// With epsilon == 0 the Pearson is exact and a constant embedding raises
/// ZeroVariance naming the image; this is the evaluation path.
double pair_dissimilarity(const FeatureSet& features, const Mask& mask, PairIndex pair,
                          double epsilon = kTrainingEpsilon);

struct PairGradient {
  double dissimilarity = 0.0;
  // d(dissimilarity)/d(coefficient), laid out like Mask::values().
  std::vector<double> gradient;
};

PairGradient pair_gradient(const FeatureSet& features, const Mask& mask, PairIndex pair,
                           double epsilon = kTrainingEpsilon);

/// Adds `scale * d(dissimilarity)/d(coefficient)` into `gradient` and returns
/// the dissimilarity. Used by the trainer to reduce a batch without
/// allocating per pair.
double accumulate_pair_gradient(const FeatureSet& features, const Mask& mask, PairIndex pair,
                                double scale, std::span<double> gradient,
                                double epsilon = kTrainingEpsilon);

// Overloads taking 64-bit coefficients laid out like `layout.values()`. The
// gradient checker perturbs coefficients below float32 resolution, so it
// goes through these.
double pair_dissimilarity(const FeatureSet& features, const Mask& layout,
                          std::span<const double> coefficients, PairIndex pair,
                          double epsilon = kTrainingEpsilon);
PairGradient pair_gradient(const FeatureSet& features, const Mask& layout,
                           std::span<const double> coefficients, PairIndex pair,
                           double epsilon = kTrainingEpsilon);

}  // namespace hyperagg
