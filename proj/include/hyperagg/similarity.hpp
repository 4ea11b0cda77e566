#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperagg/types.hpp"

namespace hyperagg {

/// Pearson product-moment correlation with 64-bit accumulation.
/// Throws ZeroVariance if either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Fractional (1-based) ranks; tied values share the mean of their ranks.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Pearson of fractional ranks.
double spearman(std::span<const double> x, std::span<const double> y);

/// Model RDM over `subset` (indices into `features`): entry (a, b) is
/// 1 - pearson(embed(subset[a]), embed(subset[b])). The diagonal is exactly 0.
SquareMatrix predicted_rdm(const FeatureSet& features, const Mask& mask,
                           std::span<const std::size_t> subset);
SquareMatrix predicted_rdm(const FeatureSet& features, const Mask& mask);

/// Leave-one-out ceiling: mean over subjects of the squared Spearman between
/// that subject and the mean RDM of the remaining subjects.
double noise_ceiling(const RdmStack& target, std::size_t slice);

struct ScoreReport {
  std::vector<double> per_subject_r2;
  double noise_ceiling = 0.0;
  double normalized_score_percent = 0.0;
};

/// Squared Spearman of the predicted RDM against every subject, normalized
/// by the noise ceiling. `predicted_ids` must equal target.image_ids().
/// When `ceiling_override` is set it replaces the leave-one-out ceiling,
/// which also allows single-subject stacks.
ScoreReport score(const SquareMatrix& predicted, std::span<const std::string> predicted_ids,
                  const RdmStack& target, std::size_t slice,
                  std::optional<double> ceiling_override = std::nullopt);

}  // namespace hyperagg
