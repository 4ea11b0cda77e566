#include "hyperagg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hyperagg/encoder.hpp"

namespace hyperagg {

namespace {

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::ShapeMismatch, "pearson inputs differ in length");
  }
  if (x.size() < 2) fail(ErrorCode::DegenerateDataset, "pearson needs at least 2 values");
  if (is_constant(x) || is_constant(y)) {
    fail(ErrorCode::ZeroVariance, "pearson input is constant");
  }
  const double n = static_cast<double>(x.size());
  const double mean_x = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double mean_y = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = x[k] - mean_x;
    const double dy = y[k] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::ZeroVariance, "pearson input is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t start = 0;
  while (start < order.size()) {
    std::size_t end = start + 1;
    while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
    // Positions start..end-1 hold ranks start+1..end; ties share the average.
    const double rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = rank;
    start = end;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::ShapeMismatch, "spearman inputs differ in length");
  }
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

SquareMatrix predicted_rdm(const FeatureSet& features, const Mask& mask,
                           std::span<const std::size_t> subset) {
  mask.check_compatible(features);
  for (std::size_t idx : subset) {
    if (idx >= features.image_count()) {
      fail(ErrorCode::InvalidArgument, "image index " + std::to_string(idx) + " out of range");
    }
  }
  const std::size_t n = subset.size();
  SquareMatrix out{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const PairIndex pair{static_cast<std::uint32_t>(subset[a]),
                           static_cast<std::uint32_t>(subset[b])};
      const double d = pair_dissimilarity(features, mask, pair, 0.0);
      out(a, b) = d;
      out(b, a) = d;
    }
  }
  return out;
}

SquareMatrix predicted_rdm(const FeatureSet& features, const Mask& mask) {
  std::vector<std::size_t> all(features.image_count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return predicted_rdm(features, mask, all);
}

double noise_ceiling(const RdmStack& target, std::size_t slice) {
  const std::size_t subjects = target.subject_count();
  if (subjects < 2) {
    fail(ErrorCode::UndefinedCeiling, "noise ceiling needs at least 2 subjects");
  }
  if (slice >= target.slice_count()) fail(ErrorCode::InvalidArgument, "slice out of range");

  std::vector<std::vector<double>> upper;
  upper.reserve(subjects);
  for (std::size_t k = 0; k < subjects; ++k) {
    upper.push_back(upper_triangle(target.matrix(slice, k)));
  }
  const std::size_t m = upper.front().size();

  std::vector<double> total(m, 0.0);
  for (const auto& u : upper) {
    for (std::size_t e = 0; e < m; ++e) total[e] += u[e];
  }
  double sum = 0.0;
  std::vector<double> others(m);
  for (std::size_t k = 0; k < subjects; ++k) {
    for (std::size_t e = 0; e < m; ++e) {
      others[e] = (total[e] - upper[k][e]) / static_cast<double>(subjects - 1);
    }
    const double rho = spearman(upper[k], others);
    sum += rho * rho;
  }
  return sum / static_cast<double>(subjects);
}

ScoreReport score(const SquareMatrix& predicted, std::span<const std::string> predicted_ids,
                  const RdmStack& target, std::size_t slice,
                  std::optional<double> ceiling_override) {
  if (!std::equal(predicted_ids.begin(), predicted_ids.end(), target.image_ids().begin(),
                  target.image_ids().end())) {
    fail(ErrorCode::IdMismatch, "predicted RDM images do not match the target's image ordering");
  }
  if (predicted.n != target.image_count()) {
    fail(ErrorCode::ShapeMismatch, "predicted RDM size does not match the target");
  }
  if (slice >= target.slice_count()) fail(ErrorCode::InvalidArgument, "slice out of range");

  ScoreReport report;
  const auto pred = upper_triangle(predicted);
  for (std::size_t k = 0; k < target.subject_count(); ++k) {
    const double rho = spearman(pred, upper_triangle(target.matrix(slice, k)));
    report.per_subject_r2.push_back(rho * rho);
  }
  report.noise_ceiling = ceiling_override ? *ceiling_override : noise_ceiling(target, slice);
  if (!(report.noise_ceiling > 0.0)) {
    fail(ErrorCode::UndefinedCeiling, "noise ceiling is not positive");
  }
  const double mean_r2 =
      std::accumulate(report.per_subject_r2.begin(), report.per_subject_r2.end(), 0.0) /
      static_cast<double>(report.per_subject_r2.size());
  report.normalized_score_percent = std::max(0.0, 100.0 * mean_r2 / report.noise_ceiling);
  return report;
}

}  // namespace hyperagg
