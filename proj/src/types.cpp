#include "hyperagg/types.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <unordered_set>

namespace hyperagg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::DegenerateDataset: return "degenerate-dataset";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::NonSquare: return "non-square";
    case ErrorCode::ZeroVariance: return "zero-variance";
    case ErrorCode::UndefinedCeiling: return "undefined-ceiling";
    case ErrorCode::UndefinedNoise: return "undefined-noise";
    case ErrorCode::IdMismatch: return "id-mismatch";
    case ErrorCode::NotTimeResolved: return "not-time-resolved";
    case ErrorCode::Asymmetric: return "asymmetric";
    case ErrorCode::NonZeroDiagonal: return "non-zero-diagonal";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::DuplicateId: return "duplicate-id";
    case ErrorCode::OpenFailed: return "open-failed";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::UnsupportedVersion: return "unsupported-version";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::Divergence: return "divergence";
  }
  return "unknown";
}

namespace {

void require_unique(const std::vector<std::string>& ids, const char* what) {
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      fail(ErrorCode::DuplicateId, std::string("duplicate ") + what + " '" + id + "'");
    }
  }
}

void validate_stages(const std::vector<StageSpec>& stages) {
  if (stages.empty()) fail(ErrorCode::InvalidArgument, "at least one stage is required");
  std::vector<std::string> names;
  names.reserve(stages.size());
  for (const auto& s : stages) {
    if (s.channels == 0 || s.spatial == 0) {
      fail(ErrorCode::InvalidArgument,
           "stage '" + s.name + "' must have channels >= 1 and spatial >= 1");
    }
    names.push_back(s.name);
  }
  require_unique(names, "stage name");
}

}  // namespace

FeatureSet::FeatureSet(std::vector<std::string> image_ids, std::vector<StageSpec> stages,
                       std::vector<float> data)
    : image_ids_(std::move(image_ids)), stages_(std::move(stages)), data_(std::move(data)) {
  validate_stages(stages_);
  require_unique(image_ids_, "image id");
  offsets_.reserve(stages_.size());
  for (const auto& s : stages_) {
    offsets_.push_back(length_);
    length_ += s.size();
  }
  if (data_.size() != image_ids_.size() * length_) {
    fail(ErrorCode::ShapeMismatch,
         "feature payload holds " + std::to_string(data_.size()) + " values, expected " +
             std::to_string(image_ids_.size() * length_));
  }
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      fail(ErrorCode::NonFinite, "non-finite feature value for image '" +
                                     image_ids_[k / length_] + "'");
    }
  }
}

std::span<const float> FeatureSet::row(std::size_t image) const {
  return std::span<const float>(data_).subspan(image * length_, length_);
}

std::span<const float> FeatureSet::stage_block(std::size_t image, std::size_t stage) const {
  return row(image).subspan(offsets_.at(stage), stages_[stage].size());
}

std::optional<std::size_t> FeatureSet::find(std::string_view id) const {
  auto it = std::find(image_ids_.begin(), image_ids_.end(), id);
  if (it == image_ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - image_ids_.begin());
}

std::string_view to_string(MaskResolution resolution) {
  switch (resolution) {
    case MaskResolution::PerStage: return "per-stage";
    case MaskResolution::PerChannel: return "per-channel";
    case MaskResolution::PerFeature: return "per-feature";
  }
  return "unknown";
}

MaskResolution parse_resolution(std::string_view text) {
  if (text == "per-stage") return MaskResolution::PerStage;
  if (text == "per-channel") return MaskResolution::PerChannel;
  if (text == "per-feature") return MaskResolution::PerFeature;
  fail(ErrorCode::InvalidArgument, "unknown mask resolution '" + std::string(text) + "'");
}

std::size_t Mask::coefficient_count(MaskResolution resolution, const StageSpec& stage) {
  switch (resolution) {
    case MaskResolution::PerStage: return 1;
    case MaskResolution::PerChannel: return stage.channels;
    case MaskResolution::PerFeature: return stage.size();
  }
  return 0;
}

Mask::Mask(MaskResolution resolution, std::vector<StageSpec> stages, std::vector<float> values)
    : resolution_(resolution), stages_(std::move(stages)), values_(std::move(values)) {
  validate_stages(stages_);
  std::size_t total = 0;
  for (const auto& s : stages_) {
    offsets_.push_back(total);
    total += coefficient_count(resolution_, s);
  }
  if (values_.size() != total) {
    fail(ErrorCode::ShapeMismatch, "mask holds " + std::to_string(values_.size()) +
                                       " coefficients, expected " + std::to_string(total));
  }
  for (float v : values_) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite mask coefficient");
  }
}

Mask Mask::identity(MaskResolution resolution, std::vector<StageSpec> stages) {
  std::size_t total = 0;
  for (const auto& s : stages) total += coefficient_count(resolution, s);
  return Mask(resolution, std::move(stages), std::vector<float>(total, 1.0f));
}

std::span<const float> Mask::stage_coefficients(std::size_t stage) const {
  return std::span<const float>(values_).subspan(
      offsets_.at(stage), coefficient_count(resolution_, stages_[stage]));
}

void Mask::check_compatible(const FeatureSet& features) const {
  const auto& fs = features.stages();
  if (fs.size() != stages_.size()) {
    fail(ErrorCode::ShapeMismatch, "mask has " + std::to_string(stages_.size()) +
                                       " stages, features have " + std::to_string(fs.size()));
  }
  for (std::size_t s = 0; s < fs.size(); ++s) {
    if (!fs[s].same_shape(stages_[s])) {
      fail(ErrorCode::ShapeMismatch,
           "stage " + std::to_string(s) + " ('" + fs[s].name + "') is " +
               std::to_string(fs[s].channels) + "x" + std::to_string(fs[s].spatial) +
               " in features but " + std::to_string(stages_[s].channels) + "x" +
               std::to_string(stages_[s].spatial) + " in mask");
    }
  }
}

bool Mask::operator==(const Mask& other) const {
  if (resolution_ != other.resolution_ || stages_.size() != other.stages_.size()) return false;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (stages_[s].name != other.stages_[s].name || !stages_[s].same_shape(other.stages_[s])) {
      return false;
    }
  }
  return std::equal(values_.begin(), values_.end(), other.values_.begin(), other.values_.end(),
                    [](float a, float b) {
                      return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
                    });
}

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::FmriEvc: return "fmri-evc";
    case Modality::FmriIt: return "fmri-it";
    case Modality::MegEarly: return "meg-early";
    case Modality::MegLate: return "meg-late";
    case Modality::Other: return "other";
  }
  return "unknown";
}

bool is_time_resolved(Modality modality) {
  return modality == Modality::MegEarly || modality == Modality::MegLate;
}

void validate_rdm_matrix(std::span<const float> m, std::size_t n) {
  if (m.size() != n * n) {
    fail(ErrorCode::ShapeMismatch, "RDM holds " + std::to_string(m.size()) +
                                       " values, expected " + std::to_string(n * n));
  }
  auto at = [](std::size_t i, std::size_t j) {
    return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(m[i * n + j])) {
        fail(ErrorCode::NonFinite, "non-finite RDM entry at " + at(i, j));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(static_cast<double>(m[i * n + i])) > kRdmTolerance) {
      fail(ErrorCode::NonZeroDiagonal, "RDM diagonal entry " + at(i, i) + " is " +
                                           std::to_string(m[i * n + i]));
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = static_cast<double>(m[i * n + j]) - static_cast<double>(m[j * n + i]);
      if (std::abs(d) > kRdmTolerance) {
        fail(ErrorCode::Asymmetric, "RDM is asymmetric at " + at(i, j) + ": " +
                                        std::to_string(m[i * n + j]) + " vs " +
                                        std::to_string(m[j * n + i]));
      }
    }
  }
}

RdmStack::RdmStack(std::vector<std::string> image_ids, Modality modality,
                   std::vector<RdmSlice> slices)
    : image_ids_(std::move(image_ids)), modality_(modality), slices_(std::move(slices)) {
  require_unique(image_ids_, "image id");
  const std::size_t n = image_ids_.size();
  if (n < 2) fail(ErrorCode::DegenerateDataset, "an RDM stack needs at least 2 images");
  if (slices_.empty()) fail(ErrorCode::InvalidArgument, "an RDM stack needs at least 1 slice");
  const std::size_t subjects = slices_.front().subjects.size();
  if (subjects == 0) fail(ErrorCode::InvalidArgument, "an RDM stack needs at least 1 subject");

  const bool timed = slices_.front().timestamp.has_value();
  if (is_time_resolved(modality_) && !timed) {
    fail(ErrorCode::InvalidArgument, "MEG stacks require timestamped slices");
  }
  if (!timed && slices_.size() != 1) {
    fail(ErrorCode::InvalidArgument, "untimed stacks must have exactly one slice");
  }
  if (timed && (modality_ == Modality::FmriEvc || modality_ == Modality::FmriIt)) {
    fail(ErrorCode::InvalidArgument, "fMRI stacks must have a single untimed slice");
  }
  for (std::size_t k = 0; k < slices_.size(); ++k) {
    const auto& slice = slices_[k];
    if (slice.timestamp.has_value() != timed) {
      fail(ErrorCode::InvalidArgument, "either all slices carry a timestamp or none do");
    }
    if (timed) {
      if (!std::isfinite(*slice.timestamp)) {
        fail(ErrorCode::NonFinite, "slice timestamp is not finite");
      }
      if (k > 0 && !(*slice.timestamp > *slices_[k - 1].timestamp)) {
        fail(ErrorCode::InvalidArgument, "slice timestamps must be strictly increasing");
      }
    }
    if (slice.subjects.size() != subjects) {
      fail(ErrorCode::ShapeMismatch, "every slice must hold the same number of subjects");
    }
    for (const auto& m : slice.subjects) validate_rdm_matrix(m, n);
  }
}

std::span<const float> RdmStack::matrix(std::size_t slice, std::size_t subject) const {
  return slices_.at(slice).subjects.at(subject);
}

std::size_t RdmStack::nearest_slice(double time) const {
  if (!time_resolved()) return 0;
  std::size_t best = 0;
  double best_gap = std::abs(*slices_[0].timestamp - time);
  for (std::size_t k = 1; k < slices_.size(); ++k) {
    const double gap = std::abs(*slices_[k].timestamp - time);
    if (gap < best_gap) {
      best = k;
      best_gap = gap;
    }
  }
  return best;
}

std::size_t RdmStack::midpoint_slice() const {
  if (!time_resolved()) return 0;
  const double mid = 0.5 * (*slices_.front().timestamp + *slices_.back().timestamp);
  return nearest_slice(mid);
}

std::size_t pair_count(std::size_t n) {
  if (n < 2) fail(ErrorCode::DegenerateDataset, "at least 2 images are needed to form a pair");
  return n * (n - 1) / 2;
}

std::vector<PairIndex> all_pairs(std::size_t n) {
  std::vector<PairIndex> pairs;
  pairs.reserve(pair_count(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) pairs.push_back({i, j});
  }
  return pairs;
}

namespace {

std::size_t square_side(std::size_t count) {
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
  if (n * n != count) {
    fail(ErrorCode::NonSquare, "matrix with " + std::to_string(count) + " entries is not square");
  }
  if (n < 2) fail(ErrorCode::DegenerateDataset, "matrix must be at least 2x2");
  return n;
}

template <typename T>
std::vector<double> upper_triangle_impl(std::span<const T> m) {
  const std::size_t n = square_side(m.size());
  std::vector<double> out;
  out.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out.push_back(static_cast<double>(m[i * n + j]));
  }
  return out;
}

}  // namespace

std::vector<double> upper_triangle(std::span<const double> matrix) {
  return upper_triangle_impl(matrix);
}

std::vector<double> upper_triangle(std::span<const float> matrix) {
  return upper_triangle_impl(matrix);
}

SquareMatrix from_upper_triangle(std::span<const double> upper) {
  // Solve n(n-1)/2 = count for n.
  const double count = static_cast<double>(upper.size());
  const auto n = static_cast<std::size_t>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * count)) / 2.0));
  if (n < 2 || n * (n - 1) / 2 != upper.size()) {
    fail(ErrorCode::ShapeMismatch,
         std::to_string(upper.size()) + " values do not form an upper triangle");
  }
  SquareMatrix m{n, std::vector<double>(n * n, 0.0)};
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      m(i, j) = upper[k];
      m(j, i) = upper[k];
    }
  }
  return m;
}

}  // namespace hyperagg
