#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyperagg/error.hpp"

namespace hyperagg {

// Shape of one backbone stage. Spatial extent is kept flattened.
struct StageSpec {
  std::string name;
  std::size_t channels = 0;
  std::size_t spatial = 0;

  std::size_t size() const { return channels * spatial; }
  bool same_shape(const StageSpec& other) const {
    return channels == other.channels && spatial == other.spatial;
  }
};

/// Frozen per-image activations for every stage.
///
/// Storage is one contiguous float32 row per image; the row is the raw
/// hypercolumn, i.e. stages concatenated in order, each stage laid out
/// channel-major then spatial.
class FeatureSet {
 public:
  FeatureSet(std::vector<std::string> image_ids, std::vector<StageSpec> stages,
             std::vector<float> data);

  std::size_t image_count() const { return image_ids_.size(); }
  std::size_t stage_count() const { return stages_.size(); }
  std::size_t embedding_length() const { return length_; }

  const std::vector<std::string>& image_ids() const { return image_ids_; }
  const std::vector<StageSpec>& stages() const { return stages_; }
  const std::vector<float>& data() const { return data_; }

  std::size_t stage_offset(std::size_t stage) const { return offsets_.at(stage); }
  std::span<const float> row(std::size_t image) const;
  std::span<const float> stage_block(std::size_t image, std::size_t stage) const;

  std::optional<std::size_t> find(std::string_view id) const;

 private:
  std::vector<std::string> image_ids_;
  std::vector<StageSpec> stages_;
  std::vector<std::size_t> offsets_;
  std::size_t length_ = 0;
  std::vector<float> data_;
};

enum class MaskResolution { PerStage, PerChannel, PerFeature };

std::string_view to_string(MaskResolution resolution);
MaskResolution parse_resolution(std::string_view text);

/// Learnable multiplicative coefficients, flattened stage after stage.
class Mask {
 public:
  Mask(MaskResolution resolution, std::vector<StageSpec> stages,
       std::vector<float> values);

  static Mask identity(MaskResolution resolution, std::vector<StageSpec> stages);

  MaskResolution resolution() const { return resolution_; }
  const std::vector<StageSpec>& stages() const { return stages_; }
  std::size_t size() const { return values_.size(); }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  std::span<const float> stage_coefficients(std::size_t stage) const;
  std::size_t stage_offset(std::size_t stage) const { return offsets_.at(stage); }

  /// Number of coefficients a stage of this shape carries at `resolution`.
  static std::size_t coefficient_count(MaskResolution resolution, const StageSpec& stage);

  /// Index into values() of the coefficient that scales element `element`
  /// (channel * spatial + position) of stage `stage`.
  std::size_t coefficient_index(std::size_t stage, std::size_t element) const {
    const std::size_t base = offsets_[stage];
    switch (resolution_) {
      case MaskResolution::PerStage:
        return base;
      case MaskResolution::PerChannel:
        return base + element / stages_[stage].spatial;
      case MaskResolution::PerFeature:
        break;
    }
    return base + element;
  }

  /// Throws ShapeMismatch unless every stage shape matches `features`.
  void check_compatible(const FeatureSet& features) const;

  bool operator==(const Mask& other) const;

 private:
  MaskResolution resolution_;
  std::vector<StageSpec> stages_;
  std::vector<std::size_t> offsets_;
  std::vector<float> values_;
};

enum class Modality : std::uint8_t {
  FmriEvc = 0,
  FmriIt = 1,
  MegEarly = 2,
  MegLate = 3,
  Other = 255,
};

std::string_view to_string(Modality modality);
bool is_time_resolved(Modality modality);

struct RdmSlice {
  std::optional<double> timestamp;
  // One row-major N x N matrix per subject.
  std::vector<std::vector<float>> subjects;
};

/// Per-subject dissimilarity matrices, optionally time-resolved.
class RdmStack {
 public:
  RdmStack(std::vector<std::string> image_ids, Modality modality,
           std::vector<RdmSlice> slices);

  std::size_t image_count() const { return image_ids_.size(); }
  std::size_t subject_count() const { return slices_.front().subjects.size(); }
  std::size_t slice_count() const { return slices_.size(); }

  const std::vector<std::string>& image_ids() const { return image_ids_; }
  Modality modality() const { return modality_; }
  const std::vector<RdmSlice>& slices() const { return slices_; }
  bool time_resolved() const { return slices_.front().timestamp.has_value(); }

  std::span<const float> matrix(std::size_t slice, std::size_t subject) const;
  float value(std::size_t slice, std::size_t subject, std::size_t i, std::size_t j) const {
    return slices_[slice].subjects[subject][i * image_ids_.size() + j];
  }

  /// Slice whose timestamp is closest to the middle of the recorded interval.
  std::size_t midpoint_slice() const;
  /// Slice closest to `time`; ties resolve to the earlier slice.
  std::size_t nearest_slice(double time) const;

 private:
  std::vector<std::string> image_ids_;
  Modality modality_;
  std::vector<RdmSlice> slices_;
};

inline constexpr double kRdmTolerance = 1e-5;

/// Throws Asymmetric / NonZeroDiagonal / NonFinite with entry coordinates.
void validate_rdm_matrix(std::span<const float> matrix, std::size_t n);

struct PairIndex {
  std::uint32_t i = 0;
  std::uint32_t j = 0;

  bool operator==(const PairIndex&) const = default;
};

std::size_t pair_count(std::size_t n);

/// All pairs i < j in row-major upper-triangle order.
std::vector<PairIndex> all_pairs(std::size_t n);

/// Dense square matrix of doubles, row-major.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
};

std::vector<double> upper_triangle(std::span<const double> matrix);
std::vector<double> upper_triangle(std::span<const float> matrix);
inline std::vector<double> upper_triangle(const SquareMatrix& matrix) {
  return upper_triangle(std::span<const double>(matrix.values));
}

/// Symmetric zero-diagonal matrix whose upper triangle is `upper`.
SquareMatrix from_upper_triangle(std::span<const double> upper);

}  // namespace hyperagg
