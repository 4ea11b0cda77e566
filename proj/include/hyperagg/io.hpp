#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hyperagg/training.hpp"
#include "hyperagg/types.hpp"

namespace hyperagg::io {

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kRdmFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

// AGF1, little-endian:
//   "AGF1" | version u32 | images u32 | stages u32
//   per stage: name_len u16 | name utf-8 | channels u32 | spatial u32
//   per image: id_len u16 | id utf-8
//   payload: f32 ordered image, stage, channel, spatial
std::vector<std::uint8_t> encode_features(const FeatureSet& features);
FeatureSet decode_features(std::span<const std::uint8_t> bytes);
FeatureSet read_features(const std::filesystem::path& path);
void write_features(const FeatureSet& features, const std::filesystem::path& path);

// AGR1, little-endian:
//   "AGR1" | version u32 | modality u8 | subjects u32 | images u32 | slices u32
//   per image: id_len u16 | id utf-8
//   per slice: timestamp f64 (NaN when untimed) | subjects x (N x N f32, row-major)
std::vector<std::uint8_t> encode_rdms(const RdmStack& stack);
RdmStack decode_rdms(std::span<const std::uint8_t> bytes);
RdmStack read_rdms(const std::filesystem::path& path);
void write_rdms(const RdmStack& stack, const std::filesystem::path& path);

struct Checkpoint {
  Mask mask;
  AdamState optimizer;
  TrainConfig config;
  std::string fingerprint;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also throws ShapeMismatch when the mask does not fit `features`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSet& features);

/// SHA-256 (hex) over each file's size and content, in order.
std::string fingerprint_files(std::span<const std::filesystem::path> paths);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hyperagg::io
