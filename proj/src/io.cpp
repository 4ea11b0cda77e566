#include "hyperagg/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace hyperagg::io {

namespace {

constexpr char kFeatureMagic[4] = {'A', 'G', 'F', '1'};
constexpr char kRdmMagic[4] = {'A', 'G', 'R', '1'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void le(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2,
                                                                       std::uint16_t,
                                                                       std::uint8_t>>>;
    auto u = std::bit_cast<U>(value);
    for (std::size_t k = 0; k < sizeof(U); ++k) {
      out_.push_back(static_cast<std::uint8_t>(u & 0xFFu));
      u = static_cast<U>(u >> 8);
    }
  }
  void string16(const std::string& s) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::InvalidArgument,
           "string longer than 65535 bytes: '" + s.substr(0, 32) + "...'");
    }
    le(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

// Bounds-checked cursor; every read verifies the remaining length first.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      fail(ErrorCode::Truncated, std::string("file ends inside ") + what);
    }
  }

  template <typename T>
  T le(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2,
                                                                       std::uint16_t,
                                                                       std::uint8_t>>>;
    need(sizeof(U), what);
    U u = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) {
      u = static_cast<U>(u | (static_cast<U>(data_[pos_ + k]) << (8 * k)));
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }

  std::string string16(const char* what) {
    const auto len = le<std::uint16_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  void magic(const char (&expected)[4]) {
    const std::size_t have = std::min<std::size_t>(remaining(), 4);
    if (!std::equal(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(have), expected)) {
      fail(ErrorCode::BadMagic, std::string("expected magic '") +
                                    std::string(expected, 4) + "'");
    }
    need(4, "magic");
    pos_ += 4;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// a * b, or nullopt on overflow.
std::optional<std::uint64_t> mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::nullopt;
  return a * b;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
  auto r = mul(a, b);
  if (!r) fail(ErrorCode::Malformed, std::string(what) + " overflows");
  return *r;
}

void expect_payload(const Reader& r, std::uint64_t expected, const char* what) {
  if (r.remaining() < expected) {
    fail(ErrorCode::Truncated, std::string(what) + " payload is truncated: expected " +
                                   std::to_string(expected) + " bytes, found " +
                                   std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) {
    fail(ErrorCode::Malformed, std::string(what) + " has " +
                                   std::to_string(r.remaining() - expected) + " trailing bytes");
  }
}

std::vector<std::string> read_ids(Reader& r, std::uint32_t count) {
  // Each id takes at least its 2-byte length prefix.
  r.need(checked_mul(count, 2, "image id table"), "image id table");
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) ids.push_back(r.string16("image id"));
  return ids;
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureSet& features) {
  Writer w;
  w.bytes(kFeatureMagic, 4);
  w.le(kFeatureFormatVersion);
  w.le(static_cast<std::uint32_t>(features.image_count()));
  w.le(static_cast<std::uint32_t>(features.stage_count()));
  for (const auto& s : features.stages()) {
    w.string16(s.name);
    w.le(static_cast<std::uint32_t>(s.channels));
    w.le(static_cast<std::uint32_t>(s.spatial));
  }
  for (const auto& id : features.image_ids()) w.string16(id);
  for (float v : features.data()) w.le(v);
  return w.take();
}

FeatureSet decode_features(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kFeatureMagic);
  const auto version = r.le<std::uint32_t>("header");
  if (version != kFeatureFormatVersion) {
    fail(ErrorCode::UnsupportedVersion, "unsupported AGF1 version " + std::to_string(version));
  }
  const auto images = r.le<std::uint32_t>("header");
  const auto stage_count = r.le<std::uint32_t>("header");
  if (stage_count == 0) fail(ErrorCode::Malformed, "feature file declares zero stages");
  // Each stage record takes at least 10 bytes.
  r.need(checked_mul(stage_count, 10, "stage table"), "stage table");

  std::vector<StageSpec> stages;
  std::uint64_t row = 0;
  for (std::uint32_t s = 0; s < stage_count; ++s) {
    StageSpec spec;
    spec.name = r.string16("stage name");
    spec.channels = r.le<std::uint32_t>("stage table");
    spec.spatial = r.le<std::uint32_t>("stage table");
    if (spec.channels == 0 || spec.spatial == 0) {
      fail(ErrorCode::Malformed, "stage '" + spec.name + "' has a zero dimension");
    }
    row += checked_mul(spec.channels, spec.spatial, "stage size");
    stages.push_back(std::move(spec));
  }
  auto ids = read_ids(r, images);
  const auto values = checked_mul(images, row, "payload size");
  expect_payload(r, checked_mul(values, 4, "payload size"), "feature");

  std::vector<float> data(values);
  for (auto& v : data) {
    v = r.le<float>("payload");
  }
  return FeatureSet(std::move(ids), std::move(stages), std::move(data));
}

std::vector<std::uint8_t> encode_rdms(const RdmStack& stack) {
  Writer w;
  w.bytes(kRdmMagic, 4);
  w.le(kRdmFormatVersion);
  w.le(static_cast<std::uint8_t>(stack.modality()));
  w.le(static_cast<std::uint32_t>(stack.subject_count()));
  w.le(static_cast<std::uint32_t>(stack.image_count()));
  w.le(static_cast<std::uint32_t>(stack.slice_count()));
  for (const auto& id : stack.image_ids()) w.string16(id);
  for (const auto& slice : stack.slices()) {
    w.le(slice.timestamp.value_or(std::numeric_limits<double>::quiet_NaN()));
    for (const auto& m : slice.subjects) {
      for (float v : m) w.le(v);
    }
  }
  return w.take();
}

RdmStack decode_rdms(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kRdmMagic);
  const auto version = r.le<std::uint32_t>("header");
  if (version != kRdmFormatVersion) {
    fail(ErrorCode::UnsupportedVersion, "unsupported AGR1 version " + std::to_string(version));
  }
  const auto tag = r.le<std::uint8_t>("header");
  Modality modality;
  switch (tag) {
    case 0: modality = Modality::FmriEvc; break;
    case 1: modality = Modality::FmriIt; break;
    case 2: modality = Modality::MegEarly; break;
    case 3: modality = Modality::MegLate; break;
    case 255: modality = Modality::Other; break;
    default: fail(ErrorCode::Malformed, "unknown modality tag " + std::to_string(tag));
  }
  const auto subjects = r.le<std::uint32_t>("header");
  const auto images = r.le<std::uint32_t>("header");
  const auto slice_count = r.le<std::uint32_t>("header");
  if (subjects == 0 || slice_count == 0) {
    fail(ErrorCode::Malformed, "RDM file declares zero subjects or slices");
  }
  auto ids = read_ids(r, images);

  const auto matrix_values = checked_mul(images, images, "matrix size");
  const auto slice_values = checked_mul(subjects, matrix_values, "slice size");
  const auto slice_bytes = checked_mul(slice_values, 4, "slice size") + 8;
  expect_payload(r, checked_mul(slice_count, slice_bytes, "payload size"), "RDM");

  std::vector<RdmSlice> slices(slice_count);
  for (auto& slice : slices) {
    const double t = r.le<double>("slice timestamp");
    if (!std::isnan(t)) slice.timestamp = t;
    slice.subjects.resize(subjects);
    for (auto& m : slice.subjects) {
      m.resize(matrix_values);
      for (auto& v : m) v = r.le<float>("matrix");
    }
  }
  return RdmStack(std::move(ids), modality, std::move(slices));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::OpenFailed, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::OpenFailed, "failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::OpenFailed, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::OpenFailed, "failed writing '" + path.string() + "'");
}

FeatureSet read_features(const std::filesystem::path& path) {
  return decode_features(read_file(path));
}

void write_features(const FeatureSet& features, const std::filesystem::path& path) {
  write_file(path, encode_features(features));
}

RdmStack read_rdms(const std::filesystem::path& path) { return decode_rdms(read_file(path)); }

void write_rdms(const RdmStack& stack, const std::filesystem::path& path) {
  write_file(path, encode_rdms(stack));
}

}  // namespace hyperagg::io
