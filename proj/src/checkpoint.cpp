#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>
#include <sstream>

#include "hyperagg/io.hpp"
#include "json.hpp"

namespace hyperagg::io {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kCheckpointKind = "hyperagg-checkpoint";

json config_to_json(const TrainConfig& c) {
  json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["loss"] = std::string(to_string(c.loss));
  j["reliability_weights"] = c.use_reliability_weights;
  j["resolution"] = std::string(to_string(c.resolution));
  j["val_fraction"] = c.val_fraction;
  j["seed"] = c.seed;
  j["meg_gaussian_sampling"] = c.meg_gaussian_sampling;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_alpha"] = c.weight_alpha;
  j["weight_exponent"] = c.weight_exponent;
  j["noise_convention"] =
      c.noise_convention == NoiseConvention::Population ? "population" : "sample";
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.loss = parse_loss(j.at("loss").get<std::string>());
  c.use_reliability_weights = j.at("reliability_weights").get<bool>();
  c.resolution = parse_resolution(j.at("resolution").get<std::string>());
  c.val_fraction = j.at("val_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.meg_gaussian_sampling = j.at("meg_gaussian_sampling").get<bool>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.weight_alpha = j.at("weight_alpha").get<double>();
  c.weight_exponent = j.at("weight_exponent").get<double>();
  const auto noise = j.at("noise_convention").get<std::string>();
  if (noise != "population" && noise != "sample") {
    fail(ErrorCode::Malformed, "unknown noise convention '" + noise + "'");
  }
  c.noise_convention =
      noise == "population" ? NoiseConvention::Population : NoiseConvention::Sample;
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const Mask& mask = ckpt.mask;
  json doc;
  doc["format"] = kCheckpointKind;
  doc["version"] = kCheckpointFormatVersion;
  doc["resolution"] = std::string(to_string(mask.resolution()));

  json stages = json::array();
  json coefficients = json::array();
  for (std::size_t s = 0; s < mask.stages().size(); ++s) {
    const auto& spec = mask.stages()[s];
    stages.push_back({{"name", spec.name}, {"channels", spec.channels}, {"spatial", spec.spatial}});
    json values = json::array();
    // float -> double is exact, and the shortest double repr reloads to the same float.
    for (float v : mask.stage_coefficients(s)) values.push_back(static_cast<double>(v));
    coefficients.push_back(std::move(values));
  }
  doc["stages"] = std::move(stages);
  doc["coefficients"] = std::move(coefficients);
  doc["optimizer"] = {{"step", ckpt.optimizer.step},
                      {"first_moment", ckpt.optimizer.first_moment},
                      {"second_moment", ckpt.optimizer.second_moment}};
  doc["config"] = config_to_json(ckpt.config);
  doc["training"] = {{"best_epoch", ckpt.best_epoch}, {"best_val_loss", ckpt.best_val_loss}};
  doc["corpus_fingerprint"] = ckpt.fingerprint;
  return doc.dump(2) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Malformed, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kCheckpointKind) {
      fail(ErrorCode::BadMagic, "not a hyperagg checkpoint");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointFormatVersion) {
      fail(ErrorCode::UnsupportedVersion,
           "unsupported checkpoint version " + std::to_string(version));
    }
    const auto resolution = parse_resolution(doc.at("resolution").get<std::string>());
    std::vector<StageSpec> stages;
    for (const auto& s : doc.at("stages")) {
      stages.push_back({s.at("name").get<std::string>(), s.at("channels").get<std::size_t>(),
                        s.at("spatial").get<std::size_t>()});
    }
    const auto& coefficients = doc.at("coefficients");
    if (coefficients.size() != stages.size()) {
      fail(ErrorCode::ShapeMismatch, "checkpoint coefficient table does not match its stages");
    }
    std::vector<float> values;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& stage_values = coefficients[s];
      if (stage_values.size() != Mask::coefficient_count(resolution, stages[s])) {
        fail(ErrorCode::ShapeMismatch,
             "checkpoint stage '" + stages[s].name + "' has the wrong coefficient count");
      }
      for (const auto& v : stage_values) values.push_back(static_cast<float>(v.get<double>()));
    }
    Mask mask(resolution, std::move(stages), std::move(values));

    AdamState state;
    const auto& opt = doc.at("optimizer");
    state.step = opt.at("step").get<std::uint64_t>();
    state.first_moment = opt.at("first_moment").get<std::vector<double>>();
    state.second_moment = opt.at("second_moment").get<std::vector<double>>();
    if (state.first_moment.size() != mask.size() || state.second_moment.size() != mask.size()) {
      fail(ErrorCode::ShapeMismatch, "checkpoint optimizer state does not match the mask");
    }

    const auto& training = doc.at("training");
    return Checkpoint{std::move(mask),
                      std::move(state),
                      config_from_json(doc.at("config")),
                      doc.at("corpus_fingerprint").get<std::string>(),
                      training.at("best_epoch").get<std::size_t>(),
                      training.at("best_val_loss").get<double>()};
  } catch (const json::exception& e) {
    fail(ErrorCode::Malformed, std::string("checkpoint is missing or mistypes a field: ") +
                                   e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto text = serialize_checkpoint(checkpoint);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_checkpoint(std::string(bytes.begin(), bytes.end()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const FeatureSet& features) {
  auto ckpt = load_checkpoint(path);
  ckpt.mask.check_compatible(features);
  return ckpt;
}

std::string fingerprint_files(std::span<const std::filesystem::path> paths) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::InvalidArgument, "SHA-256 is unavailable");
  }
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    std::array<std::uint8_t, 8> size{};
    std::uint64_t n = bytes.size();
    for (auto& b : size) {
      b = static_cast<std::uint8_t>(n & 0xFFu);
      n >>= 8;
    }
    EVP_DigestUpdate(ctx.get(), size.data(), size.size());
    EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size());
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::string hex;
  for (unsigned int k = 0; k < len; ++k) {
    char buf[3];
    std::snprintf(buf, sizeof buf, "%02x", digest[k]);
    hex += buf;
  }
  return hex;
}

}  // namespace hyperagg::io
