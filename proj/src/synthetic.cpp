#include "hyperagg/synthetic.hpp"

#include <cmath>

namespace hyperagg::synthetic {

std::vector<StageSpec> uniform_stages(std::size_t count, std::size_t channels,
                                      std::size_t spatial) {
  std::vector<StageSpec> stages;
  for (std::size_t s = 0; s < count; ++s) {
    stages.push_back({"layer" + std::to_string(s), channels, spatial});
  }
  return stages;
}

std::vector<std::string> image_ids(std::size_t count, const std::string& prefix) {
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < count; ++k) ids.push_back(prefix + std::to_string(k));
  return ids;
}

FeatureSet random_features(std::mt19937_64& rng, std::size_t images,
                           std::vector<StageSpec> stages, const std::string& prefix) {
  std::size_t length = 0;
  for (const auto& s : stages) length += s.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> data(images * length);
  for (auto& v : data) v = static_cast<float>(normal(rng));
  return FeatureSet(image_ids(images, prefix), std::move(stages), std::move(data));
}

Mask log_normal_mask(std::mt19937_64& rng, MaskResolution resolution,
                     std::vector<StageSpec> stages, double sigma) {
  Mask mask = Mask::identity(resolution, std::move(stages));
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : mask.values()) v = static_cast<float>(std::exp(normal(rng)));
  return mask;
}

RdmStack subject_stack(const SquareMatrix& base, std::vector<std::string> ids,
                       std::size_t subjects, double noise_std, std::mt19937_64& rng,
                       Modality modality) {
  const std::size_t n = base.n;
  std::normal_distribution<double> normal(0.0, noise_std > 0.0 ? noise_std : 1.0);
  RdmSlice slice;
  if (is_time_resolved(modality)) slice.timestamp = 0.0;
  for (std::size_t k = 0; k < subjects; ++k) {
    std::vector<float> m(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double noise = noise_std > 0.0 ? normal(rng) : 0.0;
        const auto v = static_cast<float>(base(i, j) + noise);
        m[i * n + j] = v;
        m[j * n + i] = v;
      }
    }
    slice.subjects.push_back(std::move(m));
  }
  return RdmStack(std::move(ids), modality, {std::move(slice)});
}

}  // namespace hyperagg::synthetic
