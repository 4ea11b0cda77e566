#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hyperagg/types.hpp"

namespace hyperagg {

enum class LossKind { L1, MSE };
enum class NoiseConvention { Population, Sample };

std::string_view to_string(LossKind kind);
LossKind parse_loss(std::string_view text);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 40;  // image pairs per step
  std::size_t epochs = 15;
  LossKind loss = LossKind::L1;
  bool use_reliability_weights = false;
  MaskResolution resolution = MaskResolution::PerChannel;
  double val_fraction = 0.10;
  std::uint64_t seed = 0;
  bool meg_gaussian_sampling = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_alpha = 0.25;
  double weight_exponent = 1.0;
  NoiseConvention noise_convention = NoiseConvention::Population;

  /// Throws InvalidArgument on out-of-range settings.
  void validate() const;
};

/// Standard deviation across subjects of entry (i, j) in `slice`.
double compute_noise(const RdmStack& target, PairIndex pair, std::size_t slice,
                     NoiseConvention convention = NoiseConvention::Population);

/// w = (1 / (noise + alpha * mean_noise)) ^ exponent
double reliability_weight(double noise, double mean_noise, double alpha = 0.25,
                          double exponent = 1.0);

/// weight * mean_k |predicted - target_k| (L1) or the squared analogue (MSE).
///
/// Residuals are taken against the prediction rounded to float32, the
/// precision targets are stored at, so a prediction that reproduces a stored
/// target contributes exactly zero loss and zero gradient.
double pair_loss(double predicted, std::span<const double> targets, double weight, LossKind kind);

/// d(pair_loss)/d(predicted); the L1 subgradient at a zero residual is 0.
double pair_loss_derivative(double predicted, std::span<const double> targets, double weight,
                            LossKind kind);

/// Draws a timestamp from a Gaussian centred on the recorded interval
/// (sigma = interval length * sigma_fraction), redrawing until it lands
/// inside the interval, and returns the nearest slice.
std::size_t sample_meg_slice(const RdmStack& stack, std::mt19937_64& rng,
                             double sigma_fraction = 0.25);

/// Pair-level train/validation split: exactly round(val_fraction * total)
/// entries are flagged true (validation), chosen uniformly for `seed`.
std::vector<bool> split_labels(std::size_t total, double val_fraction, std::uint64_t seed);

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t size) {
    return {std::vector<double>(size, 0.0), std::vector<double>(size, 0.0), 0};
  }
};

/// One bias-corrected Adam update applied in place to the mask coefficients.
void adam_step(Mask& mask, std::span<const double> gradient, AdamState& state,
               const TrainConfig& config);

/// One supervision source: a feature set joined by image id to an RDM stack.
struct Dataset {
  std::shared_ptr<const FeatureSet> features;
  RdmStack targets;
  // For every RDM image, the feature rows that may stand in for it. More than
  // one entry means crop variants ("<id>#cropK"), sampled per step.
  std::vector<std::vector<std::size_t>> feature_rows;
  // Per slice, one weight per upper-triangle pair of the RDM.
  std::vector<std::vector<double>> weights;
  std::vector<double> mean_noise;  // per slice, over training pairs

  std::size_t pair_slot(PairIndex pair) const;
};

/// Feature rows for each id: the exact id, else every "<id>#cropK" variant.
/// Returns nullopt if some id has no row.
std::optional<std::vector<std::vector<std::size_t>>> join_feature_rows(
    const FeatureSet& features, std::span<const std::string> ids);

struct CorpusPair {
  std::uint32_t dataset = 0;
  PairIndex pair;  // indices into the dataset's RDM image list
  bool validation = false;
};

/// All datasets concatenated into one flat list of image pairs.
class TrainingCorpus {
 public:
  TrainingCorpus() = default;

  /// Joins the RDM stack's image ids against `features`; throws IdMismatch
  /// if an id has no feature row.
  void add(std::shared_ptr<const FeatureSet> features, RdmStack targets);

  const std::vector<Dataset>& datasets() const { return datasets_; }
  const std::vector<CorpusPair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  std::size_t validation_count() const;

  /// Labels pairs train/validation; requires at least 10 pairs.
  void split(double val_fraction, std::uint64_t seed);

  /// Fills per-pair weights. With `enabled` false every weight is 1.0;
  /// otherwise mean noise comes from the training pairs of each dataset and
  /// slice.
  void compute_weights(bool enabled, const TrainConfig& config);

 private:
  std::vector<Dataset> datasets_;
  std::vector<CorpusPair> pairs_;
};

/// Sum of per-pair losses and their gradient for a fixed choice of slice
/// and feature row per dataset. Used for both minibatches and full-batch
/// evaluation.
struct BatchEvaluation {
  double loss_sum = 0.0;
  std::vector<double> gradient;  // of loss_sum
};

struct PairChoice {
  std::vector<std::size_t> slice;  // per dataset
};

/// Evaluates `pairs` (indices into corpus.pairs()) at the mask. Feature rows
/// fall back to the first variant; `rng` (optional) picks among crop variants.
BatchEvaluation evaluate_pairs(const TrainingCorpus& corpus, const Mask& mask,
                               std::span<const std::size_t> pairs, const PairChoice& choice,
                               LossKind loss, bool with_gradient,
                               std::mt19937_64* rng = nullptr);

/// Slice each dataset is evaluated at outside of sampling: the midpoint
/// slice for time-resolved stacks.
PairChoice evaluation_choice(const TrainingCorpus& corpus);

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;  // mean per-pair loss over training pairs
  double val_loss = 0.0;    // mean per-pair loss over validation pairs
  double wall_time = 0.0;   // seconds since training started
};

std::string log_header();
std::string format_log_record(const EpochRecord& record);

struct TrainHooks {
  // Called for every pair that contributes to a gradient step.
  std::function<void(const CorpusPair&)> on_gradient_pair;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Mask mask;            // lowest validation loss seen, epoch 0 included
  AdamState optimizer;  // state at the selected epoch
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> log;
  Mask final_mask;  // after the last epoch
};

/// Splits the corpus, computes weights and runs minibatch Adam from the
/// identity mask. Throws Divergence if the loss becomes non-finite.
TrainResult train(TrainingCorpus& corpus, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace hyperagg
