#include "hyperagg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hyperagg/encoder.hpp"

namespace hyperagg {

std::string_view to_string(LossKind kind) {
  return kind == LossKind::L1 ? "l1" : "mse";
}

LossKind parse_loss(std::string_view text) {
  if (text == "l1") return LossKind::L1;
  if (text == "mse") return LossKind::MSE;
  fail(ErrorCode::InvalidArgument, "unknown loss '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be > 0");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    fail(ErrorCode::InvalidArgument, "validation fraction must lie in (0, 1)");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail(ErrorCode::InvalidArgument, "Adam epsilon must be > 0");
}

double compute_noise(const RdmStack& target, PairIndex pair, std::size_t slice,
                     NoiseConvention convention) {
  const std::size_t subjects = target.subject_count();
  if (subjects < 2) fail(ErrorCode::UndefinedNoise, "noise needs at least 2 subjects");
  double mean = 0.0;
  for (std::size_t k = 0; k < subjects; ++k) mean += target.value(slice, k, pair.i, pair.j);
  mean /= static_cast<double>(subjects);
  double ss = 0.0;
  for (std::size_t k = 0; k < subjects; ++k) {
    const double d = target.value(slice, k, pair.i, pair.j) - mean;
    ss += d * d;
  }
  const double dof = convention == NoiseConvention::Population
                         ? static_cast<double>(subjects)
                         : static_cast<double>(subjects - 1);
  return std::sqrt(ss / dof);
}

double reliability_weight(double noise, double mean_noise, double alpha, double exponent) {
  if (!(noise >= 0.0)) fail(ErrorCode::InvalidArgument, "noise must be >= 0");
  const double denom = noise + alpha * mean_noise;
  if (!(denom > 0.0)) {
    fail(ErrorCode::DegenerateDataset,
         "reliability weight is undefined: noise and mean noise are both zero");
  }
  return std::pow(1.0 / denom, exponent);
}

namespace {

double residual(double predicted, double target) {
  return static_cast<double>(static_cast<float>(predicted)) - target;
}

}  // namespace

double pair_loss(double predicted, std::span<const double> targets, double weight, LossKind kind) {
  if (targets.empty()) fail(ErrorCode::InvalidArgument, "pair loss needs at least one target");
  double sum = 0.0;
  for (double t : targets) {
    const double r = residual(predicted, t);
    sum += kind == LossKind::L1 ? std::abs(r) : r * r;
  }
  return weight * sum / static_cast<double>(targets.size());
}

double pair_loss_derivative(double predicted, std::span<const double> targets, double weight,
                            LossKind kind) {
  if (targets.empty()) fail(ErrorCode::InvalidArgument, "pair loss needs at least one target");
  double sum = 0.0;
  for (double t : targets) {
    const double r = residual(predicted, t);
    if (kind == LossKind::L1) {
      sum += r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    } else {
      sum += 2.0 * r;
    }
  }
  return weight * sum / static_cast<double>(targets.size());
}

std::size_t sample_meg_slice(const RdmStack& stack, std::mt19937_64& rng, double sigma_fraction) {
  if (!stack.time_resolved()) {
    fail(ErrorCode::NotTimeResolved, "timestamp sampling needs a time-resolved RDM stack");
  }
  if (stack.slice_count() == 1) return 0;
  const double t_min = *stack.slices().front().timestamp;
  const double t_max = *stack.slices().back().timestamp;
  const double sigma = (t_max - t_min) * sigma_fraction;
  if (!(sigma > 0.0)) return stack.midpoint_slice();
  std::normal_distribution<double> draw(0.5 * (t_min + t_max), sigma);
  double t = draw(rng);
  while (t < t_min || t > t_max) t = draw(rng);
  return stack.nearest_slice(t);
}

std::vector<bool> split_labels(std::size_t total, double val_fraction, std::uint64_t seed) {
  if (total < 10) {
    fail(ErrorCode::DegenerateDataset,
         "splitting needs at least 10 pairs, got " + std::to_string(total));
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    fail(ErrorCode::InvalidArgument, "validation fraction must lie in (0, 1)");
  }
  const auto n_val =
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> labels(total, false);
  for (std::size_t k = 0; k < n_val; ++k) labels[order[k]] = true;
  return labels;
}

void adam_step(Mask& mask, std::span<const double> gradient, AdamState& state,
               const TrainConfig& config) {
  auto values = mask.values();
  if (gradient.size() != values.size() || state.first_moment.size() != values.size() ||
      state.second_moment.size() != values.size()) {
    fail(ErrorCode::ShapeMismatch, "Adam state does not match the mask");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.adam_beta1, t);
  const double correction2 = 1.0 - std::pow(config.adam_beta2, t);
  for (std::size_t c = 0; c < values.size(); ++c) {
    const double g = gradient[c];
    auto& m = state.first_moment[c];
    auto& v = state.second_moment[c];
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
    v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    const double update = config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    values[c] = static_cast<float>(static_cast<double>(values[c]) - update);
  }
}

std::size_t Dataset::pair_slot(PairIndex pair) const {
  const std::size_t n = targets.image_count();
  const std::size_t i = pair.i;
  return i * n - i * (i + 1) / 2 + (pair.j - i - 1);
}

std::optional<std::vector<std::vector<std::size_t>>> join_feature_rows(
    const FeatureSet& features, std::span<const std::string> ids) {
  const auto& all = features.image_ids();
  std::vector<std::vector<std::size_t>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    std::vector<std::size_t> rows;
    if (auto exact = features.find(id)) {
      rows.push_back(*exact);
    } else {
      const std::string prefix = id + "#crop";
      for (std::size_t r = 0; r < all.size(); ++r) {
        if (all[r].size() > prefix.size() && all[r].compare(0, prefix.size(), prefix) == 0) {
          rows.push_back(r);
        }
      }
    }
    if (rows.empty()) return std::nullopt;
    out.push_back(std::move(rows));
  }
  return out;
}

void TrainingCorpus::add(std::shared_ptr<const FeatureSet> features, RdmStack targets) {
  if (!features) fail(ErrorCode::InvalidArgument, "dataset has no features");
  if (!datasets_.empty()) {
    const auto& ref = datasets_.front().features->stages();
    const auto& st = features->stages();
    bool same = ref.size() == st.size();
    for (std::size_t s = 0; same && s < st.size(); ++s) same = ref[s].same_shape(st[s]);
    if (!same) {
      fail(ErrorCode::ShapeMismatch, "all feature sets in a corpus must share stage shapes");
    }
  }

  auto rows = join_feature_rows(*features, targets.image_ids());
  if (!rows) {
    for (const auto& id : targets.image_ids()) {
      if (!join_feature_rows(*features, std::span(&id, 1))) {
        fail(ErrorCode::IdMismatch, "RDM image '" + id + "' has no feature row");
      }
    }
  }
  Dataset ds{features, std::move(targets), std::move(*rows), {}, {}};

  const auto dataset_index = static_cast<std::uint32_t>(datasets_.size());
  for (const auto& p : all_pairs(ds.targets.image_count())) {
    pairs_.push_back({dataset_index, p, false});
  }
  datasets_.push_back(std::move(ds));
}

std::size_t TrainingCorpus::validation_count() const {
  return static_cast<std::size_t>(
      std::count_if(pairs_.begin(), pairs_.end(),
                    [](const CorpusPair& p) { return p.validation; }));
}

void TrainingCorpus::split(double val_fraction, std::uint64_t seed) {
  const auto labels = split_labels(pairs_.size(), val_fraction, seed);
  for (std::size_t k = 0; k < pairs_.size(); ++k) pairs_[k].validation = labels[k];
}

void TrainingCorpus::compute_weights(bool enabled, const TrainConfig& config) {
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    auto& ds = datasets_[d];
    const std::size_t n_pairs = pair_count(ds.targets.image_count());
    ds.weights.assign(ds.targets.slice_count(), std::vector<double>(n_pairs, 1.0));
    ds.mean_noise.assign(ds.targets.slice_count(), 0.0);
    if (!enabled) continue;

    std::vector<const CorpusPair*> train_pairs;
    std::vector<const CorpusPair*> every_pair;
    for (const auto& p : pairs_) {
      if (p.dataset != d) continue;
      every_pair.push_back(&p);
      if (!p.validation) train_pairs.push_back(&p);
    }
    const auto& reference = train_pairs.empty() ? every_pair : train_pairs;

    for (std::size_t s = 0; s < ds.targets.slice_count(); ++s) {
      std::vector<double> noise(n_pairs);
      for (const auto* p : every_pair) {
        noise[ds.pair_slot(p->pair)] =
            compute_noise(ds.targets, p->pair, s, config.noise_convention);
      }
      double sum = 0.0;
      for (const auto* p : reference) sum += noise[ds.pair_slot(p->pair)];
      ds.mean_noise[s] = sum / static_cast<double>(reference.size());
      for (const auto* p : every_pair) {
        const std::size_t slot = ds.pair_slot(p->pair);
        ds.weights[s][slot] = reliability_weight(noise[slot], ds.mean_noise[s],
                                                 config.weight_alpha, config.weight_exponent);
      }
    }
  }
}

PairChoice evaluation_choice(const TrainingCorpus& corpus) {
  PairChoice choice;
  for (const auto& ds : corpus.datasets()) choice.slice.push_back(ds.targets.midpoint_slice());
  return choice;
}

BatchEvaluation evaluate_pairs(const TrainingCorpus& corpus, const Mask& mask,
                               std::span<const std::size_t> pairs, const PairChoice& choice,
                               LossKind loss, bool with_gradient, std::mt19937_64* rng) {
  BatchEvaluation out;
  std::vector<double> pair_grad;
  if (with_gradient) {
    out.gradient.assign(mask.size(), 0.0);
    pair_grad.resize(mask.size());
  }
  std::vector<double> targets;
  for (std::size_t index : pairs) {
    const auto& cp = corpus.pairs().at(index);
    const auto& ds = corpus.datasets()[cp.dataset];
    const std::size_t slice = choice.slice.at(cp.dataset);

    auto pick = [&](std::uint32_t image) -> std::uint32_t {
      const auto& rows = ds.feature_rows[image];
      if (rows.size() == 1 || rng == nullptr) return static_cast<std::uint32_t>(rows.front());
      std::uniform_int_distribution<std::size_t> u(0, rows.size() - 1);
      return static_cast<std::uint32_t>(rows[u(*rng)]);
    };
    const PairIndex rows{pick(cp.pair.i), pick(cp.pair.j)};

    targets.clear();
    for (std::size_t k = 0; k < ds.targets.subject_count(); ++k) {
      targets.push_back(ds.targets.value(slice, k, cp.pair.i, cp.pair.j));
    }
    const double weight = ds.weights.empty() ? 1.0 : ds.weights[slice][ds.pair_slot(cp.pair)];

    double predicted = 0.0;
    if (with_gradient) {
      std::fill(pair_grad.begin(), pair_grad.end(), 0.0);
      predicted = accumulate_pair_gradient(*ds.features, mask, rows, 1.0, pair_grad);
      const double dl = pair_loss_derivative(predicted, targets, weight, loss);
      if (dl != 0.0) {
        for (std::size_t c = 0; c < pair_grad.size(); ++c) out.gradient[c] += dl * pair_grad[c];
      }
    } else {
      predicted = pair_dissimilarity(*ds.features, mask, rows);
    }
    out.loss_sum += pair_loss(predicted, targets, weight, loss);
  }
  return out;
}

std::string log_header() { return "epoch\tstep\ttrain_loss\tval_loss\twall_time_s"; }

std::string format_log_record(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.9g\t%.9g\t%.3f", r.epoch,
                static_cast<unsigned long long>(r.step), r.train_loss, r.val_loss, r.wall_time);
  return buf;
}

namespace {

double mean_loss(const TrainingCorpus& corpus, const Mask& mask,
                 const std::vector<std::size_t>& pairs, const PairChoice& choice, LossKind loss) {
  if (pairs.empty()) return 0.0;
  const auto eval = evaluate_pairs(corpus, mask, pairs, choice, loss, false);
  return eval.loss_sum / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult train(TrainingCorpus& corpus, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (corpus.datasets().empty()) fail(ErrorCode::InvalidArgument, "training corpus is empty");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  corpus.split(config.val_fraction, config.seed);
  corpus.compute_weights(config.use_reliability_weights, config);

  std::vector<std::size_t> train_pairs;
  std::vector<std::size_t> val_pairs;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    (corpus.pairs()[k].validation ? val_pairs : train_pairs).push_back(k);
  }

  Mask mask = Mask::identity(config.resolution, corpus.datasets().front().features->stages());
  AdamState state = AdamState::zeros(mask.size());
  const PairChoice eval_choice = evaluation_choice(corpus);

  TrainResult result{mask, state, 0, 0.0, {}, mask};
  auto record_epoch = [&](std::size_t epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = state.step;
    rec.train_loss = mean_loss(corpus, mask, train_pairs, eval_choice, config.loss);
    rec.val_loss = mean_loss(corpus, mask, val_pairs, eval_choice, config.loss);
    rec.wall_time = elapsed();
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      fail(ErrorCode::Divergence, "loss became non-finite at epoch " + std::to_string(epoch));
    }
    result.log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    const double selection = val_pairs.empty() ? rec.train_loss : rec.val_loss;
    if (epoch == 0 || selection < result.best_val_loss) {
      result.best_val_loss = selection;
      result.best_epoch = epoch;
      result.mask = mask;
      result.optimizer = state;
    }
  };

  record_epoch(0);

  std::seed_seq seq{config.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  PairChoice choice = eval_choice;
  std::vector<std::size_t> order = train_pairs;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      if (config.meg_gaussian_sampling) {
        for (std::size_t d = 0; d < corpus.datasets().size(); ++d) {
          const auto& stack = corpus.datasets()[d].targets;
          if (stack.time_resolved()) choice.slice[d] = sample_meg_slice(stack, rng);
        }
      }
      if (hooks.on_gradient_pair) {
        for (std::size_t index : batch) hooks.on_gradient_pair(corpus.pairs()[index]);
      }
      auto eval = evaluate_pairs(corpus, mask, batch, choice, config.loss, true, &rng);
      const double inv = 1.0 / static_cast<double>(batch.size());
      bool finite = std::isfinite(eval.loss_sum);
      for (auto& g : eval.gradient) {
        g *= inv;
        finite = finite && std::isfinite(g);
      }
      if (!finite) {
        fail(ErrorCode::Divergence, "non-finite loss or gradient at epoch " +
                                        std::to_string(epoch) + ", step " +
                                        std::to_string(state.step + 1));
      }
      adam_step(mask, eval.gradient, state, config);
    }
    record_epoch(epoch);
  }
  result.final_mask = mask;
  return result;
}

}  // namespace hyperagg
