#include "hyperagg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "hyperagg/gradcheck.hpp"
#include "hyperagg/io.hpp"
#include "hyperagg/similarity.hpp"
#include "hyperagg/training.hpp"

namespace hyperagg::cli {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, const char* format = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

bool parse_switch(const std::string& text) {
  if (text == "on") return true;
  if (text == "off") return false;
  fail(ErrorCode::InvalidArgument, "expected 'on' or 'off', got '" + text + "'");
}

// Feature row standing in for each RDM image: the exact id, else its first
// crop variant.
std::vector<std::size_t> join_rows(const FeatureSet& features,
                                   const std::vector<std::string>& ids) {
  const auto joined = join_feature_rows(features, ids);
  if (!joined) fail(ErrorCode::IdMismatch, "RDM images are missing from the feature file");
  std::vector<std::size_t> rows;
  for (const auto& variants : *joined) rows.push_back(variants.front());
  return rows;
}

std::size_t resolve_slice(const RdmStack& stack, const std::string& text) {
  if (text.empty()) return stack.midpoint_slice();
  const bool is_index = text.find_first_not_of("0123456789") == std::string::npos;
  if (is_index) {
    const auto index = static_cast<std::size_t>(std::stoull(text));
    if (index >= stack.slice_count()) {
      fail(ErrorCode::InvalidArgument, "slice " + text + " out of range (stack has " +
                                           std::to_string(stack.slice_count()) + " slices)");
    }
    return index;
  }
  double time = 0.0;
  try {
    time = std::stod(text);
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "--slice expects an index or a time, got '" + text + "'");
  }
  if (!stack.time_resolved()) {
    fail(ErrorCode::NotTimeResolved, "--slice given as a time but the stack is not timestamped");
  }
  return stack.nearest_slice(time);
}

struct TrainArgs {
  std::vector<std::string> features;
  std::vector<std::string> rdms;
  std::string resolution = "per-channel";
  std::size_t epochs = 15;
  double lr = 0.01;
  std::size_t batch = 40;
  std::string loss = "l1";
  std::string weights = "off";
  std::string meg_sampling = "off";
  double val_frac = 0.10;
  std::uint64_t seed = 0;
  std::string out;
  std::string log;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  config.resolution = parse_resolution(a.resolution);
  config.epochs = a.epochs;
  config.learning_rate = a.lr;
  config.batch_size = a.batch;
  config.loss = parse_loss(a.loss);
  config.use_reliability_weights = parse_switch(a.weights);
  config.meg_gaussian_sampling = parse_switch(a.meg_sampling);
  config.val_fraction = a.val_frac;
  config.seed = a.seed;
  config.validate();

  std::vector<std::shared_ptr<const FeatureSet>> feature_sets;
  for (const auto& path : a.features) {
    feature_sets.push_back(std::make_shared<const FeatureSet>(io::read_features(path)));
  }
  TrainingCorpus corpus;
  bool any_timed = false;
  for (const auto& path : a.rdms) {
    auto stack = io::read_rdms(path);
    any_timed = any_timed || stack.time_resolved();
    std::shared_ptr<const FeatureSet> match;
    for (const auto& fs : feature_sets) {
      if (join_feature_rows(*fs, stack.image_ids())) {
        match = fs;
        break;
      }
    }
    if (!match) {
      fail(ErrorCode::IdMismatch, "no feature file covers every image of '" + path + "'");
    }
    corpus.add(match, std::move(stack));
  }
  if (config.meg_gaussian_sampling && !any_timed) {
    err << "warning: --meg-sampling on has no effect without time-resolved RDMs\n";
  }

  const std::string log_path = a.log.empty() ? a.out + ".log.tsv" : a.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail(ErrorCode::OpenFailed, "cannot open log '" + log_path + "'");
  log << log_header() << '\n';
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { log << format_log_record(r) << '\n'; };

  const auto result = train(corpus, config, hooks);

  std::vector<fs::path> inputs(a.features.begin(), a.features.end());
  inputs.insert(inputs.end(), a.rdms.begin(), a.rdms.end());
  io::Checkpoint ckpt{result.mask,        result.optimizer,      config,
                      io::fingerprint_files(inputs), result.best_epoch, result.best_val_loss};
  io::save_checkpoint(ckpt, a.out);

  const auto& last = result.log.back();
  out << "pairs: " << corpus.size() - corpus.validation_count() << " train, "
      << corpus.validation_count() << " validation\n";
  out << "final train_loss " << fixed(last.train_loss, "%.6g") << " val_loss "
      << fixed(last.val_loss, "%.6g") << "\n";
  out << "best epoch " << result.best_epoch << " (val_loss "
      << fixed(result.best_val_loss, "%.6g") << ") -> " << a.out << "\n";
  return kOk;
}

int cmd_predict(const std::string& features_path, const std::string& ckpt_path,
                const std::string& images, const std::string& out_path, std::ostream& out) {
  const auto features = io::read_features(features_path);
  const auto ckpt = io::load_checkpoint(ckpt_path, features);

  std::vector<std::string> ids;
  if (images == "all") {
    ids = features.image_ids();
  } else {
    std::stringstream ss(images);
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (!id.empty()) ids.push_back(id);
    }
  }
  std::vector<std::size_t> subset;
  for (const auto& id : ids) {
    auto row = features.find(id);
    if (!row) fail(ErrorCode::IdMismatch, "unknown image id '" + id + "'");
    subset.push_back(*row);
  }
  if (subset.size() < 2) fail(ErrorCode::DegenerateDataset, "prediction needs at least 2 images");

  const auto rdm = predicted_rdm(features, ckpt.mask, subset);
  RdmSlice slice;
  slice.subjects.emplace_back(rdm.values.begin(), rdm.values.end());
  io::write_rdms(RdmStack(ids, Modality::Other, {std::move(slice)}), out_path);
  out << "wrote " << ids.size() << "x" << ids.size() << " predicted RDM to " << out_path << "\n";
  return kOk;
}

int cmd_eval(const std::string& features_path, const std::string& ckpt_path,
             const std::string& rdms_path, const std::string& slice_text,
             std::optional<double> ceiling, const std::string& format, std::ostream& out) {
  const auto features = io::read_features(features_path);
  const auto ckpt = io::load_checkpoint(ckpt_path, features);
  const auto stack = io::read_rdms(rdms_path);
  const std::size_t slice = resolve_slice(stack, slice_text);

  const auto rows = join_rows(features, stack.image_ids());
  const auto rdm = predicted_rdm(features, ckpt.mask, rows);
  const auto report = score(rdm, stack.image_ids(), stack, slice, ceiling);

  if (format == "csv") {
    out << "metric,subject,value\n";
    for (std::size_t k = 0; k < report.per_subject_r2.size(); ++k) {
      out << "r2," << k << "," << fixed(report.per_subject_r2[k], "%.9g") << "\n";
    }
    out << "noise_ceiling,," << fixed(report.noise_ceiling, "%.9g") << "\n";
    out << "normalized_score_percent,," << fixed(report.normalized_score_percent, "%.9g")
        << "\n";
  } else {
    out << "slice " << slice;
    if (stack.time_resolved()) out << " (t=" << *stack.slices()[slice].timestamp << ")";
    out << "\n";
    for (std::size_t k = 0; k < report.per_subject_r2.size(); ++k) {
      out << "subject " << k << "  r2 " << fixed(report.per_subject_r2[k]) << "\n";
    }
    out << "noise ceiling (leave-one-out squared Spearman) " << fixed(report.noise_ceiling)
        << "\n";
    out << "noise-normalized R2 " << fixed(report.normalized_score_percent, "%.4f") << " %\n";
  }
  return kOk;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& format, std::ostream& out) {
  const auto ckpt = io::load_checkpoint(ckpt_path);
  const auto summary = summarize_stages(ckpt.mask);
  auto opt = [](const std::optional<double>& v) {
    return v ? fixed(*v, "%.9g") : std::string();
  };
  if (format == "csv") {
    out << "stage,name,channels,mean,ci_low,ci_high\n";
    for (std::size_t s = 0; s < summary.size(); ++s) {
      const auto& st = summary[s];
      out << s << "," << st.name << "," << st.channels << "," << fixed(st.mean, "%.9g") << ","
          << opt(st.ci_low) << "," << opt(st.ci_high) << "\n";
    }
  } else {
    out << "resolution " << to_string(ckpt.mask.resolution()) << "\n";
    for (const auto& st : summary) {
      out << st.name << "  channels " << st.channels << "  mean " << fixed(st.mean);
      if (st.ci_low) out << "  95% CI [" << fixed(*st.ci_low) << ", " << fixed(*st.ci_high) << "]";
      out << "\n";
    }
  }
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  const auto report = run_gradcheck(options);
  for (const auto& c : report.cases) {
    out << "case " << c.index << " " << to_string(c.resolution) << " stages " << c.stages
        << " coefficients " << c.coefficients << " max_rel_err "
        << fixed(c.max_relative_error, "%.3e") << (c.passed ? " ok" : " FAIL") << "\n";
  }
  out << (report.passed ? "PASS" : "FAIL") << ": " << report.cases.size()
      << " instances, worst relative error " << fixed(report.worst_error, "%.3e")
      << ", tolerance " << fixed(options.tolerance, "%.1e") << "\n";
  return report.passed ? kOk : kCheckFailed;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Divergence: return kDivergence;
    case ErrorCode::InvalidArgument: return kUsage;
    default: return kDataError;
  }
}

}  // namespace

std::vector<StageSummary> summarize_stages(const Mask& mask) {
  std::vector<StageSummary> out;
  for (std::size_t s = 0; s < mask.stages().size(); ++s) {
    const auto& spec = mask.stages()[s];
    const auto coeffs = mask.stage_coefficients(s);
    StageSummary st;
    st.name = spec.name;
    st.channels = spec.channels;
    if (mask.resolution() == MaskResolution::PerStage) {
      st.mean = coeffs[0];
      out.push_back(st);
      continue;
    }
    std::vector<double> per_channel(spec.channels, 0.0);
    const std::size_t group = mask.resolution() == MaskResolution::PerFeature ? spec.spatial : 1;
    for (std::size_t c = 0; c < spec.channels; ++c) {
      for (std::size_t p = 0; p < group; ++p) per_channel[c] += coeffs[c * group + p];
      per_channel[c] /= static_cast<double>(group);
    }
    const double n = static_cast<double>(spec.channels);
    st.mean = std::accumulate(per_channel.begin(), per_channel.end(), 0.0) / n;
    if (spec.channels > 1) {
      double ss = 0.0;
      for (double v : per_channel) ss += (v - st.mean) * (v - st.mean);
      const double half = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
      st.ci_low = st.mean - half;
      st.ci_high = st.mean + half;
    }
    out.push_back(st);
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned multi-stage feature aggregation fitted to RDMs", "hyperagg"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fit mask coefficients to RDM stacks");
  train_cmd->add_option("--features", train_args.features, "AGF1 feature files")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--rdms", train_args.rdms, "AGR1 RDM files")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--resolution", train_args.resolution)
      ->check(CLI::IsMember({"per-stage", "per-channel", "per-feature"}));
  train_cmd->add_option("--epochs", train_args.epochs);
  train_cmd->add_option("--lr", train_args.lr);
  train_cmd->add_option("--batch", train_args.batch, "image pairs per step");
  train_cmd->add_option("--loss", train_args.loss)->check(CLI::IsMember({"l1", "mse"}));
  train_cmd->add_option("--weights", train_args.weights, "reliability weights")
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--meg-sampling", train_args.meg_sampling)
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--val-frac", train_args.val_frac);
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--log", train_args.log, "training log (default <out>.log.tsv)");

  std::string features_path;
  std::string ckpt_path;
  std::string images = "all";
  std::string out_path;
  auto* predict_cmd = app.add_subcommand("predict", "write the model RDM for a set of images");
  predict_cmd->add_option("--features", features_path)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--images", images, "comma-separated ids or 'all'");
  predict_cmd->add_option("--out", out_path)->required();

  std::string rdms_path;
  std::string slice_text;
  std::optional<double> ceiling;
  std::string format = "text";
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint against an RDM stack");
  eval_cmd->add_option("--features", features_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--rdms", rdms_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--slice", slice_text, "slice index, or a time (e.g. 0.15)");
  eval_cmd->add_option("--ceiling", ceiling, "override the noise ceiling");
  eval_cmd->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));

  auto* inspect_cmd = app.add_subcommand("inspect-mask", "per-stage coefficient summary");
  inspect_cmd->add_option("--ckpt", ckpt_path)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));

  GradcheckOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  grad_cmd->add_option("--seed", grad.seed);
  grad_cmd->add_option("--instances", grad.instances);
  grad_cmd->add_flag("--corrupt-gradient", grad.corrupt_gradient)->group("");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out, err);
    if (*predict_cmd) return cmd_predict(features_path, ckpt_path, images, out_path, out);
    if (*eval_cmd) {
      return cmd_eval(features_path, ckpt_path, rdms_path, slice_text, ceiling, format, out);
    }
    if (*inspect_cmd) return cmd_inspect(ckpt_path, format, out);
    if (*grad_cmd) return cmd_gradcheck(grad, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace hyperagg::cli
