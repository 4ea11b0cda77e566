#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hyperagg/types.hpp"

namespace hyperagg::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kDataError = 3,
  kDivergence = 4,
};

struct StageSummary {
  std::string name;
  std::size_t channels = 0;
  double mean = 0.0;
  // mean -/+ 1.96 * sd / sqrt(channels); empty for per-stage masks and
  // single-channel stages.
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

/// Stage-tuning summary: per stage, the mean channel coefficient with a
/// normal-approximation 95% interval. Per-feature masks are first averaged
/// over spatial positions so each channel contributes one value.
std::vector<StageSummary> summarize_stages(const Mask& mask);

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hyperagg::cli
