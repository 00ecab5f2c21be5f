#pragma once

#include "regiondiff/regional.hpp"
#include "regiondiff/sampler.hpp"
#include "regiondiff/schedule.hpp"
#include "regiondiff/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace regiondiff {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutputDirEnv = "REGIONDIFF_OUTPUT_DIR";

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return build_linear_schedule(steps, beta_start, beta_end); }
};

struct RegionalConfig {
  Index window = kDefaultWindow;
  Index stride = kDefaultStride;
  int workers = 0;  // 0: one per available core
};

/// Everything a run needs besides its input images. JSON on disk:
///
///   {
///     "seed": 7,
///     "output_dir": "runs/a",
///     "dataset": "data/manifest.json",
///     "schedule": {"T": 1000, "beta_start": 0.0001, "beta_end": 0.02},
///     "sampler":  {"kind": "ddpm", "steps": 1000, "eta": 0.0, "variance": "beta"},
///     "regional": {"window": 64, "stride": 16, "workers": 0},
///     "training": {"lr": 2e-5, "batch_size": 4, "iterations": 1000}
///   }
///
/// Every key is optional. Relative paths resolve against the file's directory.
struct RunConfig {
  ScheduleConfig schedule;
  SamplerConfig sampler;
  RegionalConfig regional;
  TrainConfig training;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> output_dir;
  std::uint64_t seed = 0;

  /// Propagates `seed` into the sampler and trainer sections.
  void set_seed(std::uint64_t s);

  /// Checks the schedule, sampler, window/stride (m mod n = 0) and that the
  /// dataset manifest, when named, exists.
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Output directory precedence: explicit flag, then the environment
/// variable, then the config file.
std::optional<std::filesystem::path> resolve_output_dir(const std::optional<std::filesystem::path>& flag,
                                                        const RunConfig& cfg);

}  // namespace regiondiff
