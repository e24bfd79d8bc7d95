#pragma once
// Synthetic desk-scale ablation: every input variant, the ROI output size and
// the pooling kind, each trained over several seeds on one generated dataset.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aesth/synth.hpp"
#include "aesth/training.hpp"

namespace aesth {

struct AblationConfig {
  /// Generated in memory unless data_dir names a directory written by
  /// `aesth synth`; records are split in file order.
  SynthConfig data{.count = 2000, .themes = 4, .bins = 10, .seed = 2017};
  std::filesystem::path data_dir;
  double train_fraction = 0.8;
  Index canvas = 128;
  Index epochs = 15;
  Index batch_size = 16;
  /// From-scratch training rate; the optimizer default is a fine-tuning rate.
  double lr_base = 0.03;
  AugmentMode augment = AugmentMode::flip_crop;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Any of "variants", "roi_size", "align", "augment".
  std::vector<std::string> studies{"variants", "roi_size", "align"};
  Index roi_out = 32;
  Index small_roi_out = 16;
  /// Finished runs are stored here and reused on a rerun with the same key.
  std::filesystem::path cache_dir;
  int threads = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Flat keys as written by to_json(); unknown keys are rejected.
  static AblationConfig from_json(const nlohmann::json& j);
};

/// One trained configuration of the ablation grid.
struct AblationArm {
  std::string label;  // e.g. "pad_roi", "pad_roi_theme/roi16"
  ModelVariant variant = ModelVariant::pad_roi_theme;
  PoolingKind pooling = PoolingKind::max;
  Index roi_out = 32;
  AugmentMode augment = AugmentMode::flip_crop;
};

struct AblationMetrics {
  std::optional<double> srcc_mean, srcc_std;
  double emd_r1 = 0.0, kl = 0.0;
};

struct AblationRun {
  std::string label;
  std::uint64_t seed = 0;
  AblationMetrics metrics;
  /// Wall and process CPU time of the run when it was trained (also for
  /// cache hits). CPU time counts every core the run kept busy.
  double seconds = 0.0;
  double cpu_seconds = 0.0;
  bool cached = false;
};

struct ArmSummary {
  AblationArm arm;
  std::vector<AblationRun> runs;  // one per seed, in seed order
  /// Seed averages; a correlation mean is empty if any seed's is undefined.
  AblationMetrics mean;
};

struct AblationReport {
  AblationConfig config;
  std::vector<ArmSummary> arms;

  const ArmSummary& arm(const std::string& label) const;
  /// Deterministic results: no timings, no cache flags.
  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
  /// Per-run compute seconds and cache hits.
  nlohmann::ordered_json timing_json() const;
  /// Summed CPU seconds of the named arms over all seeds.
  double cpu_seconds_of(const std::vector<std::string>& labels) const;
};

std::vector<AblationArm> ablation_arms(const AblationConfig& config);

/// Trains and evaluates every arm for every seed. `progress` receives one
/// line per finished run.
AblationReport run_ablation(const AblationConfig& config,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace aesth
