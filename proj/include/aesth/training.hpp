#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aesth/model.hpp"

namespace aesth {

struct OptimizerConfig {
  double lr_base = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double head_multiplier = 10.0;
  Index decay_every = 10;
  double decay_factor = 0.5;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// lr_base * decay_factor^floor(epoch / decay_every), times head_multiplier
/// for the theme encoder and output head.
double lr_at(const OptimizerConfig& opt, Index epoch, ParamGroup group);

struct OptimizerState {
  OptimizerConfig hyper;
  ModelParams velocity;
  /// Rates applied by the most recent step, per group.
  double applied_lr_conv = 0.0;
  double applied_lr_head = 0.0;
  Index steps = 0;

  static OptimizerState init(const ModelParams& params, const OptimizerConfig& hyper);
};

/// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
void sgd_update(Tensord& weight, const Tensord& grad, Tensord& velocity, double lr, double momentum,
                double weight_decay);

/// One momentum-SGD step over every parameter at the epoch's rates.
/// Throws NumericError, leaving params untouched, if any gradient is non-finite.
void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, Index epoch);

// ---------------------------------------------------------------------------
// evaluation

struct RecordMetrics {
  double emd_r1 = 0, emd_r2 = 0;
  Divergences div;
  double pred_mean = 0, true_mean = 0, pred_std = 0, true_std = 0;
};

/// Table-style metric summary. Correlations are empty when undefined
/// (a constant sequence of predicted or true summaries).
struct MetricReport {
  Index count = 0;
  double euclidean = 0, kl = 0, js = 0, chi2 = 0, emd_r1 = 0, emd_r2 = 0, cosine = 0;
  std::optional<double> srcc_mean, plcc_mean, srcc_std, plcc_std;
  double mse_mean = 0;
  std::vector<RecordMetrics> records;

  int correlation_errors() const;
  /// The twelve metric keys plus `count` and `correlation_errors`.
  nlohmann::ordered_json to_json() const;
  /// One row per record.
  std::string to_csv() const;
};

/// Aggregates paired predicted / ground-truth distributions.
MetricReport summarize_predictions(const std::vector<ScoreDistribution>& predicted,
                                   const std::vector<ScoreDistribution>& truth);

/// Predicts each record on all six test-time views, averages the six
/// distributions and summarizes against the normalized votes. `transform`
/// replaces the variant's input transform (diagnostics only).
MetricReport evaluate(const ModelParams& params, const std::vector<DatasetRecord>& records, ModelVariant variant,
                      Index canvas, int threads = 0, std::optional<TransformMode> transform = std::nullopt);

/// Averaged test-time distribution for each record.
std::vector<ScoreDistribution> predict_records(const ModelParams& params, const std::vector<DatasetRecord>& records,
                                               ModelVariant variant, Index canvas, int threads = 0,
                                               std::optional<TransformMode> transform = std::nullopt);

// ---------------------------------------------------------------------------
// training

enum class AugmentMode { none, flip, flip_crop };
const char* to_string(AugmentMode m);
AugmentMode parse_augment(const std::string& name);

struct EpochLog {
  Index epoch = 0;
  double mean_loss = 0.0;
  double lr_conv = 0.0;
  double lr_head = 0.0;
  std::optional<MetricReport> metrics;

  nlohmann::ordered_json to_json() const;
};

struct TrainConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  Index epochs = 30;
  Index batch_size = 16;
  std::uint64_t seed = 0;
  AugmentMode augment = AugmentMode::flip_crop;
  /// Validate every n epochs (0 disables; the last epoch is always validated
  /// when a validation set is given and n > 0).
  Index eval_every = 1;
  int threads = 0;
  std::function<void(const EpochLog&)> on_epoch;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& train_set,
                  const std::vector<DatasetRecord>& validation_set = {});

/// Batch-mean EMD(r=2) of softmax(logits) against targets, and its gradient
/// with respect to the logits.
double emd_batch_loss(const Tensord& logits, const std::vector<ScoreDistribution>& targets, Tensord* grad_logits);

}  // namespace aesth
