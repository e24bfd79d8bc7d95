#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aesth/data.hpp"
#include "aesth/layers.hpp"
#include "aesth/roi.hpp"

namespace aesth {

/// Input handling of the network, one per ablation row.
enum class ModelVariant {
  pad_roi_theme,  // padded canvas, ROI pooling, theme branch
  pad_roi,        // padded canvas, ROI pooling, theme feature zeroed
  resize,         // resized input, adaptive pooling
  resized_pad,    // aspect-preserving resize + pad, adaptive pooling
  random_crop,    // resize + crop, adaptive pooling
};

enum class PoolingKind { max, align };

const char* to_string(ModelVariant v);
ModelVariant parse_variant(const std::string& name);
const char* to_string(PoolingKind p);
PoolingKind parse_pooling(const std::string& name);

/// Input transform feeding a variant.
TransformMode transform_for(ModelVariant v);
inline bool uses_roi(ModelVariant v) { return v == ModelVariant::pad_roi_theme || v == ModelVariant::pad_roi; }
inline bool uses_theme(ModelVariant v) { return v == ModelVariant::pad_roi_theme; }

/// Architecture of the network:
///   stem    conv3x3/s2 (stem1) + ReLU, zeroed where the output is centred on
///           padding (ROI variants), conv3x3/s1 (stem2) + ReLU
///   pool    ROI max pool (or ROI align) to roi_out x roi_out, or adaptive
///           max pool for the non-ROI variants
///   body    conv3x3 (block1) + ReLU + maxpool2, conv3x3 (block2) + ReLU +
///           maxpool2, conv3x3 (block3) + ReLU
///   head    adaptive max pool head_grid x head_grid, flatten; theme one-hot
///           -> affine + ReLU (theme_width); concat; affine -> bins logits
struct ModelConfig {
  Index canvas = 128;
  Index stem1 = 16;
  Index stem2 = 32;
  Index roi_out = 32;
  Index block1 = 64;
  Index block2 = 64;
  Index block3 = 128;
  Index head_grid = 4;
  int themes = 4;
  Index theme_width = 16;
  Index bins = 10;
  ModelVariant variant = ModelVariant::pad_roi_theme;
  PoolingKind pooling = PoolingKind::max;
  Index align_samples = 2;

  /// Stride product of the layers before the ROI pool.
  Index downsample() const { return 2; }
  Index stem_extent() const { return sweep_extent(canvas, 3, 2, 1); }
  Index visual_features() const { return block3 * head_grid * head_grid; }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON form.
  std::uint64_t digest() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { conv, head };

struct ConvParams {
  Tensord weight;  // Cout x Cin x 3 x 3
  Tensord bias;    // Cout
};

/// All learnable tensors: backbone convolutions, theme encoder, output head.
struct ModelParams {
  static constexpr std::size_t kConvLayers = 5;

  ModelConfig config;
  std::array<ConvParams, kConvLayers> conv;
  Tensord theme_weight;  // T x theme_width
  Tensord theme_bias;    // theme_width
  Tensord head_weight;   // (visual + theme_width) x bins
  Tensord head_bias;     // bins
  /// Bumped on every in-place update so cached activations can detect staleness.
  std::uint64_t version = 0;

  struct Entry {
    std::string name;
    Tensord* tensor;
    ParamGroup group;
  };
  struct ConstEntry {
    std::string name;
    const Tensord* tensor;
    ParamGroup group;
  };
  std::vector<Entry> entries();
  std::vector<ConstEntry> entries() const;

  /// Same shapes and config, all zeros.
  static ModelParams zeros_like(const ModelParams& p);
  Index parameter_count() const;
  bool all_finite() const;
};

/// One-hot code of theme t among T themes.
Tensord theme_encode(ThemeId t, int themes);

/// Zero-mean uniform weights with standard deviation 1/sqrt(fan_in)
/// (bound sqrt(3 / fan_in)), zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Per-sample activations kept for the backward pass.
struct SampleCache {
  std::array<Conv2dContext<double>, ModelParams::kConvLayers> conv;
  std::array<ReluContext<double>, ModelParams::kConvLayers> relu;
  /// Stem activations kept (ROI variants): conv1 outputs whose centre lies in the image.
  Index stem_keep_w = 0, stem_keep_h = 0;
  RoiPoolContext<double> roi;
  RoiAlignContext<double> align;
  MaxPoolContext<double> pool3, pool4;
  RoiPoolContext<double> head_pool;
  Shape head_pool_shape;
  AffineContext<double> theme_affine;
  ReluContext<double> theme_relu;
  AffineContext<double> head;
};

struct ForwardCache {
  bool valid = false;
  std::uint64_t params_version = 0;
  const ModelParams* params = nullptr;
  ModelVariant variant = ModelVariant::pad_roi_theme;
  std::vector<SampleCache> samples;
};

struct ForwardResult {
  Tensord logits;  // N x bins
  ForwardCache cache;
};

/// Logits for every sample of the batch. `threads` caps per-sample
/// parallelism (0 = thread_budget()).
ForwardResult forward(const ModelParams& params, const PaddedBatch& batch, ModelVariant variant,
                      bool keep_cache = true, int threads = 0);

/// Parameter gradients of sum_n <grad_logits[n], logits[n]>.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Tensord& grad_logits,
                     int threads = 0);

/// softmax(forward(...)) per sample.
std::vector<ScoreDistribution> predict_distribution(const ModelParams& params, const PaddedBatch& batch,
                                                    ModelVariant variant, int threads = 0);

/// Largest canvas coordinate (exclusive) that can influence the pooled
/// features of an image whose region ends at `extent` on one axis.
Index stem_footprint_end(const ModelConfig& config, Index extent);

}  // namespace aesth
