#include "aesth/model.hpp"

#include <cmath>

#include "aesth/parallel.hpp"

namespace aesth {

const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::pad_roi_theme: return "pad_roi_theme";
    case ModelVariant::pad_roi: return "pad_roi";
    case ModelVariant::resize: return "resize";
    case ModelVariant::resized_pad: return "resized_pad";
    case ModelVariant::random_crop: return "random_crop";
  }
  return "?";
}

ModelVariant parse_variant(const std::string& name) {
  for (auto v : {ModelVariant::pad_roi_theme, ModelVariant::pad_roi, ModelVariant::resize,
                 ModelVariant::resized_pad, ModelVariant::random_crop})
    if (name == to_string(v)) return v;
  throw UsageError("unknown variant '" + name + "'");
}

const char* to_string(PoolingKind p) { return p == PoolingKind::max ? "max" : "align"; }

PoolingKind parse_pooling(const std::string& name) {
  if (name == "max") return PoolingKind::max;
  if (name == "align") return PoolingKind::align;
  throw UsageError("unknown pooling '" + name + "'");
}

TransformMode transform_for(ModelVariant v) {
  switch (v) {
    case ModelVariant::pad_roi_theme:
    case ModelVariant::pad_roi: return TransformMode::pad;
    case ModelVariant::resize: return TransformMode::resize;
    case ModelVariant::resized_pad: return TransformMode::resized_pad;
    case ModelVariant::random_crop: return TransformMode::random_crop;
  }
  throw UsageError("transform_for: unknown variant");
}

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* what) {
    if (v < 1) throw UsageError(std::string("model config: ") + what + " must be >= 1");
  };
  positive(canvas, "canvas");
  positive(stem1, "stem1");
  positive(stem2, "stem2");
  positive(roi_out, "roi_out");
  positive(block1, "block1");
  positive(block2, "block2");
  positive(block3, "block3");
  positive(head_grid, "head_grid");
  positive(themes, "themes");
  positive(theme_width, "theme_width");
  positive(align_samples, "align_samples");
  if (bins < 2) throw UsageError("model config: bins must be >= 2");
  if (roi_out < 4) throw UsageError("model config: roi_out must be >= 4 (two 2x2 max pools follow)");
  if (canvas < 2) throw UsageError("model config: canvas too small");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["canvas"] = canvas;
  j["stem1"] = stem1;
  j["stem2"] = stem2;
  j["roi_out"] = roi_out;
  j["block1"] = block1;
  j["block2"] = block2;
  j["block3"] = block3;
  j["head_grid"] = head_grid;
  j["themes"] = themes;
  j["theme_width"] = theme_width;
  j["bins"] = bins;
  j["variant"] = to_string(variant);
  j["pooling"] = to_string(pooling);
  j["align_samples"] = align_samples;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.canvas = j.at("canvas").get<Index>();
    c.stem1 = j.at("stem1").get<Index>();
    c.stem2 = j.at("stem2").get<Index>();
    c.roi_out = j.at("roi_out").get<Index>();
    c.block1 = j.at("block1").get<Index>();
    c.block2 = j.at("block2").get<Index>();
    c.block3 = j.at("block3").get<Index>();
    c.head_grid = j.at("head_grid").get<Index>();
    c.themes = j.at("themes").get<int>();
    c.theme_width = j.at("theme_width").get<Index>();
    c.bins = j.at("bins").get<Index>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.align_samples = j.at("align_samples").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t ModelConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// parameters

std::vector<ModelParams::Entry> ModelParams::entries() {
  std::vector<Entry> e;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    e.push_back({"conv" + std::to_string(i + 1) + ".weight", &conv[i].weight, ParamGroup::conv});
    e.push_back({"conv" + std::to_string(i + 1) + ".bias", &conv[i].bias, ParamGroup::conv});
  }
  e.push_back({"theme.weight", &theme_weight, ParamGroup::head});
  e.push_back({"theme.bias", &theme_bias, ParamGroup::head});
  e.push_back({"head.weight", &head_weight, ParamGroup::head});
  e.push_back({"head.bias", &head_bias, ParamGroup::head});
  return e;
}

std::vector<ModelParams::ConstEntry> ModelParams::entries() const {
  std::vector<ConstEntry> out;
  for (auto& e : const_cast<ModelParams*>(this)->entries()) out.push_back({e.name, e.tensor, e.group});
  return out;
}

ModelParams ModelParams::zeros_like(const ModelParams& p) {
  ModelParams z;
  z.config = p.config;
  auto dst = z.entries();
  auto src = p.entries();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor = Tensord::zeros_like(*src[i].tensor);
  return z;
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries()) n += e.tensor->size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& e : entries())
    if (!e.tensor->all_finite()) return false;
  return true;
}

Tensord theme_encode(ThemeId t, int themes) {
  if (themes < 1) throw RangeError("theme_encode: theme count must be >= 1");
  if (t < 0 || t >= themes)
    throw RangeError("theme_encode: theme " + std::to_string(t) + " not in [0, " + std::to_string(themes) + ")");
  Tensord code({themes});
  code(t) = 1.0;
  return code;
}

namespace {

std::array<Index, ModelParams::kConvLayers> conv_inputs(const ModelConfig& c) {
  return {Image::kChannels, c.stem1, c.stem2, c.block1, c.block2};
}
std::array<Index, ModelParams::kConvLayers> conv_outputs(const ModelConfig& c) {
  return {c.stem1, c.stem2, c.block1, c.block2, c.block3};
}

// Zero-mean uniform with standard deviation 1/sqrt(fan_in).
void fill_uniform(Tensord& t, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.uniform(-bound, bound);
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(seed);
  const auto cin = conv_inputs(config);
  const auto cout = conv_outputs(config);
  for (std::size_t i = 0; i < ModelParams::kConvLayers; ++i) {
    p.conv[i].weight = Tensord({cout[i], cin[i], 3, 3});
    p.conv[i].bias = Tensord({cout[i]});
    fill_uniform(p.conv[i].weight, cin[i] * 9, rng);
  }
  p.theme_weight = Tensord({config.themes, config.theme_width});
  p.theme_bias = Tensord({config.theme_width});
  fill_uniform(p.theme_weight, config.themes, rng);
  const Index fused = config.visual_features() + config.theme_width;
  p.head_weight = Tensord({fused, config.bins});
  p.head_bias = Tensord({config.bins});
  fill_uniform(p.head_weight, fused, rng);
  return p;
}

Index stem_footprint_end(const ModelConfig& config, Index extent) {
  const Index tau = config.downsample();
  const Index mapped = config.pooling == PoolingKind::max ? round_div(extent, tau) : (extent + tau - 1) / tau;
  // conv2 (k3 s1 p1) at j reads conv1 up to j + 1; conv1 (k3 s2 p1) at j reads input up to 2j + 1.
  const Index last_conv1 = mapped;  // (mapped - 1) + 1
  return std::min(config.canvas, 2 * last_conv1 + 2);
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

constexpr ConvGeometry kStemStride{2, 1};
constexpr ConvGeometry kSame{1, 1};

ConvGeometry geometry(std::size_t layer) { return layer == 0 ? kStemStride : kSame; }

Tensord sample_canvas(const PaddedBatch& batch, Index n) {
  const Index s = batch.canvas_size();
  Tensord x({1, Image::kChannels, s, s});
  const Index len = x.size();
  std::copy(batch.canvas.plane(n, 0), batch.canvas.plane(n, 0) + len, x.data());
  return x;
}

Tensord conv_relu(const ModelParams& p, std::size_t layer, const Tensord& x, SampleCache* c) {
  Tensord y = conv2d_forward(x, p.conv[layer].weight, p.conv[layer].bias, geometry(layer),
                             c ? &c->conv[layer] : nullptr);
  return relu_forward(y, c ? &c->relu[layer] : nullptr);
}

// Zeroes every position at or beyond (keep_w, keep_h) of a 1 x C x H x W tensor.
void mask_beyond(Tensord& a, Index keep_w, Index keep_h) {
  const Index h = a.dim(2), w = a.dim(3);
  if (keep_w >= w && keep_h >= h) return;
  for (Index ch = 0; ch < a.dim(1); ++ch) {
    double* plane = a.plane(0, ch);
    for (Index y = 0; y < h; ++y)
      for (Index x = (y < keep_h ? keep_w : 0); x < w; ++x) plane[y * w + x] = 0.0;
  }
}

Tensord sample_forward(const ModelParams& p, const PaddedBatch& batch, Index n, ModelVariant variant,
                       SampleCache* c) {
  const ModelConfig& cfg = p.config;
  Tensord a = sample_canvas(batch, n);
  a = conv_relu(p, 0, a, c);
  if (uses_roi(variant)) {
    // Zero the stem outputs centred on padding so the border of a tight canvas
    // and a wider zero margin look the same to conv2.
    const Region& r = batch.regions[static_cast<std::size_t>(n)];
    const Index keep_w = (r.x1 + 1) / 2, keep_h = (r.y1 + 1) / 2;
    mask_beyond(a, keep_w, keep_h);
    if (c) c->stem_keep_w = keep_w, c->stem_keep_h = keep_h;
  }
  a = conv_relu(p, 1, a, c);

  if (uses_roi(variant)) {
    Region r = batch.regions[static_cast<std::size_t>(n)];
    r.batch_index = 0;
    const RoiPoolSpec spec{cfg.downsample(), cfg.roi_out, cfg.roi_out};
    if (cfg.pooling == PoolingKind::max)
      a = roi_maxpool_forward(a, {r}, spec, c ? &c->roi : nullptr);
    else
      a = roi_align_forward(a, {r}, spec, cfg.align_samples, c ? &c->align : nullptr);
  } else {
    a = adaptive_maxpool_forward(a, cfg.roi_out, cfg.roi_out, c ? &c->roi : nullptr);
  }

  a = conv_relu(p, 2, a, c);
  a = maxpool2d_forward(a, 2, 2, c ? &c->pool3 : nullptr);
  a = conv_relu(p, 3, a, c);
  a = maxpool2d_forward(a, 2, 2, c ? &c->pool4 : nullptr);
  a = conv_relu(p, 4, a, c);
  a = adaptive_maxpool_forward(a, cfg.head_grid, cfg.head_grid, c ? &c->head_pool : nullptr);
  if (c) c->head_pool_shape = a.shape();
  const Tensord visual = a.reshaped({1, a.size()});

  Tensord theme_feature({1, cfg.theme_width});
  const Tensord code = theme_encode(batch.themes[static_cast<std::size_t>(n)], cfg.themes).reshaped({1, cfg.themes});
  if (uses_theme(variant)) {
    theme_feature = relu_forward(affine_forward(code, p.theme_weight, p.theme_bias, c ? &c->theme_affine : nullptr),
                                 c ? &c->theme_relu : nullptr);
  }
  const Tensord fused = concat_forward(visual, theme_feature);
  return affine_forward(fused, p.head_weight, p.head_bias, c ? &c->head : nullptr);
}

void sample_backward(const ModelParams& p, const SampleCache& c, ModelVariant variant, const Tensord& grad_logits,
                     ModelParams& g) {
  const ModelConfig& cfg = p.config;
  AffineGrads<double> head = affine_backward(c.head, grad_logits);
  g.head_weight = std::move(head.weight);
  g.head_bias = std::move(head.bias);
  auto [g_visual, g_theme] = concat_backward(head.input, cfg.visual_features());

  if (uses_theme(variant)) {
    AffineGrads<double> th = affine_backward(c.theme_affine, relu_backward(c.theme_relu, g_theme));
    g.theme_weight = std::move(th.weight);
    g.theme_bias = std::move(th.bias);
  }

  Tensord ga = adaptive_maxpool_backward(c.head_pool, g_visual.reshaped(c.head_pool_shape));
  auto conv_back = [&](std::size_t layer, const Tensord& grad, bool need_input) {
    Conv2dGrads<double> cg = conv2d_backward(c.conv[layer], relu_backward(c.relu[layer], grad), need_input);
    g.conv[layer].weight = std::move(cg.weight);
    g.conv[layer].bias = std::move(cg.bias);
    return std::move(cg.input);
  };
  ga = conv_back(4, ga, true);
  ga = maxpool2d_backward(c.pool4, ga);
  ga = conv_back(3, ga, true);
  ga = maxpool2d_backward(c.pool3, ga);
  ga = conv_back(2, ga, true);
  if (uses_roi(variant) && cfg.pooling == PoolingKind::align)
    ga = roi_align_backward(c.align, ga);
  else
    ga = roi_maxpool_backward(c.roi, ga);
  ga = conv_back(1, ga, true);
  if (uses_roi(variant)) mask_beyond(ga, c.stem_keep_w, c.stem_keep_h);
  conv_back(0, ga, false);
}

void check_batch(const ModelParams& params, const PaddedBatch& batch) {
  const ModelConfig& cfg = params.config;
  if (batch.canvas.rank() != 4 || batch.canvas.dim(1) != Image::kChannels || batch.canvas.dim(2) != cfg.canvas ||
      batch.canvas.dim(3) != cfg.canvas)
    throw UsageError("forward: canvas " + shape_string(batch.canvas.shape()) + " does not match configured canvas " +
                     std::to_string(cfg.canvas));
  const auto n = static_cast<std::size_t>(batch.canvas.dim(0));
  if (batch.regions.size() != n || batch.themes.size() != n)
    throw UsageError("forward: batch has mismatched region/theme counts");
  for (const Region& r : batch.regions)
    if (r.x0 < 0 || r.y0 < 0 || r.x1 <= r.x0 || r.y1 <= r.y0 || r.x1 > cfg.canvas || r.y1 > cfg.canvas)
      throw UsageError("forward: region outside the canvas");
}

}  // namespace

ForwardResult forward(const ModelParams& params, const PaddedBatch& batch, ModelVariant variant, bool keep_cache,
                      int threads) {
  check_batch(params, batch);
  const Index n = batch.canvas.dim(0);
  ForwardResult out;
  out.logits = Tensord({n, params.config.bins});
  if (keep_cache) out.cache.samples.resize(static_cast<std::size_t>(n));
  parallel_for(
      n,
      [&](Index i) {
        SampleCache* c = keep_cache ? &out.cache.samples[static_cast<std::size_t>(i)] : nullptr;
        const Tensord logits = sample_forward(params, batch, i, variant, c);
        std::copy(logits.data(), logits.data() + logits.size(), out.logits.data() + i * params.config.bins);
      },
      threads);
  if (keep_cache) {
    out.cache.valid = true;
    out.cache.params_version = params.version;
    out.cache.params = &params;
    out.cache.variant = variant;
  }
  return out;
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Tensord& grad_logits, int threads) {
  if (!cache.valid) throw UsageError("backward: forward cache is empty");
  if (cache.params != &params || cache.params_version != params.version)
    throw UsageError("backward: cache is stale (parameters changed since forward)");
  const Index n = static_cast<Index>(cache.samples.size());
  if (grad_logits.shape() != Shape{n, params.config.bins})
    throw DimensionError("backward: grad_logits " + shape_string(grad_logits.shape()));

  std::vector<ModelParams> per_sample(static_cast<std::size_t>(n), ModelParams::zeros_like(params));
  parallel_for(
      n,
      [&](Index i) {
        Tensord g({1, params.config.bins});
        std::copy(grad_logits.data() + i * params.config.bins, grad_logits.data() + (i + 1) * params.config.bins,
                  g.data());
        sample_backward(params, cache.samples[static_cast<std::size_t>(i)], cache.variant, g,
                        per_sample[static_cast<std::size_t>(i)]);
      },
      threads);

  // Fixed-order reduction keeps the sum independent of the thread count.
  ModelParams total = ModelParams::zeros_like(params);
  auto dst = total.entries();
  for (auto& ps : per_sample) {
    auto src = ps.entries();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k].tensor->values() += src[k].tensor->values();
  }
  return total;
}

std::vector<ScoreDistribution> predict_distribution(const ModelParams& params, const PaddedBatch& batch,
                                                    ModelVariant variant, int threads) {
  const Tensord probs = softmax_forward(forward(params, batch, variant, false, threads).logits);
  std::vector<ScoreDistribution> out;
  out.reserve(static_cast<std::size_t>(probs.dim(0)));
  for (Index i = 0; i < probs.dim(0); ++i) out.emplace_back(Eigen::VectorXd(probs.matrix().row(i).transpose()));
  return out;
}

}  // namespace aesth
