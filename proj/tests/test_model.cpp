#include <cmath>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "aesth/checkpoint.hpp"
#include "aesth/gradcheck.hpp"
#include "aesth/model.hpp"
#include "aesth/training.hpp"
#include "test_util.hpp"

using namespace aesth;
using aesth::test::TempDir;

namespace {

ModelConfig small_config(ModelVariant variant = ModelVariant::pad_roi_theme, Index canvas = 32) {
  ModelConfig c;
  c.canvas = canvas;
  c.stem1 = 4;
  c.stem2 = 4;
  c.roi_out = 8;
  c.block1 = 4;
  c.block2 = 4;
  c.block3 = 6;
  c.head_grid = 2;
  c.themes = 3;
  c.theme_width = 4;
  c.bins = 5;
  c.variant = variant;
  return c;
}

Image random_image(Rng& rng, Index w, Index h) {
  Image img(w, h);
  for (double& v : img.pixels()) v = rng.uniform();
  return img;
}

ScoreDistribution uniform_target(Index bins) {
  return ScoreDistribution(Eigen::VectorXd::Constant(bins, 1.0 / static_cast<double>(bins)));
}

PaddedBatch random_batch(Rng& rng, const ModelConfig& c, Index n, TransformMode mode = TransformMode::pad) {
  std::vector<BatchSample> samples;
  for (Index i = 0; i < n; ++i)
    samples.push_back({random_image(rng, rng.uniform_int(8, c.canvas), rng.uniform_int(8, c.canvas)),
                       uniform_target(c.bins), static_cast<ThemeId>(rng.uniform_int(0, c.themes - 1))});
  return make_batch(samples, mode, c.canvas);
}

/// Gives every bias a positive value so zero padding is not trivially neutral.
void randomize_biases(ModelParams& p, Rng& rng) {
  for (auto& e : p.entries())
    if (e.name.find("bias") != std::string::npos)
      for (Index i = 0; i < e.tensor->size(); ++i) e.tensor->values()[i] = rng.uniform(0.0, 0.2);
}

}  // namespace

TEST(ThemeEncode, OneHot) {
  EXPECT_EQ(theme_encode(2, 4), Tensord({4}, {0.0, 0.0, 1.0, 0.0}));
  EXPECT_EQ(theme_encode(0, 1), Tensord({1}, {1.0}));
  EXPECT_THROW(theme_encode(5, 4), RangeError);
  EXPECT_THROW(theme_encode(-1, 4), RangeError);
}

TEST(InitParams, DeterministicInSeed) {
  const ModelConfig c = small_config();
  const ModelParams a = init_params(c, 7), b = init_params(c, 7), d = init_params(c, 8);
  const auto ea = a.entries(), eb = b.entries(), ed = d.entries();
  bool any_diff = false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(*ea[i].tensor, *eb[i].tensor) << ea[i].name;
    any_diff |= !(*ea[i].tensor == *ed[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitParams, ScaleAndZeroBiases) {
  ModelConfig c;
  const ModelParams p = init_params(c, 3);
  for (const auto& e : p.entries()) {
    if (e.name.find("bias") != std::string::npos) {
      EXPECT_EQ(e.tensor->values().cwiseAbs().maxCoeff(), 0.0) << e.name;
      continue;
    }
    const Index fan_in = e.tensor->rank() == 4 ? e.tensor->size() / e.tensor->dim(0) : e.tensor->dim(0);
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    EXPECT_LE(e.tensor->values().cwiseAbs().maxCoeff(), bound) << e.name;
    if (e.tensor->size() >= 1000) {
      const double sd = std::sqrt(e.tensor->values().squaredNorm() / static_cast<double>(e.tensor->size()));
      EXPECT_NEAR(sd * std::sqrt(static_cast<double>(fan_in)), 1.0, 0.1) << e.name;
    }
  }
}

TEST(ModelConfig, DefaultVisualFeatureWidth) {
  ModelConfig c;
  EXPECT_EQ(c.visual_features(), 2048);
  const ModelParams p = init_params(c, 1);
  EXPECT_EQ(p.head_weight.dim(0), 2048 + c.theme_width);
}

TEST(ModelConfig, JsonRoundTripAndDigest) {
  const ModelConfig c = small_config(ModelVariant::resize);
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  ModelConfig d = c;
  d.canvas = 40;
  EXPECT_NE(c.digest(), d.digest());
}

TEST(Forward, ShapeAndFiniteLogitsForEveryVariant) {
  Rng rng(50);
  for (ModelVariant v : {ModelVariant::pad_roi_theme, ModelVariant::pad_roi, ModelVariant::resize,
                         ModelVariant::resized_pad, ModelVariant::random_crop}) {
    const ModelConfig c = small_config(v);
    const ModelParams p = init_params(c, 1);
    const PaddedBatch b = random_batch(rng, c, 3, transform_for(v));
    const ForwardResult r = forward(p, b, v, false);
    EXPECT_EQ(r.logits.shape(), (Shape{3, c.bins})) << to_string(v);
    EXPECT_TRUE(r.logits.all_finite());
  }
}

TEST(Forward, DefaultModelOnMixedSizes) {
  Rng rng(51);
  const ModelConfig c;
  const ModelParams p = init_params(c, 2);
  std::vector<BatchSample> s;
  s.push_back({random_image(rng, 128, 64), uniform_target(10), 0});
  s.push_back({random_image(rng, 33, 97), uniform_target(10), 3});
  const PaddedBatch b = make_batch(s, TransformMode::pad, c.canvas);
  const Tensord logits = forward(p, b, c.variant, false).logits;
  EXPECT_EQ(logits.shape(), (Shape{2, 10}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(Forward, CanvasMismatchThrows) {
  Rng rng(52);
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 1);
  const PaddedBatch b = random_batch(rng, small_config(c.variant, 40), 1);
  EXPECT_THROW(forward(p, b, c.variant), UsageError);
}

TEST(Forward, PadSizeInvariance) {
  Rng rng(53);
  for (PoolingKind pk : {PoolingKind::max, PoolingKind::align}) {
    ModelConfig small = small_config(), large = small_config(ModelVariant::pad_roi_theme, 40);
    small.pooling = large.pooling = pk;
    ModelParams ps = init_params(small, 4);
    randomize_biases(ps, rng);
    ModelParams pl = ps;
    pl.config = large;
    for (int t = 0; t < 10; ++t) {
      std::vector<BatchSample> s{{random_image(rng, rng.uniform_int(8, 32), rng.uniform_int(8, 32)),
                                  uniform_target(5), static_cast<ThemeId>(rng.uniform_int(0, 2))}};
      const Tensord a = forward(ps, make_batch(s, TransformMode::pad, 32), small.variant, false).logits;
      const Tensord b = forward(pl, make_batch(s, TransformMode::pad, 40), large.variant, false).logits;
      EXPECT_LE(aesth::test::max_abs_diff(a, b), 1e-12) << to_string(pk);
    }
  }
}

TEST(Forward, ThemeBlindVariantIgnoresTheme) {
  Rng rng(54);
  const ModelConfig c = small_config(ModelVariant::pad_roi);
  ModelParams p = init_params(c, 5);
  randomize_biases(p, rng);
  PaddedBatch b = random_batch(rng, c, 2);
  b.themes = {0, 0};
  const Tensord ref = forward(p, b, c.variant, false).logits;
  for (ThemeId t = 1; t < c.themes; ++t) {
    b.themes = {t, t};
    EXPECT_EQ(forward(p, b, c.variant, false).logits, ref);
  }
  b.themes = {1, 1};
  EXPECT_NE(forward(p, b, ModelVariant::pad_roi_theme, false).logits, ref);
}

TEST(Backward, ThemeEncoderGradientVanishesWithoutTheme) {
  Rng rng(55);
  const ModelConfig c = small_config(ModelVariant::pad_roi);
  ModelParams p = init_params(c, 6);
  randomize_biases(p, rng);
  const PaddedBatch b = random_batch(rng, c, 2);
  const ForwardResult r = forward(p, b, c.variant);
  Tensord g(r.logits.shape());
  for (Index i = 0; i < g.size(); ++i) g.values()[i] = rng.uniform(-1.0, 1.0);
  const ModelParams grads = backward(p, r.cache, g);
  EXPECT_EQ(grads.theme_weight.values().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.theme_bias.values().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(grads.head_weight.values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(56);
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 7);
  const PaddedBatch b = random_batch(rng, c, 2);
  const ForwardResult r = forward(p, b, c.variant);
  const ModelParams grads = backward(p, r.cache, Tensord(r.logits.shape()));
  for (const auto& e : grads.entries()) EXPECT_EQ(e.tensor->values().cwiseAbs().maxCoeff(), 0.0) << e.name;
}

TEST(Backward, StaleCacheThrows) {
  Rng rng(57);
  const ModelConfig c = small_config();
  ModelParams p = init_params(c, 8);
  const PaddedBatch b = random_batch(rng, c, 1);
  const ForwardResult r = forward(p, b, c.variant);
  ++p.version;
  EXPECT_THROW(backward(p, r.cache, Tensord(r.logits.shape())), UsageError);
  EXPECT_THROW(backward(p, ForwardCache{}, Tensord(r.logits.shape())), UsageError);
}

TEST(Backward, HeadGradientPassesFiniteDifferences) {
  // The head is affine in its weights, so its gradient has no kinks.
  Rng rng(58);
  const ModelConfig c = small_config();
  ModelParams p = init_params(c, 9);
  randomize_biases(p, rng);
  const PaddedBatch b = random_batch(rng, c, 2);
  auto f = [&](const Tensord& w, Tensord* grad) {
    ModelParams q = p;
    q.head_weight = w;
    const ForwardResult r = forward(q, b, c.variant, grad != nullptr);
    Tensord gl;
    const double loss = emd_batch_loss(r.logits, b.targets, grad ? &gl : nullptr);
    if (grad) *grad = backward(q, r.cache, gl).head_weight;
    return loss;
  };
  EXPECT_LE(gradcheck(f, p.head_weight).max_rel_error, 1e-6);
}

TEST(PredictDistribution, ValidDistributionsAndDeterministic) {
  Rng rng(59);
  const ModelConfig c = small_config();
  ModelParams p = init_params(c, 10);
  randomize_biases(p, rng);
  for (int t = 0; t < 100; ++t) {
    const PaddedBatch b = random_batch(rng, c, 2);
    const auto d = predict_distribution(p, b, c.variant);
    ASSERT_EQ(d.size(), 2u);
    for (const auto& s : d) {
      EXPECT_NEAR(s.probs().sum(), 1.0, 1e-12);
      EXPECT_GE(s.probs().minCoeff(), 0.0);
    }
    if (t == 0) {
      EXPECT_EQ(predict_distribution(p, b, c.variant)[1].probs(), d[1].probs());
    }
  }
}

TEST(PredictDistribution, PaddingBeyondReceptiveBandIsIgnored) {
  Rng rng(60);
  const ModelConfig c = small_config();
  ModelParams p = init_params(c, 11);
  randomize_biases(p, rng);
  for (int t = 0; t < 20; ++t) {
    PaddedBatch b = random_batch(rng, c, 1);
    const auto before = predict_distribution(p, b, c.variant);
    const Region& r = b.regions[0];
    const Index xe = stem_footprint_end(c, r.x1), ye = stem_footprint_end(c, r.y1);
    for (Index ch = 0; ch < 3; ++ch)
      for (Index y = 0; y < c.canvas; ++y)
        for (Index x = 0; x < c.canvas; ++x)
          if (x >= xe || y >= ye) b.canvas(0, ch, y, x) = rng.uniform(0.5, 1.0);
    EXPECT_EQ(predict_distribution(p, b, c.variant)[0].probs(), before[0].probs());
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  TempDir dir("ckpt");
  ModelConfig c = small_config(ModelVariant::resized_pad);
  c.pooling = PoolingKind::align;
  Rng rng(61);
  ModelParams p = init_params(c, 12);
  randomize_biases(p, rng);
  save_checkpoint(dir / "m.ckpt", p);
  const ModelParams q = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(q.config, c);
  EXPECT_EQ(read_checkpoint_config(dir / "m.ckpt"), c);
  const auto ep = p.entries();
  const auto eq = q.entries();
  ASSERT_EQ(ep.size(), eq.size());
  for (std::size_t i = 0; i < ep.size(); ++i) {
    EXPECT_EQ(ep[i].name, eq[i].name);
    EXPECT_EQ(*ep[i].tensor, *eq[i].tensor);
  }
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir dir("ckpt-bad");
  save_checkpoint(dir / "m.ckpt", init_params(small_config(), 1));
  std::string bytes;
  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(dir / "bad-magic.ckpt", std::ios::binary);
    std::string b = bytes;
    b[0] = 'X';
    out << b;
  }
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir / "bad-magic.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}
