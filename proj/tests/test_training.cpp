#include <cmath>

#include <gtest/gtest.h>

#include "aesth/synth.hpp"
#include "aesth/training.hpp"
#include "test_util.hpp"

using namespace aesth;

namespace {

ModelConfig small_config(ModelVariant variant = ModelVariant::pad_roi_theme) {
  ModelConfig c;
  c.canvas = 32;
  c.stem1 = 4;
  c.stem2 = 8;
  c.roi_out = 8;
  c.block1 = 8;
  c.block2 = 8;
  c.block3 = 8;
  c.head_grid = 2;
  c.variant = variant;
  return c;
}

std::vector<DatasetRecord> small_records(Index count, std::uint64_t seed) {
  SynthConfig s;
  s.count = count;
  s.min_extent = 16;
  s.max_extent = 32;
  s.seed = seed;
  return synth_generate(s).records;
}

TrainConfig small_train(std::uint64_t seed, ModelVariant variant = ModelVariant::pad_roi_theme) {
  TrainConfig t;
  t.model = small_config(variant);
  t.optimizer.lr_base = 0.03;
  t.epochs = 2;
  t.batch_size = 8;
  t.seed = seed;
  t.eval_every = 0;
  return t;
}

}  // namespace

TEST(LearningRate, HalvesEveryTenEpochs) {
  const OptimizerConfig opt;
  EXPECT_DOUBLE_EQ(lr_at(opt, 0, ParamGroup::conv), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(opt, 9, ParamGroup::conv), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(opt, 10, ParamGroup::conv), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(opt, 25, ParamGroup::head), 2.5e-3);
  for (Index e = 0; e < 40; ++e)
    EXPECT_DOUBLE_EQ(lr_at(opt, e, ParamGroup::head), 10.0 * lr_at(opt, e, ParamGroup::conv));
  EXPECT_THROW(lr_at(opt, -1, ParamGroup::conv), UsageError);
}

TEST(Sgd, PlainStepWithoutMomentumOrDecay) {
  Tensord w({3}, {1.0, -2.0, 0.5}), v({3});
  const Tensord g({3}, {0.1, 0.2, -0.3});
  sgd_update(w, g, v, 0.5, 0.0, 0.0);
  EXPECT_EQ(w, Tensord({3}, {1.0 - 0.05, -2.0 - 0.1, 0.5 + 0.15}));
}

TEST(Sgd, TwoStepMomentumRecurrence) {
  const double lr = 0.1, g = 0.7, w0 = 2.0;
  Tensord w({1}, {w0}), v({1});
  const Tensord grad({1}, {g});
  sgd_update(w, grad, v, lr, 0.9, 0.0);
  sgd_update(w, grad, v, lr, 0.9, 0.0);
  EXPECT_NEAR(w(0), w0 - lr * g - lr * 1.9 * g, 1e-15);
  EXPECT_NEAR(v(0), 1.9 * g, 1e-15);
}

TEST(Sgd, DecayShrinksWeightsMonotonically) {
  Tensord w({2}, {3.0, -1.5}), v({2});
  const Tensord zero({2});
  double prev = w.values().cwiseAbs().sum();
  for (int t = 0; t < 50; ++t) {
    sgd_update(w, zero, v, 0.1, 0.5, 0.1);
    const double now = w.values().cwiseAbs().sum();
    EXPECT_LT(now, prev);
    EXPECT_GT(w(0), 0.0);
    EXPECT_LT(w(1), 0.0);
    prev = now;
  }
}

TEST(Sgd, StepAppliesHeadMultiplierAndRejectsNonFinite) {
  ModelConfig c = small_config();
  ModelParams p = init_params(c, 1);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros_like(p);
  for (auto& e : g.entries()) e.tensor->values().setConstant(1.0);
  OptimizerConfig hyper;
  hyper.momentum = 0.0;
  hyper.weight_decay = 0.0;
  OptimizerState st = OptimizerState::init(p, hyper);
  sgd_step(p, g, st, 12);
  EXPECT_DOUBLE_EQ(st.applied_lr_conv, 5e-4);
  EXPECT_DOUBLE_EQ(st.applied_lr_head, 5e-3);
  EXPECT_NEAR(before.head_bias(0) - p.head_bias(0), 5e-3, 1e-15);
  EXPECT_NEAR(before.conv[0].bias(0) - p.conv[0].bias(0), 5e-4, 1e-15);
  EXPECT_NEAR(before.theme_bias(0) - p.theme_bias(0), 5e-3, 1e-15);

  const ModelParams snapshot = p;
  g.conv[2].weight.values()[3] = NAN;
  EXPECT_THROW(sgd_step(p, g, st, 12), NumericError);
  EXPECT_EQ(p.head_weight, snapshot.head_weight);
  EXPECT_EQ(p.conv[0].weight, snapshot.conv[0].weight);
}

TEST(EmdBatchLoss, MeanOfPerSampleLoss) {
  Rng rng(90);
  Tensord logits({3, 10});
  for (Index i = 0; i < logits.size(); ++i) logits.values()[i] = rng.uniform(-1.0, 1.0);
  std::vector<ScoreDistribution> targets;
  double expected = 0;
  const Tensord p = softmax_forward(logits);
  for (Index n = 0; n < 3; ++n) {
    VoteHistogram h;
    for (int k = 0; k < 10; ++k) h.counts.push_back(rng.uniform_int(1, 9));
    targets.push_back(normalize_votes(h));
    expected += emd(Eigen::VectorXd(p.matrix().row(n).transpose()), targets.back().probs(), 2);
  }
  Tensord g;
  EXPECT_NEAR(emd_batch_loss(logits, targets, &g), expected / 3.0, 1e-15);
  EXPECT_EQ(g.shape(), logits.shape());
}

TEST(Train, TwoEpochsDescend) {
  const auto records = small_records(32, 11);
  for (std::uint64_t seed : {1, 2, 3}) {
    const TrainResult r = train(small_train(seed), records);
    ASSERT_EQ(r.log.size(), 2u);
    EXPECT_GE(r.log[0].mean_loss, 0.0);
    EXPECT_LT(r.log[1].mean_loss, r.log[0].mean_loss) << "seed " << seed;
  }
}

TEST(Train, DeterministicLog) {
  const auto records = small_records(16, 12);
  auto cfg = small_train(4);
  cfg.eval_every = 1;
  const auto val = small_records(6, 13);
  const TrainResult a = train(cfg, records, val), b = train(cfg, records, val);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].to_json().dump(), b.log[i].to_json().dump());
  for (std::size_t i = 0; i < a.params.entries().size(); ++i)
    EXPECT_EQ(*a.params.entries()[i].tensor, *b.params.entries()[i].tensor);
  ASSERT_TRUE(a.log.back().metrics.has_value());
  EXPECT_EQ(a.log.back().metrics->count, 6);
}

TEST(Train, HeadRateIsTenTimesConvRateEveryEpoch) {
  const auto records = small_records(8, 14);
  auto cfg = small_train(5, ModelVariant::resize);
  cfg.epochs = 12;
  cfg.optimizer.decay_every = 5;
  const TrainResult r = train(cfg, records);
  for (const auto& e : r.log) {
    EXPECT_DOUBLE_EQ(e.lr_head, 10.0 * e.lr_conv);
    EXPECT_DOUBLE_EQ(e.lr_conv, lr_at(cfg.optimizer, e.epoch, ParamGroup::conv));
  }
}

TEST(Train, EmptyDatasetIsRejected) {
  EXPECT_THROW(train(small_train(1), {}), Error);
}

TEST(Evaluate, PerfectPredictor) {
  const auto records = small_records(20, 15);
  std::vector<ScoreDistribution> truth;
  for (const auto& r : records) truth.push_back(normalize_votes(r.votes));
  const MetricReport m = summarize_predictions(truth, truth);
  EXPECT_EQ(m.count, 20);
  EXPECT_EQ(m.emd_r1, 0.0);
  EXPECT_EQ(m.emd_r2, 0.0);
  EXPECT_EQ(m.kl, 0.0);
  EXPECT_EQ(m.js, 0.0);
  EXPECT_EQ(m.chi2, 0.0);
  EXPECT_EQ(m.euclidean, 0.0);
  EXPECT_NEAR(m.cosine, 0.0, 1e-15);
  EXPECT_NEAR(*m.srcc_mean, 1.0, 1e-12);
  EXPECT_NEAR(*m.plcc_mean, 1.0, 1e-12);
  EXPECT_NEAR(*m.srcc_std, 1.0, 1e-12);
  EXPECT_NEAR(*m.plcc_std, 1.0, 1e-12);
  EXPECT_EQ(m.mse_mean, 0.0);
  EXPECT_EQ(m.correlation_errors(), 0);
}

TEST(Evaluate, ConstantPredictorFlagsCorrelations) {
  const auto records = small_records(10, 16);
  std::vector<ScoreDistribution> truth, constant;
  for (const auto& r : records) {
    truth.push_back(normalize_votes(r.votes));
    constant.emplace_back(Eigen::VectorXd::Constant(10, 0.1));
  }
  const MetricReport m = summarize_predictions(constant, truth);
  EXPECT_FALSE(m.srcc_mean.has_value());
  EXPECT_FALSE(m.plcc_std.has_value());
  EXPECT_EQ(m.correlation_errors(), 4);
  const auto j = m.to_json();
  EXPECT_TRUE(j["srcc_mean"].is_null());
  EXPECT_EQ(j["correlation_errors"], 4);
}

TEST(Evaluate, MatchesStandaloneMetrics) {
  const auto records = small_records(12, 17);
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 3);
  const MetricReport m = evaluate(p, records, c.variant, c.canvas);
  const auto preds = predict_records(p, records, c.variant, c.canvas);
  ASSERT_EQ(preds.size(), records.size());
  double emd1 = 0, kl = 0, js = 0;
  Eigen::VectorXd pm(12), tm(12), ps(12), ts(12);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto t = normalize_votes(records[i].votes);
    EXPECT_NEAR(preds[i].probs().sum(), 1.0, 1e-12);
    emd1 += emd(preds[i], t, 1);
    kl += kl_divergence(t.probs(), preds[i].probs());
    js += divergences(t, preds[i]).js;
    const auto k = static_cast<Eigen::Index>(i);
    pm[k] = dist_mean(preds[i]);
    tm[k] = dist_mean(t);
    ps[k] = dist_std(preds[i]);
    ts[k] = dist_std(t);
  }
  EXPECT_NEAR(m.emd_r1, emd1 / 12.0, 1e-12);
  EXPECT_NEAR(m.kl, kl / 12.0, 1e-12);
  EXPECT_NEAR(m.js, js / 12.0, 1e-12);
  EXPECT_NEAR(*m.srcc_mean, srcc(pm, tm), 1e-12);
  EXPECT_NEAR(*m.plcc_std, plcc(ps, ts), 1e-12);
  EXPECT_NEAR(m.mse_mean, mse(pm, tm), 1e-12);
}

TEST(Evaluate, TestTimePredictionAveragesSixViews) {
  const auto records = small_records(2, 18);
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 4);
  const auto preds = predict_records(p, records, c.variant, c.canvas);
  for (std::size_t r = 0; r < records.size(); ++r) {
    std::vector<BatchSample> s;
    for (Image& v : test_time_views(records[r].load_image()))
      s.push_back({std::move(v), normalize_votes(records[r].votes), records[r].theme});
    const auto each = predict_distribution(p, make_batch(s, TransformMode::pad, c.canvas), c.variant);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(10);
    for (const auto& d : each) avg += d.probs();
    avg /= 6.0;
    EXPECT_LE((avg - preds[r].probs()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Evaluate, EmptyRecordSetIsRejected) {
  const ModelConfig c = small_config();
  EXPECT_THROW(evaluate(init_params(c, 1), {}, c.variant, c.canvas), UsageError);
}
