#include "aesth/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "aesth/parallel.hpp"

namespace aesth {

double lr_at(const OptimizerConfig& opt, Index epoch, ParamGroup group) {
  if (epoch < 0) throw UsageError("lr_at: epoch must be >= 0");
  const double base = opt.lr_base * std::pow(opt.decay_factor, static_cast<double>(epoch / opt.decay_every));
  return group == ParamGroup::head ? base * opt.head_multiplier : base;
}

OptimizerState OptimizerState::init(const ModelParams& params, const OptimizerConfig& hyper) {
  if (hyper.decay_every < 1) throw UsageError("optimizer: decay_every must be >= 1");
  return {hyper, ModelParams::zeros_like(params), 0.0, 0.0, 0};
}

void sgd_update(Tensord& weight, const Tensord& grad, Tensord& velocity, double lr, double momentum,
                double weight_decay) {
  require_same_shape(weight, grad, "sgd_update");
  require_same_shape(weight, velocity, "sgd_update");
  velocity.values() = momentum * velocity.values() + (grad.values() + weight_decay * weight.values());
  weight.values() -= lr * velocity.values();
}

void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, Index epoch) {
  auto w = params.entries();
  auto g = grads.entries();
  auto v = state.velocity.entries();
  if (w.size() != g.size() || w.size() != v.size()) throw DimensionError("sgd_step: parameter sets differ");
  for (std::size_t i = 0; i < w.size(); ++i) {
    require_same_shape(*w[i].tensor, *g[i].tensor, "sgd_step");
    if (!g[i].tensor->all_finite()) throw NumericError("sgd_step: non-finite gradient in " + g[i].name);
  }
  const double lr_conv = lr_at(state.hyper, epoch, ParamGroup::conv);
  const double lr_head = lr_at(state.hyper, epoch, ParamGroup::head);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double lr = w[i].group == ParamGroup::head ? lr_head : lr_conv;
    sgd_update(*w[i].tensor, *g[i].tensor, *v[i].tensor, lr, state.hyper.momentum, state.hyper.weight_decay);
  }
  state.applied_lr_conv = lr_conv;
  state.applied_lr_head = lr_head;
  ++state.steps;
  ++params.version;
}

// ---------------------------------------------------------------------------
// metrics

int MetricReport::correlation_errors() const {
  return !srcc_mean + !plcc_mean + !srcc_std + !plcc_std;
}

nlohmann::ordered_json MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["euclidean"] = euclidean;
  j["kl"] = kl;
  j["js"] = js;
  j["chi2"] = chi2;
  j["emd_r1"] = emd_r1;
  j["emd_r2"] = emd_r2;
  j["cosine"] = cosine;
  j["srcc_mean"] = opt(srcc_mean);
  j["plcc_mean"] = opt(plcc_mean);
  j["srcc_std"] = opt(srcc_std);
  j["plcc_std"] = opt(plcc_std);
  j["mse_mean"] = mse_mean;
  j["count"] = count;
  j["correlation_errors"] = correlation_errors();
  return j;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "record,emd_r1,emd_r2,euclidean,kl,js,chi2,cosine,pred_mean,true_mean,pred_std,true_std\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RecordMetrics& r = records[i];
    os << i << ',' << r.emd_r1 << ',' << r.emd_r2 << ',' << r.div.euclidean << ',' << r.div.kl << ',' << r.div.js
       << ',' << r.div.chi2 << ',' << r.div.cosine_distance << ',' << r.pred_mean << ',' << r.true_mean << ','
       << r.pred_std << ',' << r.true_std << '\n';
  }
  return os.str();
}

MetricReport summarize_predictions(const std::vector<ScoreDistribution>& predicted,
                                   const std::vector<ScoreDistribution>& truth) {
  if (predicted.empty()) throw UsageError("evaluate: empty record set");
  if (predicted.size() != truth.size()) throw DimensionError("evaluate: prediction/truth count mismatch");
  MetricReport rep;
  rep.count = static_cast<Index>(predicted.size());
  const Index n = rep.count;
  Eigen::VectorXd pm(n), tm(n), ps(n), ts(n);
  for (Index i = 0; i < n; ++i) {
    const ScoreDistribution& p = predicted[static_cast<std::size_t>(i)];
    const ScoreDistribution& t = truth[static_cast<std::size_t>(i)];
    RecordMetrics r;
    r.emd_r1 = emd(p, t, 1);
    r.emd_r2 = emd(p, t, 2);
    r.div = divergences(t, p);
    r.pred_mean = pm[i] = dist_mean(p);
    r.true_mean = tm[i] = dist_mean(t);
    r.pred_std = ps[i] = dist_std(p);
    r.true_std = ts[i] = dist_std(t);
    rep.euclidean += r.div.euclidean;
    rep.kl += r.div.kl;
    rep.js += r.div.js;
    rep.chi2 += r.div.chi2;
    rep.cosine += r.div.cosine_distance;
    rep.emd_r1 += r.emd_r1;
    rep.emd_r2 += r.emd_r2;
    rep.records.push_back(r);
  }
  const double inv = 1.0 / static_cast<double>(n);
  rep.euclidean *= inv;
  rep.kl *= inv;
  rep.js *= inv;
  rep.chi2 *= inv;
  rep.cosine *= inv;
  rep.emd_r1 *= inv;
  rep.emd_r2 *= inv;
  auto guarded = [](auto&& fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const UndefinedCorrelationError&) {
      return std::nullopt;
    } catch (const DimensionError&) {
      return std::nullopt;
    }
  };
  rep.srcc_mean = guarded([&] { return srcc(pm, tm); });
  rep.plcc_mean = guarded([&] { return plcc(pm, tm); });
  rep.srcc_std = guarded([&] { return srcc(ps, ts); });
  rep.plcc_std = guarded([&] { return plcc(ps, ts); });
  rep.mse_mean = mse(pm, tm);
  return rep;
}

namespace {

constexpr std::size_t kEvalChunk = 8;  // records per forward call

}  // namespace

std::vector<ScoreDistribution> predict_records(const ModelParams& params, const std::vector<DatasetRecord>& records,
                                               ModelVariant variant, Index canvas, int threads,
                                               std::optional<TransformMode> transform) {
  ModelParams at_canvas = params;
  at_canvas.config.canvas = canvas;
  const TransformMode mode = transform.value_or(transform_for(variant));
  std::vector<ScoreDistribution> out;
  out.reserve(records.size());
  for (std::size_t begin = 0; begin < records.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(records.size(), begin + kEvalChunk);
    std::vector<BatchSample> samples;
    for (std::size_t r = begin; r < end; ++r) {
      const ScoreDistribution target = normalize_votes(records[r].votes);
      for (Image& view : test_time_views(records[r].load_image()))
        samples.push_back({std::move(view), target, records[r].theme});
    }
    const PaddedBatch batch = make_batch(samples, mode, canvas);
    const std::vector<ScoreDistribution> preds = predict_distribution(at_canvas, batch, variant, threads);
    for (std::size_t r = 0; r < end - begin; ++r) {
      Eigen::VectorXd avg = Eigen::VectorXd::Zero(params.config.bins);
      for (int v = 0; v < kViewCount; ++v) avg += preds[r * kViewCount + static_cast<std::size_t>(v)].probs();
      avg /= static_cast<double>(kViewCount);
      out.emplace_back(std::move(avg));
    }
  }
  return out;
}

MetricReport evaluate(const ModelParams& params, const std::vector<DatasetRecord>& records, ModelVariant variant,
                      Index canvas, int threads, std::optional<TransformMode> transform) {
  if (records.empty()) throw UsageError("evaluate: empty record set");
  std::vector<ScoreDistribution> truth;
  truth.reserve(records.size());
  for (const auto& r : records) truth.push_back(normalize_votes(r.votes));
  return summarize_predictions(predict_records(params, records, variant, canvas, threads, transform), truth);
}

// ---------------------------------------------------------------------------
// training loop

const char* to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::none: return "none";
    case AugmentMode::flip: return "flip";
    case AugmentMode::flip_crop: return "flip_crop";
  }
  return "?";
}

AugmentMode parse_augment(const std::string& name) {
  for (auto m : {AugmentMode::none, AugmentMode::flip, AugmentMode::flip_crop})
    if (name == to_string(m)) return m;
  throw UsageError("unknown augmentation '" + name + "'");
}

nlohmann::ordered_json EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["mean_loss"] = mean_loss;
  j["lr_conv"] = lr_conv;
  j["lr_head"] = lr_head;
  j["metrics"] = metrics ? metrics->to_json() : nlohmann::ordered_json::object();
  return j;
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
  if (eval_every < 0) throw UsageError("train: eval_every must be >= 0");
  if (optimizer.decay_every < 1) throw UsageError("train: decay_every must be >= 1");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model.to_json();
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["augment"] = to_string(augment);
  j["eval_every"] = eval_every;
  j["lr_base"] = optimizer.lr_base;
  j["momentum"] = optimizer.momentum;
  j["weight_decay"] = optimizer.weight_decay;
  j["head_multiplier"] = optimizer.head_multiplier;
  j["decay_every"] = optimizer.decay_every;
  j["decay_factor"] = optimizer.decay_factor;
  return j;
}

double emd_batch_loss(const Tensord& logits, const std::vector<ScoreDistribution>& targets, Tensord* grad_logits) {
  require_rank(logits, 2, "emd_batch_loss");
  const Index n = logits.dim(0);
  if (static_cast<Index>(targets.size()) != n) throw DimensionError("emd_batch_loss: target count mismatch");
  const Tensord probs = softmax_forward(logits);
  if (grad_logits) *grad_logits = Tensord(logits.shape());
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto p = probs.matrix().row(i).transpose();
    const Eigen::VectorXd& t = targets[static_cast<std::size_t>(i)].probs();
    if (t.size() != logits.dim(1)) throw DimensionError("emd_batch_loss: bin count mismatch");
    loss += emd(p, t, 2);
    if (grad_logits) grad_logits->matrix().row(i) = emd_loss_grad(p, t).transpose() / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

namespace {

Image training_view(const Image& img, AugmentMode mode, Rng& rng) {
  switch (mode) {
    case AugmentMode::none: return img;
    case AugmentMode::flip: return augmentation_view(img, static_cast<int>(rng.uniform_int(0, 1)));
    case AugmentMode::flip_crop: return augment(img, rng);
  }
  return img;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& train_set,
                  const std::vector<DatasetRecord>& validation_set) {
  config.validate();
  if (train_set.empty()) throw UsageError("train: empty training set");
  const ModelConfig& mc = config.model;
  const ModelVariant variant = mc.variant;
  const TransformMode mode = transform_for(variant);

  TrainResult result;
  result.params = init_params(mc, derive_seed(config.seed, 0));
  OptimizerState opt = OptimizerState::init(result.params, config.optimizer);

  std::vector<ScoreDistribution> targets;
  targets.reserve(train_set.size());
  for (const auto& r : train_set) targets.push_back(normalize_votes(r.votes));

  std::vector<std::size_t> order(train_set.size());
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    double loss_sum = 0.0;
    Index batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<BatchSample> samples;
      samples.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const DatasetRecord& rec = train_set[order[k]];
        samples.push_back({training_view(rec.load_image(), config.augment, rng), targets[order[k]], rec.theme});
      }
      const PaddedBatch batch = make_batch(samples, mode, mc.canvas, &rng);
      if (mode != TransformMode::pad && mode != TransformMode::resized_pad)
        for (const Region& r : batch.regions)
          if (r.x0 != 0 || r.y0 != 0 || r.x1 != mc.canvas || r.y1 != mc.canvas)
            throw UsageError("train: fixed-size variant produced a partial region");

      try {
        ForwardResult fwd = forward(result.params, batch, variant, true, config.threads);
        Tensord grad_logits;
        const double loss = emd_batch_loss(fwd.logits, batch.targets, &grad_logits);
        if (!std::isfinite(loss) || loss < 0) throw NumericError("loss is " + std::to_string(loss));
        const ModelParams grads = backward(result.params, fwd.cache, grad_logits, config.threads);
        sgd_step(result.params, grads, opt, epoch);
        loss_sum += loss * static_cast<double>(end - begin);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(order.size());
    entry.lr_conv = opt.applied_lr_conv;
    entry.lr_head = opt.applied_lr_head;
    const bool last = epoch + 1 == config.epochs;
    if (!validation_set.empty() && config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || last))
      entry.metrics = evaluate(result.params, validation_set, variant, mc.canvas, config.threads);
    if (config.on_epoch) config.on_epoch(entry);
    result.log.push_back(std::move(entry));
  }
  return result;
}

}  // namespace aesth
