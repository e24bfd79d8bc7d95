#include "aesth/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aesth/error.hpp"

namespace aesth {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::ordered_json synth_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["count"] = c.count;
  j["themes"] = c.themes;
  j["bins"] = c.bins;
  j["min_extent"] = c.min_extent;
  j["max_extent"] = c.max_extent;
  j["min_aspect"] = c.min_aspect;
  j["max_aspect"] = c.max_aspect;
  j["min_period"] = c.min_period;
  j["max_period"] = c.max_period;
  j["voters"] = c.voters;
  j["vote_sigma"] = c.vote_sigma;
  j["stripe_amplitude"] = c.stripe_amplitude;
  j["noise_amplitude"] = c.noise_amplitude;
  j["seed"] = c.seed;
  return j;
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::ordered_json metrics_json(const AblationMetrics& m) {
  nlohmann::ordered_json j;
  j["srcc_mean"] = optional_json(m.srcc_mean);
  j["srcc_std"] = optional_json(m.srcc_std);
  j["emd_r1"] = m.emd_r1;
  j["kl"] = m.kl;
  return j;
}

AblationMetrics metrics_from(const nlohmann::json& j) {
  AblationMetrics m;
  m.srcc_mean = optional_from(j.at("srcc_mean"));
  m.srcc_std = optional_from(j.at("srcc_std"));
  m.emd_r1 = j.at("emd_r1").get<double>();
  m.kl = j.at("kl").get<double>();
  return m;
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

TrainConfig train_config(const AblationConfig& cfg, const AblationArm& arm, std::uint64_t seed) {
  TrainConfig tc;
  tc.model.canvas = cfg.canvas;
  tc.model.themes = cfg.data.themes;
  tc.model.bins = cfg.data.bins;
  tc.model.variant = arm.variant;
  tc.model.pooling = arm.pooling;
  tc.model.roi_out = arm.roi_out;
  tc.optimizer.lr_base = cfg.lr_base;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = seed;
  tc.augment = arm.augment;
  tc.eval_every = 0;
  tc.threads = cfg.threads;
  return tc;
}

// Everything that determines a run's result.
std::string run_key(const AblationConfig& cfg, const std::string& data_digest, const TrainConfig& tc) {
  nlohmann::ordered_json j;
  j["data"] = data_digest;
  j["train_fraction"] = cfg.train_fraction;
  j["train"] = tc.to_json();
  std::ostringstream os;
  os << std::hex << fnv1a(j.dump());
  return os.str();
}

std::string file_label(std::string label) {
  for (char& c : label)
    if (c == '/') c = '-';
  return label;
}

}  // namespace

void AblationConfig::validate() const {
  if (data_dir.empty() && data.count < 10) throw UsageError("ablate: dataset needs at least 10 records");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("ablate: train_fraction must be in (0, 1)");
  if (seeds.empty()) throw UsageError("ablate: no seeds");
  if (epochs < 1 || batch_size < 1) throw UsageError("ablate: epochs and batch size must be >= 1");
  if (!(lr_base > 0.0)) throw UsageError("ablate: lr_base must be positive");
  for (const auto& s : studies)
    if (s != "variants" && s != "roi_size" && s != "align" && s != "augment") throw UsageError("ablate: unknown study '" + s + "'");
}

nlohmann::ordered_json AblationConfig::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = data.count;
  j["themes"] = data.themes;
  j["bins"] = data.bins;
  j["data_seed"] = data.seed;
  j["data_dir"] = data_dir.generic_string();
  j["train_fraction"] = train_fraction;
  j["canvas"] = canvas;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_base"] = lr_base;
  j["augment"] = to_string(augment);
  j["seeds"] = seeds;
  j["studies"] = studies;
  j["roi_out"] = roi_out;
  j["small_roi_out"] = small_roi_out;
  return j;
}

AblationConfig AblationConfig::from_json(const nlohmann::json& j) {
  AblationConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "count") c.data.count = v.get<Index>();
      else if (key == "themes") c.data.themes = v.get<int>();
      else if (key == "bins") c.data.bins = v.get<Index>();
      else if (key == "data_seed") c.data.seed = v.get<std::uint64_t>();
      else if (key == "data_dir") c.data_dir = v.get<std::string>();
      else if (key == "train_fraction") c.train_fraction = v.get<double>();
      else if (key == "canvas") c.canvas = v.get<Index>();
      else if (key == "epochs") c.epochs = v.get<Index>();
      else if (key == "batch_size") c.batch_size = v.get<Index>();
      else if (key == "lr_base") c.lr_base = v.get<double>();
      else if (key == "augment") c.augment = parse_augment(v.get<std::string>());
      else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "studies") c.studies = v.get<std::vector<std::string>>();
      else if (key == "roi_out") c.roi_out = v.get<Index>();
      else if (key == "small_roi_out") c.small_roi_out = v.get<Index>();
      else throw SchemaError("ablate config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("ablate config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<AblationArm> ablation_arms(const AblationConfig& cfg) {
  auto wants = [&](const char* s) { return std::find(cfg.studies.begin(), cfg.studies.end(), s) != cfg.studies.end(); };
  std::vector<AblationArm> arms;
  const AblationArm full{to_string(ModelVariant::pad_roi_theme), ModelVariant::pad_roi_theme, PoolingKind::max,
                         cfg.roi_out, cfg.augment};
  if (wants("variants")) {
    for (ModelVariant v : {ModelVariant::pad_roi_theme, ModelVariant::pad_roi, ModelVariant::resize,
                           ModelVariant::resized_pad, ModelVariant::random_crop})
      arms.push_back({to_string(v), v, PoolingKind::max, cfg.roi_out, cfg.augment});
  } else if (wants("roi_size") || wants("align") || wants("augment")) {
    arms.push_back(full);  // reference arm of the other studies
  }
  if (wants("roi_size")) {
    AblationArm a = full;
    a.label += "/roi" + std::to_string(cfg.small_roi_out);
    a.roi_out = cfg.small_roi_out;
    arms.push_back(a);
  }
  if (wants("align")) {
    AblationArm a = full;
    a.label += "/align";
    a.pooling = PoolingKind::align;
    arms.push_back(a);
  }
  if (wants("augment")) {
    AblationArm a = full;
    a.augment = cfg.augment == AugmentMode::none ? AugmentMode::flip_crop : AugmentMode::none;
    a.label += std::string("/") + to_string(a.augment);
    arms.push_back(a);
  }
  return arms;
}

const ArmSummary& AblationReport::arm(const std::string& label) const {
  for (const auto& a : arms)
    if (a.arm.label == label) return a;
  throw UsageError("ablation report has no arm '" + label + "'");
}

nlohmann::ordered_json AblationReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config.to_json();
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& a : arms) {
    nlohmann::ordered_json e;
    e["label"] = a.arm.label;
    e["variant"] = to_string(a.arm.variant);
    e["pooling"] = to_string(a.arm.pooling);
    e["roi_out"] = a.arm.roi_out;
    e["augment"] = to_string(a.arm.augment);
    e["mean"] = metrics_json(a.mean);
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (const auto& r : a.runs) {
      nlohmann::ordered_json s = metrics_json(r.metrics);
      s["seed"] = r.seed;
      seeds.push_back(s);
    }
    e["per_seed"] = seeds;
    list.push_back(e);
  }
  j["arms"] = list;
  return j;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "label,variant,pooling,roi_out,seed,srcc_mean,srcc_std,emd_r1,kl\n";
  auto row = [&](const ArmSummary& a, const std::string& seed, const AblationMetrics& m) {
    os << a.arm.label << ',' << to_string(a.arm.variant) << ',' << to_string(a.arm.pooling) << ',' << a.arm.roi_out << ','
       << seed << ',' << csv_number(m.srcc_mean) << ',' << csv_number(m.srcc_std) << ',' << m.emd_r1 << ',' << m.kl
       << '\n';
  };
  for (const auto& a : arms) {
    for (const auto& r : a.runs) row(a, std::to_string(r.seed), r.metrics);
    row(a, "mean", a.mean);
  }
  return os.str();
}

nlohmann::ordered_json AblationReport::timing_json() const {
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& a : arms)
    for (const auto& r : a.runs) {
      nlohmann::ordered_json e;
      e["label"] = r.label;
      e["seed"] = r.seed;
      e["seconds"] = r.seconds;
      e["cpu_seconds"] = r.cpu_seconds;
      e["cached"] = r.cached;
      list.push_back(e);
    }
  return list;
}

double AblationReport::cpu_seconds_of(const std::vector<std::string>& labels) const {
  double total = 0.0;
  for (const auto& l : labels)
    for (const auto& r : arm(l).runs) total += r.cpu_seconds;
  return total;
}

AblationReport run_ablation(const AblationConfig& cfg, const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  std::vector<DatasetRecord> records;
  std::string data_digest;
  if (cfg.data_dir.empty()) {
    records = synth_generate(cfg.data).records;
    data_digest = synth_json(cfg.data).dump();
  } else {
    const auto manifest = cfg.data_dir / "manifest.jsonl";
    records = load_manifest(manifest, cfg.data.bins, cfg.data.themes);
    load_images(records);
    std::ifstream in(manifest, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    data_digest = bytes.str();
  }
  if (records.size() < 2) throw UsageError("ablate: dataset needs at least 2 records");
  auto split = static_cast<std::ptrdiff_t>(std::llround(cfg.train_fraction * static_cast<double>(records.size())));
  split = std::clamp<std::ptrdiff_t>(split, 1, static_cast<std::ptrdiff_t>(records.size()) - 1);
  const std::vector<DatasetRecord> train_set(records.begin(), records.begin() + split);
  const std::vector<DatasetRecord> test_set(records.begin() + split, records.end());
  if (!cfg.cache_dir.empty()) std::filesystem::create_directories(cfg.cache_dir);

  AblationReport report;
  report.config = cfg;
  for (const AblationArm& arm : ablation_arms(cfg)) {
    ArmSummary summary;
    summary.arm = arm;
    for (std::uint64_t seed : cfg.seeds) {
      const TrainConfig tc = train_config(cfg, arm, seed);
      AblationRun run;
      run.label = arm.label;
      run.seed = seed;
      const std::filesystem::path cache_file =
          cfg.cache_dir.empty() ? std::filesystem::path{}
                                : cfg.cache_dir / (file_label(arm.label) + "-seed" + std::to_string(seed) + "-" +
                                                   run_key(cfg, data_digest, tc) + ".json");
      if (!cache_file.empty() && std::filesystem::exists(cache_file)) {
        std::ifstream in(cache_file);
        const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.contains("metrics") && j.contains("seconds") && j.contains("cpu_seconds")) {
          run.metrics = metrics_from(j.at("metrics"));
          run.seconds = j.at("seconds").get<double>();
          run.cpu_seconds = j.at("cpu_seconds").get<double>();
          run.cached = true;
        }
      }
      if (!run.cached) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::clock_t c0 = std::clock();
        const TrainResult trained = train(tc, train_set);
        const MetricReport m = evaluate(trained.params, test_set, arm.variant, cfg.canvas, cfg.threads);
        run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        run.cpu_seconds = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
        run.metrics = {m.srcc_mean, m.srcc_std, m.emd_r1, m.kl};
        if (!cache_file.empty()) {
          nlohmann::ordered_json j;
          j["metrics"] = metrics_json(run.metrics);
          j["seconds"] = run.seconds;
          j["cpu_seconds"] = run.cpu_seconds;
          const auto tmp = cache_file.string() + ".tmp";
          std::ofstream(tmp) << j.dump(2) << '\n';
          std::filesystem::rename(tmp, cache_file);
        }
      }
      if (progress) {
        std::ostringstream os;
        os << arm.label << " seed " << seed << ": srcc_mean " << csv_number(run.metrics.srcc_mean) << " srcc_std "
           << csv_number(run.metrics.srcc_std) << " emd_r1 " << run.metrics.emd_r1 << " kl " << run.metrics.kl << " ("
           << (run.cached ? "cached, " : "") << run.seconds << " s, " << run.cpu_seconds << " cpu s)";
        progress(os.str());
      }
      summary.runs.push_back(run);
    }
    const double n = static_cast<double>(summary.runs.size());
    AblationMetrics& mean = summary.mean;
    mean.srcc_mean = mean.srcc_std = 0.0;
    for (const auto& r : summary.runs) {
      mean.emd_r1 += r.metrics.emd_r1 / n;
      mean.kl += r.metrics.kl / n;
      if (mean.srcc_mean && r.metrics.srcc_mean) *mean.srcc_mean += *r.metrics.srcc_mean / n;
      else mean.srcc_mean.reset();
      if (mean.srcc_std && r.metrics.srcc_std) *mean.srcc_std += *r.metrics.srcc_std / n;
      else mean.srcc_std.reset();
    }
    report.arms.push_back(std::move(summary));
  }
  return report;
}

}  // namespace aesth
