#include "aesth/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "aesth/ablation.hpp"
#include "aesth/checkpoint.hpp"
#include "aesth/error.hpp"
#include "aesth/image.hpp"
#include "aesth/properties.hpp"
#include "aesth/synth.hpp"
#include "aesth/training.hpp"

namespace aesth {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

class VerifyFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A config-file key and the flag that overrides it.
struct Binding {
  std::string key;
  std::string flag;
  std::function<void(const json&)> set;
};

template <typename T>
Binding binding(std::string key, std::string flag, T& target) {
  return {std::move(key), std::move(flag), [&target](const json& v) { target = v.get<T>(); }};
}

Binding bind_path(std::string key, std::string flag, fs::path& target) {
  return {std::move(key), std::move(flag), [&target](const json& v) { target = v.get<std::string>(); }};
}

struct Command {
  CLI::App* app = nullptr;
  std::vector<Binding> bindings;
  std::function<int(std::ostream&, std::ostream&)> run;
};

json read_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError("config " + path.string() + ": expected a JSON object");
  return j;
}

// Keys unknown to every command are rejected; keys of other commands are
// ignored so one file can drive a whole pipeline.
void apply_config(const json& cfg, const Command& active, const std::map<std::string, Command>& all) {
  std::set<std::string> known;
  for (const auto& [name, c] : all)
    for (const auto& b : c.bindings) known.insert(b.key);
  for (const auto& [key, value] : cfg.items()) {
    if (!known.count(key)) throw UsageError("config: unknown key '" + key + "'");
    for (const auto& b : active.bindings) {
      if (b.key != key || (!b.flag.empty() && active.app->count(b.flag) > 0)) continue;
      try {
        b.set(value);
      } catch (const json::exception& e) {
        throw UsageError("config key '" + key + "': " + e.what());
      }
    }
  }
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.jsonl" : p; }

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create " + dir.string() + (ec ? ": " + ec.message() : ""));
}

// Flags that must agree with the checkpoint when given.
struct ModelChecks {
  Index canvas = 0;
  std::string variant, pooling;
  void verify(const CLI::App& app, const ModelConfig& mc) const {
    if (app.count("--canvas") && canvas != mc.canvas)
      throw ConfigMismatchError("--canvas " + std::to_string(canvas) + " does not match the checkpoint canvas " +
                                std::to_string(mc.canvas));
    if (app.count("--variant") && parse_variant(variant) != mc.variant)
      throw ConfigMismatchError(std::string("--variant ") + variant + " does not match the checkpoint variant " +
                                to_string(mc.variant));
    if (app.count("--pooling") && parse_pooling(pooling) != mc.pooling)
      throw ConfigMismatchError(std::string("--pooling ") + pooling + " does not match the checkpoint pooling " +
                                to_string(mc.pooling));
  }
};

int exit_code(const std::exception& e) {
  if (dynamic_cast<const VerifyFailed*>(&e)) return kExitVerifyFailed;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
    return kExitIo;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const ConfigMismatchError*>(&e) || dynamic_cast<const UsageError*>(&e)) return kExitConfig;
  if (dynamic_cast<const Error*>(&e)) return kExitInput;
  return kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aesthetic score-distribution prediction on zero-padded canvases", "aesth"};
  app.require_subcommand(1);
  app.fallthrough();
  fs::path config_file;
  app.add_option("--config", config_file, "JSON config with flat namespaced keys; flags win");

  std::map<std::string, Command> commands;

  // synth -------------------------------------------------------------------
  SynthConfig synth_cfg;
  fs::path synth_out;
  {
    Command& c = commands["synth"];
    c.app = app.add_subcommand("synth", "Generate a synthetic dataset (PPM images + manifest.jsonl)");
    c.app->add_option("--out", synth_out, "Output directory");
    c.app->add_option("--seed", synth_cfg.seed, "Generator seed");
    c.app->add_option("-n,--count", synth_cfg.count, "Number of records");
    c.app->add_option("--themes", synth_cfg.themes, "Number of themes");
    c.app->add_option("--bins", synth_cfg.bins, "Score bins K");
    c.app->add_option("--min-extent", synth_cfg.min_extent, "Smallest image extent");
    c.app->add_option("--max-extent", synth_cfg.max_extent, "Largest image extent");
    c.app->add_option("--voters", synth_cfg.voters, "Votes per image");
    c.app->add_option("--vote-sigma", synth_cfg.vote_sigma, "Spread of the voters around the true mean");
    c.bindings = {bind_path("out", "--out", synth_out),
                  binding("seed", "--seed", synth_cfg.seed),
                  binding("synth.count", "--count", synth_cfg.count),
                  binding("synth.themes", "--themes", synth_cfg.themes),
                  binding("synth.bins", "--bins", synth_cfg.bins),
                  binding("synth.min_extent", "--min-extent", synth_cfg.min_extent),
                  binding("synth.max_extent", "--max-extent", synth_cfg.max_extent),
                  binding("synth.voters", "--voters", synth_cfg.voters),
                  binding("synth.vote_sigma", "--vote-sigma", synth_cfg.vote_sigma)};
    c.run = [&](std::ostream& o, std::ostream&) {
      require(!synth_out.empty(), "synth: --out is required");
      require(synth_cfg.count >= 1 && synth_cfg.themes >= 1 && synth_cfg.bins >= 2 && synth_cfg.voters >= 1,
              "synth: count, themes, voters must be >= 1 and bins >= 2");
      require(synth_cfg.min_extent >= 8 && synth_cfg.max_extent >= synth_cfg.min_extent,
              "synth: extents must satisfy 8 <= min <= max");
      SynthDataset data = synth_generate(synth_cfg);
      make_dir(synth_out);
      write_synth_dataset(synth_out, data, synth_cfg);
      o << generation_stats(data, synth_cfg).dump(2) << '\n';
      return kExitOk;
    };
  }

  // train -------------------------------------------------------------------
  TrainConfig train_cfg;
  std::string train_variant = to_string(train_cfg.model.variant), train_pooling = to_string(train_cfg.model.pooling);
  std::string train_augment = to_string(train_cfg.augment);
  fs::path train_data, train_val, train_out;
  {
    Command& c = commands["train"];
    c.app = app.add_subcommand("train", "Train a model; writes model.ckpt, train-log.jsonl and train-loss.csv");
    c.app->add_option("--data", train_data, "Training manifest (or dataset directory)");
    c.app->add_option("--val", train_val, "Validation manifest (or dataset directory)");
    c.app->add_option("--out", train_out, "Output directory");
    c.app->add_option("--seed", train_cfg.seed, "Training seed");
    c.app->add_option("--canvas", train_cfg.model.canvas, "Canvas extent S");
    c.app->add_option("--variant", train_variant, "pad_roi_theme | pad_roi | resize | resized_pad | random_crop");
    c.app->add_option("--pooling", train_pooling, "max | align");
    c.app->add_option("--roi-out", train_cfg.model.roi_out, "ROI pool output extent");
    c.app->add_option("--themes", train_cfg.model.themes, "Number of themes");
    c.app->add_option("--bins", train_cfg.model.bins, "Score bins K");
    c.app->add_option("--epochs", train_cfg.epochs, "Epochs");
    c.app->add_option("--batch", train_cfg.batch_size, "Mini-batch size");
    c.app->add_option("--lr", train_cfg.optimizer.lr_base, "Base learning rate");
    c.app->add_option("--momentum", train_cfg.optimizer.momentum, "SGD momentum");
    c.app->add_option("--weight-decay", train_cfg.optimizer.weight_decay, "Weight decay");
    c.app->add_option("--augment", train_augment, "none | flip | flip_crop");
    c.app->add_option("--eval-every", train_cfg.eval_every, "Validate every n epochs (0 = never)");
    c.bindings = {bind_path("train.data", "--data", train_data),
                  bind_path("train.val", "--val", train_val),
                  bind_path("out", "--out", train_out),
                  binding("seed", "--seed", train_cfg.seed),
                  binding("canvas", "--canvas", train_cfg.model.canvas),
                  binding("variant", "--variant", train_variant),
                  binding("model.pooling", "--pooling", train_pooling),
                  binding("model.roi_out", "--roi-out", train_cfg.model.roi_out),
                  binding("model.themes", "--themes", train_cfg.model.themes),
                  binding("model.bins", "--bins", train_cfg.model.bins),
                  binding("train.epochs", "--epochs", train_cfg.epochs),
                  binding("train.batch_size", "--batch", train_cfg.batch_size),
                  binding("train.lr_base", "--lr", train_cfg.optimizer.lr_base),
                  binding("train.momentum", "--momentum", train_cfg.optimizer.momentum),
                  binding("train.weight_decay", "--weight-decay", train_cfg.optimizer.weight_decay),
                  binding("train.augment", "--augment", train_augment),
                  binding("train.eval_every", "--eval-every", train_cfg.eval_every)};
    c.run = [&](std::ostream& o, std::ostream& e) {
      require(!train_data.empty(), "train: --data is required");
      require(!train_out.empty(), "train: --out is required");
      train_cfg.model.variant = parse_variant(train_variant);
      train_cfg.model.pooling = parse_pooling(train_pooling);
      train_cfg.augment = parse_augment(train_augment);
      train_cfg.validate();
      auto records = load_manifest(manifest_path(train_data), train_cfg.model.bins, train_cfg.model.themes);
      load_images(records);
      std::vector<DatasetRecord> val;
      if (!train_val.empty()) {
        val = load_manifest(manifest_path(train_val), train_cfg.model.bins, train_cfg.model.themes);
        load_images(val);
      }
      make_dir(train_out);
      std::ofstream log = open_out(train_out / "train-log.jsonl");
      std::ofstream loss_csv = open_out(train_out / "train-loss.csv");
      ojson header;
      header["type"] = "header";
      header["variant"] = to_string(train_cfg.model.variant);
      header["train_records"] = records.size();
      header["val_records"] = val.size();
      header["config"] = train_cfg.to_json();
      log << header.dump() << '\n' << std::flush;
      loss_csv << "epoch,mean_loss,lr_conv,lr_head\n" << std::flush;
      loss_csv.precision(17);
      train_cfg.on_epoch = [&](const EpochLog& ep) {
        ojson line;
        line["type"] = "epoch";
        const ojson fields = ep.to_json();
        for (const auto& [k, v] : fields.items()) line[k] = v;
        log << line.dump() << '\n' << std::flush;
        loss_csv << ep.epoch << ',' << ep.mean_loss << ',' << ep.lr_conv << ',' << ep.lr_head << '\n' << std::flush;
        e << "epoch " << ep.epoch << " loss " << ep.mean_loss << '\n';
      };
      TrainResult result;
      try {
        result = train(train_cfg, records, val);
      } catch (const NumericError& ex) {
        ojson line;
        line["type"] = "abort";
        line["error"] = ex.what();
        log << line.dump() << '\n' << std::flush;
        throw;
      }
      const fs::path ckpt = train_out / "model.ckpt";
      save_checkpoint(ckpt, result.params);
      ojson summary;
      summary["checkpoint"] = ckpt.generic_string();
      summary["variant"] = to_string(train_cfg.model.variant);
      summary["epochs"] = result.log.size();
      summary["final_loss"] = result.log.empty() ? 0.0 : result.log.back().mean_loss;
      if (!result.log.empty() && result.log.back().metrics) summary["validation"] = result.log.back().metrics->to_json();
      o << summary.dump(2) << '\n';
      return kExitOk;
    };
  }

  // eval --------------------------------------------------------------------
  fs::path eval_ckpt, eval_data, eval_csv;
  bool eval_unpadded = false;
  ModelChecks eval_checks;
  {
    Command& c = commands["eval"];
    c.app = app.add_subcommand("eval", "Evaluate a checkpoint; prints the metric report as JSON");
    c.app->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
    c.app->add_option("--data", eval_data, "Manifest (or dataset directory)");
    c.app->add_option("--csv", eval_csv, "Also write per-record metric rows here");
    c.app->add_flag("--unpadded", eval_unpadded, "Diagnostic: feed resized, unpadded inputs");
    c.app->add_option("--canvas", eval_checks.canvas, "Must match the checkpoint");
    c.app->add_option("--variant", eval_checks.variant, "Must match the checkpoint");
    c.app->add_option("--pooling", eval_checks.pooling, "Must match the checkpoint");
    c.bindings = {bind_path("eval.checkpoint", "--checkpoint", eval_ckpt),
                  bind_path("eval.data", "--data", eval_data),
                  bind_path("eval.csv", "--csv", eval_csv),
                  binding("eval.unpadded", "--unpadded", eval_unpadded),
                  binding("canvas", "--canvas", eval_checks.canvas),
                  binding("variant", "--variant", eval_checks.variant),
                  binding("model.pooling", "--pooling", eval_checks.pooling)};
    c.run = [&](std::ostream& o, std::ostream& e) {
      require(!eval_ckpt.empty() && !eval_data.empty(), "eval: --checkpoint and --data are required");
      const ModelParams params = load_checkpoint(eval_ckpt);
      const ModelConfig& mc = params.config;
      eval_checks.verify(*commands["eval"].app, mc);
      auto records = load_manifest(manifest_path(eval_data), mc.bins, mc.themes);
      load_images(records);
      std::optional<TransformMode> transform;
      if (eval_unpadded) {
        e << "eval: --unpadded is a diagnostic path (resized inputs, full-canvas region)\n";
        transform = TransformMode::resize;
      }
      const MetricReport report = evaluate(params, records, mc.variant, mc.canvas, 0, transform);
      if (!eval_csv.empty()) open_out(eval_csv) << report.to_csv();
      o << report.to_json().dump(2) << '\n';
      return kExitOk;
    };
  }

  // predict -----------------------------------------------------------------
  fs::path predict_ckpt, predict_image;
  int predict_theme = 0;
  ModelChecks predict_checks;
  {
    Command& c = commands["predict"];
    c.app = app.add_subcommand("predict", "Score distribution of one PPM image");
    c.app->add_option("--checkpoint", predict_ckpt, "Checkpoint file");
    c.app->add_option("--image", predict_image, "P6 PPM image");
    c.app->add_option("--theme", predict_theme, "Theme id");
    c.app->add_option("--canvas", predict_checks.canvas, "Must match the checkpoint");
    c.app->add_option("--variant", predict_checks.variant, "Must match the checkpoint");
    c.app->add_option("--pooling", predict_checks.pooling, "Must match the checkpoint");
    c.bindings = {bind_path("predict.checkpoint", "--checkpoint", predict_ckpt),
                  bind_path("predict.image", "--image", predict_image),
                  binding("predict.theme", "--theme", predict_theme),
                  binding("canvas", "--canvas", predict_checks.canvas),
                  binding("variant", "--variant", predict_checks.variant),
                  binding("model.pooling", "--pooling", predict_checks.pooling)};
    c.run = [&](std::ostream& o, std::ostream&) {
      require(!predict_ckpt.empty() && !predict_image.empty(), "predict: --checkpoint and --image are required");
      const ModelParams params = load_checkpoint(predict_ckpt);
      const ModelConfig& mc = params.config;
      predict_checks.verify(*commands["predict"].app, mc);
      if (predict_theme < 0 || predict_theme >= mc.themes)
        throw UsageError("predict: theme " + std::to_string(predict_theme) + " not in 0.." + std::to_string(mc.themes - 1));
      const auto [w, h] = ppm_extents(predict_image);
      if (transform_for(mc.variant) == TransformMode::pad && (w > mc.canvas || h > mc.canvas))
        throw SizeError("predict: image " + std::to_string(w) + "x" + std::to_string(h) + " exceeds the canvas " +
                        std::to_string(mc.canvas) + "; use a model trained with --canvas " +
                        std::to_string(std::max(w, h)) + " or larger");
      DatasetRecord rec;
      rec.image = predict_image.string();
      rec.votes.counts.assign(static_cast<std::size_t>(mc.bins), 1);
      rec.theme = predict_theme;
      const ScoreDistribution p = predict_records(params, {rec}, mc.variant, mc.canvas).front();
      ojson j;
      j["image"] = predict_image.generic_string();
      j["theme"] = predict_theme;
      j["variant"] = to_string(mc.variant);
      j["probabilities"] = std::vector<double>(p.probs().data(), p.probs().data() + p.bins());
      j["mean"] = dist_mean(p.probs());
      j["std"] = dist_std(p.probs());
      o << j.dump(2) << '\n';
      return kExitOk;
    };
  }

  // verify ------------------------------------------------------------------
  VerifyOptions verify_opts;
  bool mutate_roi = false;
  fs::path verify_out;
  {
    Command& c = commands["verify"];
    c.app = app.add_subcommand("verify", "Run the property suites; exit 1 on any failure");
    c.app->add_option("--scope", verify_opts.scope, "all | oracle | gradient | isolation | invariance | metrics | data | training");
    c.app->add_option("--seed", verify_opts.seed, "Seed of the randomized instances");
    c.app->add_flag("--mutate-roi", mutate_roi, "Corrupt the ROI bin bounds (tests the tester)");
    c.app->add_option("--out", verify_out, "Also write the JSON report here");
    c.bindings = {binding("verify.scope", "--scope", verify_opts.scope), binding("seed", "--seed", verify_opts.seed),
                  binding("verify.mutate_roi", "--mutate-roi", mutate_roi), bind_path("out", "--out", verify_out)};
    c.run = [&](std::ostream& o, std::ostream&) {
      testing_hooks::corrupt_roi_bins = mutate_roi;
      std::vector<PropertyResult> results;
      try {
        results = run_properties(verify_opts);
      } catch (...) {
        testing_hooks::corrupt_roi_bins = false;
        throw;
      }
      testing_hooks::corrupt_roi_bins = false;
      int failed = 0;
      ojson report = ojson::array();
      for (const auto& r : results) {
        failed += !r.passed;
        o << (r.passed ? "PASS " : "FAIL ") << r.scope << '/' << r.name << "  measured " << r.measured << " bound "
          << r.tolerance << "  " << r.detail << '\n';
        report.push_back(to_json(r));
      }
      o << results.size() - static_cast<std::size_t>(failed) << '/' << results.size() << " properties passed\n";
      if (!verify_out.empty()) open_out(verify_out) << report.dump(2) << '\n';
      if (failed) {
        std::string names;
        for (const auto& r : results)
          if (!r.passed) names += (names.empty() ? "" : ", ") + r.name;
        throw VerifyFailed("failed: " + names);
      }
      return kExitOk;
    };
  }

  // ablate ------------------------------------------------------------------
  const AblationConfig ablate_defaults;
  json ablate_keys = json::object();  // flat ablation keys gathered from config and flags
  fs::path ablate_out, ablate_cache;
  struct {
    std::uint64_t seed = 0;
    Index canvas = 0, count = 0, epochs = 0, batch = 0;
    double lr = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> studies;
    std::string augment;
    fs::path data;
  } af;
  {
    Command& c = commands["ablate"];
    c.app = app.add_subcommand("ablate", "Desk-scale ablation over input variants, ROI size and pooling");
    c.app->add_option("--out", ablate_out, "Output directory (ablation.json, ablation.csv, timing.json)");
    c.app->add_option("--data", af.data, "Dataset directory from `aesth synth` (default: generate in memory)");
    c.app->add_option("--seed", af.seed, "Seed of the in-memory dataset");
    c.app->add_option("--seeds", af.seeds, "Training seeds")->delimiter(',');
    c.app->add_option("--studies", af.studies, "variants,roi_size,align,augment")->delimiter(',');
    c.app->add_option("--canvas", af.canvas, "Canvas extent S");
    c.app->add_option("-n,--count", af.count, "Records of the in-memory dataset");
    c.app->add_option("--epochs", af.epochs, "Epochs per run");
    c.app->add_option("--batch", af.batch, "Mini-batch size");
    c.app->add_option("--lr", af.lr, "Base learning rate");
    c.app->add_option("--augment", af.augment, "Training augmentation of the main arms");
    c.app->add_option("--cache", ablate_cache, "Reuse finished runs stored in this directory");
    const ojson ablate_default_keys = ablate_defaults.to_json();
    for (const auto& [key, v] : ablate_default_keys.items())
      c.bindings.push_back({"ablate." + key, "", [&ablate_keys, key = key](const json& val) { ablate_keys[key] = val; }});
    c.bindings.push_back(bind_path("out", "--out", ablate_out));
    c.bindings.push_back(bind_path("ablate.cache", "--cache", ablate_cache));
    c.run = [&](std::ostream& o, std::ostream& e) {
      require(!ablate_out.empty(), "ablate: --out is required");
      const CLI::App& a = *commands["ablate"].app;
      if (a.count("--data")) ablate_keys["data_dir"] = af.data.string();
      if (a.count("--seed")) ablate_keys["data_seed"] = af.seed;
      if (a.count("--seeds")) ablate_keys["seeds"] = af.seeds;
      if (a.count("--studies")) ablate_keys["studies"] = af.studies;
      if (a.count("--canvas")) ablate_keys["canvas"] = af.canvas;
      if (a.count("--count")) ablate_keys["count"] = af.count;
      if (a.count("--epochs")) ablate_keys["epochs"] = af.epochs;
      if (a.count("--batch")) ablate_keys["batch_size"] = af.batch;
      if (a.count("--lr")) ablate_keys["lr_base"] = af.lr;
      if (a.count("--augment")) ablate_keys["augment"] = af.augment;
      AblationConfig cfg = AblationConfig::from_json(ablate_keys);
      cfg.cache_dir = ablate_cache;
      make_dir(ablate_out);
      const AblationReport report = run_ablation(cfg, [&](const std::string& line) { e << line << '\n' << std::flush; });
      const ojson j = report.to_json();
      open_out(ablate_out / "ablation.json") << j.dump(2) << '\n';
      open_out(ablate_out / "ablation.csv") << report.to_csv();
      open_out(ablate_out / "timing.json") << report.timing_json().dump(2) << '\n';
      o << j.dump(2) << '\n';
      return kExitOk;
    };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      if (!config_file.empty()) apply_config(read_config(config_file), cmd, commands);
      return cmd.run(out, err);
    } catch (const std::exception& e) {
      err << "aesth " << name << ": " << e.what() << '\n';
      if (dynamic_cast<const SizeError*>(&e) && name != "predict") err << "hint: pass a larger --canvas\n";
      return exit_code(e);
    }
  }
  return kExitConfig;
}

}  // namespace aesth
