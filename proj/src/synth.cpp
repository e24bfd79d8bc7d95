#include "aesth/synth.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace aesth {

namespace {

// Separable (2r+1)^2 box filter with clamp-to-edge borders.
Image box_blur(const Image& img, int radius) {
  if (radius <= 0) return img;
  const Index w = img.width(), h = img.height();
  const double norm = 1.0 / (2 * radius + 1);
  Image tmp(w, h), out(w, h);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += img.at(std::clamp<Index>(x + d, 0, w - 1), y, c);
        tmp.at(x, y, c) = acc * norm;
      }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < Image::kChannels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += tmp.at(x, std::clamp<Index>(y + d, 0, h - 1), c);
        out.at(x, y, c) = acc * norm;
      }
  return out;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

Eigen::VectorXd discretized_gaussian(double mean, double sigma, Index bins) {
  Eigen::VectorXd p(bins);
  for (Index i = 0; i < bins; ++i) {
    const double score = static_cast<double>(i + 1);
    p[i] = normal_cdf((score + 0.5 - mean) / sigma) - normal_cdf((score - 0.5 - mean) / sigma);
  }
  return p / p.sum();
}

SynthDataset synth_generate(const SynthConfig& cfg) {
  if (cfg.count < 0 || cfg.themes < 1 || cfg.bins < 2 || cfg.voters < 1 || cfg.min_extent < 8 ||
      cfg.max_extent < cfg.min_extent || cfg.min_period <= 0 || cfg.max_period < cfg.min_period ||
      cfg.vote_sigma <= 0 || cfg.min_aspect > cfg.max_aspect)
    throw UsageError("synth: invalid configuration");

  SynthDataset data;
  data.records.reserve(static_cast<std::size_t>(cfg.count));
  data.latents.reserve(static_cast<std::size_t>(cfg.count));
  for (Index i = 0; i < cfg.count; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    SynthLatent lat;
    do {
      lat.width = rng.uniform_int(cfg.min_extent, cfg.max_extent);
      lat.height = rng.uniform_int(cfg.min_extent, cfg.max_extent);
    } while (static_cast<double>(lat.width) < cfg.min_aspect * static_cast<double>(lat.height) ||
             static_cast<double>(lat.width) > cfg.max_aspect * static_cast<double>(lat.height));
    lat.period = rng.uniform(cfg.min_period, cfg.max_period);
    lat.blur = static_cast<int>(rng.uniform_int(0, 2));
    lat.theme = static_cast<ThemeId>(rng.uniform_int(0, cfg.themes - 1));
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double base[3];
    for (double& b : base) b = rng.uniform(0.3, 0.7);

    Image img(lat.width, lat.height);
    const double kx = 2.0 * std::numbers::pi * std::cos(angle) / lat.period;
    const double ky = 2.0 * std::numbers::pi * std::sin(angle) / lat.period;
    for (Index y = 0; y < lat.height; ++y)
      for (Index x = 0; x < lat.width; ++x) {
        const double stripe = cfg.stripe_amplitude * std::sin(kx * x + ky * y + phase);
        const double noise = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
        for (Index c = 0; c < Image::kChannels; ++c) img.at(x, y, c) = base[c] + stripe + noise;
      }
    img = box_blur(img, lat.blur);

    const double sign = lat.theme % 2 == 0 ? 1.0 : -1.0;
    lat.true_mean = std::clamp(5.0 + sign * (lat.blur - 1) * 1.5 + (lat.period - 10.0) / 4.0, 1.0,
                               static_cast<double>(cfg.bins));
    const Eigen::VectorXd pmf = discretized_gaussian(lat.true_mean, cfg.vote_sigma, cfg.bins);
    DatasetRecord rec;
    rec.votes.counts.assign(static_cast<std::size_t>(cfg.bins), 0);
    for (int v = 0; v < cfg.voters; ++v) {
      const double u = rng.uniform();
      double acc = 0.0;
      Index bin = cfg.bins - 1;
      for (Index k = 0; k < cfg.bins; ++k) {
        acc += pmf[k];
        if (u < acc) {
          bin = k;
          break;
        }
      }
      ++rec.votes.counts[static_cast<std::size_t>(bin)];
    }
    rec.theme = lat.theme;
    std::ostringstream name;
    name << "images/" << std::setw(5) << std::setfill('0') << i << ".ppm";
    rec.image = name.str();
    rec.raster = std::make_shared<const Raster8>(Raster8::quantize(img));
    data.records.push_back(std::move(rec));
    data.latents.push_back(lat);
  }
  return data;
}

nlohmann::ordered_json generation_stats(const SynthDataset& data, const SynthConfig& cfg) {
  // [parity][blur] accumulators of dist_mean
  double sum[2][3] = {};
  long count[2][3] = {};
  double total_mean = 0.0;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& lat = data.latents[i];
    const double m = dist_mean(normalize_votes(data.records[i].votes));
    sum[lat.theme % 2][lat.blur] += m;
    ++count[lat.theme % 2][lat.blur];
    total_mean += m;
  }
  nlohmann::ordered_json j;
  j["count"] = data.records.size();
  j["seed"] = cfg.seed;
  j["themes"] = cfg.themes;
  j["bins"] = cfg.bins;
  j["voters"] = cfg.voters;
  j["mean_score"] = data.records.empty() ? 0.0 : total_mean / static_cast<double>(data.records.size());
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (int parity = 0; parity < 2; ++parity)
    for (int blur = 0; blur < 3; ++blur) {
      nlohmann::ordered_json g;
      g["theme_parity"] = parity == 0 ? "even" : "odd";
      g["blur"] = blur;
      g["count"] = count[parity][blur];
      g["mean_score"] = count[parity][blur] ? sum[parity][blur] / static_cast<double>(count[parity][blur]) : 0.0;
      groups.push_back(g);
    }
  j["groups"] = groups;
  return j;
}

void write_synth_dataset(const std::filesystem::path& dir, SynthDataset& data, const SynthConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  for (auto& rec : data.records) {
    const std::filesystem::path file = dir / rec.image;
    write_ppm(file, *rec.raster);
    rec.image = file.string();
  }
  write_manifest(dir / "manifest.jsonl", data.records);
  std::ofstream stats(dir / "generation-stats.json", std::ios::binary);
  if (!stats) throw IoError("cannot write " + (dir / "generation-stats.json").string());
  stats << generation_stats(data, cfg).dump(2) << '\n';
}

}  // namespace aesth
