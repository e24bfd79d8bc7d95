#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "aesth/data.hpp"

namespace aesth {

/// Synthetic stand-in for a rated photo collection.
///
/// Each image is an oriented sinusoidal stripe pattern over a random base
/// colour with fine pixel noise, box-blurred at level b in {0, 1, 2}. Its
/// true mean score is
///   mu = clamp(5 + s_t * (b - 1) * 1.5 + (period - 10) / 4, 1, K),
/// with s_t = +1 for even themes (blur rewarded) and -1 for odd themes
/// (blur penalised). Voters sample from a Gaussian(mu, sigma) discretised
/// over scores 1..K. The label therefore depends on the absolute pixel
/// period and on the theme.
struct SynthConfig {
  Index count = 2000;
  int themes = 4;
  Index bins = 10;
  Index min_extent = 64;
  Index max_extent = 128;
  double min_aspect = 0.5;
  double max_aspect = 2.0;
  double min_period = 4.0;
  double max_period = 16.0;
  int voters = 50;
  double vote_sigma = 1.5;
  double stripe_amplitude = 0.25;
  double noise_amplitude = 0.08;
  std::uint64_t seed = 0;
};

/// Latent generation parameters of one synthetic record.
struct SynthLatent {
  Index width = 0, height = 0;
  double period = 0.0;
  int blur = 0;
  ThemeId theme = 0;
  double true_mean = 0.0;
};

struct SynthDataset {
  std::vector<DatasetRecord> records;  // rasters attached, image = "images/NNNNN.ppm"
  std::vector<SynthLatent> latents;
};

/// Probability of each score 1..K under a Gaussian discretised to unit bins
/// and renormalised over the score range.
Eigen::VectorXd discretized_gaussian(double mean, double sigma, Index bins);

SynthDataset synth_generate(const SynthConfig& config);

/// Per-(theme parity, blur) counts and mean scores, plus global totals.
nlohmann::ordered_json generation_stats(const SynthDataset& data, const SynthConfig& config);

/// Writes images/*.ppm, manifest.jsonl and generation-stats.json under `dir`
/// and points each record's image at its file.
void write_synth_dataset(const std::filesystem::path& dir, SynthDataset& data, const SynthConfig& config);

}  // namespace aesth
