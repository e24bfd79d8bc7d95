#include <algorithm>
#include <array>
#include <fstream>

#include <gtest/gtest.h>

#include "aesth/data.hpp"
#include "aesth/image.hpp"
#include "aesth/synth.hpp"
#include "test_util.hpp"

using namespace aesth;
using aesth::test::TempDir;

namespace {

Image random_image(Rng& rng, Index w, Index h) {
  Image img(w, h);
  for (double& v : img.pixels()) v = rng.uniform();
  return img;
}

ScoreDistribution uniform_target(Index bins) {
  return ScoreDistribution(Eigen::VectorXd::Constant(bins, 1.0 / static_cast<double>(bins)));
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST(PadImage, AnchoredAtOriginWithZeroPadding) {
  Rng rng(70);
  const Image img = random_image(rng, 4, 3);
  const PaddedImage p = pad_image(img, 8);
  EXPECT_EQ(p.region, (Region{0, 0, 0, 4, 3}));
  for (Index c = 0; c < 3; ++c) {
    int zeros = 0;
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) {
        if (x < 4 && y < 3)
          EXPECT_EQ(p.canvas.at(x, y, c), img.at(x, y, c));
        else
          zeros += p.canvas.at(x, y, c) == 0.0;
      }
    EXPECT_EQ(zeros, 52);
  }
}

TEST(PadImage, ExactFitAndOversize) {
  Rng rng(71);
  const Image img = random_image(rng, 8, 8);
  const PaddedImage p = pad_image(img, 8);
  EXPECT_EQ(p.canvas, img);
  EXPECT_EQ(p.region, (Region{0, 0, 0, 8, 8}));
  EXPECT_THROW(pad_image(random_image(rng, 9, 9), 8), SizeError);
  EXPECT_THROW(pad_image(random_image(rng, 4, 9), 8), SizeError);
}

TEST(PadImage, CroppingBackIsLossless) {
  Rng rng(72);
  for (int t = 0; t < 50; ++t) {
    const Image img = random_image(rng, rng.uniform_int(8, 64), rng.uniform_int(8, 64));
    const PaddedImage p = pad_image(img, 64);
    EXPECT_EQ(crop(p.canvas, p.region.x0, p.region.y0, p.region.width(), p.region.height()), img);
  }
}

TEST(Resize, IdentityExtents) {
  Rng rng(73);
  const Image img = random_image(rng, 13, 7);
  EXPECT_EQ(resize_bilinear(img, 13, 7), img);
}

TEST(Resize, ConstantStaysConstant) {
  const Image img(10, 6, 0.375);
  const Image out = resize_bilinear(img, 23, 4);
  for (double v : out.pixels()) EXPECT_NEAR(v, 0.375, 1e-15);
}

TEST(Resize, UpscaledRampFollowsLine) {
  const Index w = 8, h = 3;
  Image img(w, h);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) img.at(x, y, c) = 0.1 * static_cast<double>(x);
  const Image out = resize_bilinear(img, 2 * w, 2 * h);
  for (Index y = 0; y < 2 * h; ++y)
    for (Index x = 0; x < 2 * w; ++x) {
      const double src = std::clamp((static_cast<double>(x) + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(w - 1));
      EXPECT_NEAR(out.at(x, y, 1), 0.1 * src, 1e-12);
    }
}

TEST(Augment, CornerCropsAreSevenEighths) {
  Rng rng(74);
  const Image img = random_image(rng, 64, 64);
  for (int i = 2; i < kViewCount; ++i) {
    const Image v = augmentation_view(img, i);
    EXPECT_EQ(v.width(), 56);
    EXPECT_EQ(v.height(), 56);
  }
  const Image bottom_right = augmentation_view(img, 5);
  EXPECT_EQ(bottom_right.at(55, 55, 2), img.at(63, 63, 2));
  EXPECT_EQ(augmentation_view(img, 2).at(0, 0, 0), img.at(0, 0, 0));
  EXPECT_THROW(augmentation_view(img, 6), RangeError);
  EXPECT_THROW(augmentation_view(random_image(rng, 7, 20), 0), SizeError);
}

TEST(Augment, FlipIsInvolution) {
  Rng rng(75);
  const Image img = random_image(rng, 11, 9);
  const Image f = flip_horizontal(img);
  EXPECT_NE(f, img);
  EXPECT_EQ(f.at(0, 3, 1), img.at(10, 3, 1));
  EXPECT_EQ(flip_horizontal(f), img);
}

TEST(Augment, UniformOverSixViews) {
  Rng rng(76);
  Image img(16, 16);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) img.at(x, y, 0) = static_cast<double>(y * 16 + x);
  const std::vector<Image> views = test_time_views(img);
  std::array<int, kViewCount> hits{};
  const int draws = 6000;
  for (int t = 0; t < draws; ++t) {
    const Image a = augment(img, rng);
    const auto it = std::find(views.begin(), views.end(), a);
    ASSERT_NE(it, views.end());
    ++hits[static_cast<std::size_t>(it - views.begin())];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 1.0 / 6.0, 0.02);
}

TEST(TestTimeViews, SixViewsOriginalFirst) {
  Rng rng(77);
  const Image img = random_image(rng, 40, 24);
  const auto views = test_time_views(img);
  ASSERT_EQ(views.size(), 6u);
  EXPECT_EQ(views[0], img);
  EXPECT_EQ(views[1], flip_horizontal(img));
  for (int i = 0; i < kViewCount; ++i) EXPECT_EQ(views[static_cast<std::size_t>(i)], augmentation_view(img, i));
}

TEST(MakeBatch, PadRegionsAndTargets) {
  Rng rng(78);
  const auto t0 = normalize_votes({{1, 2, 3}}), t1 = normalize_votes({{0, 0, 5}});
  const std::vector<BatchSample> s{{random_image(rng, 60, 40), t0, 1}, {random_image(rng, 30, 90), t1, 2}};
  const PaddedBatch b = make_batch(s, TransformMode::pad, 128);
  EXPECT_EQ(b.canvas.shape(), (Shape{2, 3, 128, 128}));
  EXPECT_EQ(b.regions[0], (Region{0, 0, 0, 60, 40}));
  EXPECT_EQ(b.regions[1], (Region{1, 0, 0, 30, 90}));
  EXPECT_EQ(b.themes, (std::vector<ThemeId>{1, 2}));
  EXPECT_EQ(b.targets[1].probs(), t1.probs());
  EXPECT_EQ(b.canvas(1, 2, 89, 29), s[1].image.at(29, 89, 2));
  EXPECT_EQ(b.canvas(1, 2, 90, 29), 0.0);
}

TEST(MakeBatch, FixedSizeModesCoverTheCanvas) {
  Rng rng(79);
  const std::vector<BatchSample> s{{random_image(rng, 60, 40), uniform_target(3), 0},
                                   {random_image(rng, 30, 90), uniform_target(3), 0}};
  for (TransformMode m : {TransformMode::resize, TransformMode::random_crop}) {
    Rng crop_rng(5);
    const PaddedBatch b = make_batch(s, m, 32, &crop_rng);
    for (Index i = 0; i < 2; ++i) EXPECT_EQ(b.regions[static_cast<std::size_t>(i)], (Region{i, 0, 0, 32, 32}));
  }
  const PaddedBatch rp = make_batch(s, TransformMode::resized_pad, 30);
  EXPECT_EQ(rp.regions[0], (Region{0, 0, 0, 30, 20}));
  EXPECT_EQ(rp.regions[1], (Region{1, 0, 0, 10, 30}));
}

TEST(MakeBatch, OversizedPadThrows) {
  Rng rng(80);
  EXPECT_THROW(make_batch({{random_image(rng, 60, 40), uniform_target(3), 0}}, TransformMode::pad, 32), SizeError);
}

TEST(Manifest, EmptyFileGivesNoRecords) {
  TempDir dir("manifest");
  write_text(dir / "m.jsonl", "");
  EXPECT_TRUE(load_manifest(dir / "m.jsonl", 10).empty());
}

TEST(Manifest, ValidLine) {
  TempDir dir("manifest");
  write_text(dir / "m.jsonl", R"({"image": "a.ppm", "votes": [0,1,2,3,4,5,6,7,8,9], "theme": 3})"
                              "\n");
  const auto recs = load_manifest(dir / "m.jsonl", 10, 4);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].theme, 3);
  EXPECT_EQ(recs[0].votes.counts, (std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(std::filesystem::path(recs[0].image), dir / "a.ppm");
}

TEST(Manifest, SchemaAndParseErrors) {
  TempDir dir("manifest");
  write_text(dir / "short.jsonl", R"({"image": "a.ppm", "votes": [1,1,1,1,1,1,1,1,1], "theme": 0})"
                                  "\n");
  EXPECT_THROW(load_manifest(dir / "short.jsonl", 10), SchemaError);
  write_text(dir / "theme.jsonl", R"({"image": "a.ppm", "votes": [1,1,1], "theme": 4})"
                                  "\n");
  EXPECT_THROW(load_manifest(dir / "theme.jsonl", 3, 4), SchemaError);
  write_text(dir / "broken.jsonl", "{\"image\": \n");
  try {
    load_manifest(dir / "broken.jsonl", 3);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  EXPECT_THROW(load_manifest(dir / "absent.jsonl", 3), IoError);
}

TEST(Ppm, RoundTrip) {
  TempDir dir("ppm");
  Rng rng(81);
  Raster8 r{5, 3, {}};
  for (int i = 0; i < 45; ++i) r.rgb.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
  write_ppm(dir / "x.ppm", r);
  const Raster8 back = read_ppm(dir / "x.ppm");
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.rgb, r.rgb);
  EXPECT_EQ(ppm_extents(dir / "x.ppm"), std::make_pair(Index{5}, Index{3}));
}

TEST(Synth, DeterministicInSeed) {
  SynthConfig cfg;
  cfg.count = 20;
  cfg.seed = 9;
  const SynthDataset a = synth_generate(cfg), b = synth_generate(cfg);
  ASSERT_EQ(a.records.size(), 20u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].votes.counts, b.records[i].votes.counts);
    EXPECT_EQ(a.records[i].raster->rgb, b.records[i].raster->rgb);
  }
  cfg.seed = 10;
  EXPECT_NE(synth_generate(cfg).records[0].raster->rgb, a.records[0].raster->rgb);
}

TEST(Synth, RecordsHonourTheGenerator) {
  SynthConfig cfg;
  cfg.count = 200;
  cfg.seed = 3;
  const SynthDataset d = synth_generate(cfg);
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& lat = d.latents[i];
    const auto& rec = d.records[i];
    EXPECT_EQ(rec.votes.total(), 50);
    EXPECT_EQ(rec.votes.bins(), 10);
    EXPECT_GE(lat.width, 64);
    EXPECT_LE(lat.width, 128);
    EXPECT_GE(lat.height, 64);
    EXPECT_LE(lat.height, 128);
    const double aspect = static_cast<double>(lat.width) / static_cast<double>(lat.height);
    EXPECT_GE(aspect, 0.5 - 0.02);
    EXPECT_LE(aspect, 2.0 + 0.04);
    EXPECT_GE(lat.period, 4.0);
    EXPECT_LE(lat.period, 16.0);
    EXPECT_EQ(rec.raster->width, lat.width);
    EXPECT_EQ(rec.raster->height, lat.height);
    const double s = lat.theme % 2 == 0 ? 1.0 : -1.0;
    const double mu = std::clamp(5.0 + s * (lat.blur - 1) * 1.5 + (lat.period - 10.0) / 4.0, 1.0, 10.0);
    EXPECT_NEAR(lat.true_mean, mu, 1e-12);
  }
}

TEST(Synth, EvenThemesRewardBlur) {
  SynthConfig cfg;
  cfg.count = 600;
  cfg.seed = 4;
  const SynthDataset d = synth_generate(cfg);
  double sum[2] = {}, n[2] = {};
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    if (d.latents[i].blur != 2) continue;
    const int parity = d.latents[i].theme % 2;
    sum[parity] += dist_mean(normalize_votes(d.records[i].votes));
    n[parity] += 1;
  }
  ASSERT_GT(n[0], 10);
  ASSERT_GT(n[1], 10);
  EXPECT_GT(sum[0] / n[0], sum[1] / n[1] + 1.5);
}

TEST(Synth, DiscretizedGaussianIsADistribution) {
  const Eigen::VectorXd p = discretized_gaussian(5.5, 1.5, 10);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_NEAR(p[4], p[5], 1e-12);
  EXPECT_NEAR(dist_mean(p), 5.5, 1e-12);
}

TEST(Synth, WrittenDatasetReloads) {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.count = 5;
  cfg.seed = 2;
  SynthDataset d = synth_generate(cfg);
  write_synth_dataset(dir.path(), d, cfg);
  EXPECT_TRUE(std::filesystem::exists(dir / "generation-stats.json"));
  auto recs = load_manifest(dir / "manifest.jsonl", 10, 4);
  ASSERT_EQ(recs.size(), 5u);
  load_images(recs);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].votes.counts, d.records[i].votes.counts);
    EXPECT_EQ(recs[i].raster->rgb, d.records[i].raster->rgb);
  }
}
