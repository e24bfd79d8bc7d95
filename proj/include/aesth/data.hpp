#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aesth/distmetrics.hpp"
#include "aesth/image.hpp"
#include "aesth/random.hpp"
#include "aesth/roi.hpp"

namespace aesth {

using ThemeId = int;

/// One labelled photo: an image source, its vote histogram and its theme.
struct DatasetRecord {
  /// Image path; relative paths resolve against the manifest directory.
  std::string image;
  VoteHistogram votes;
  ThemeId theme = 0;
  /// Decoded raster, filled by `load_images` or by the synthetic generator.
  std::shared_ptr<const Raster8> raster;

  /// The record's image in [0, 1]; reads the PPM file if no raster is attached.
  Image load_image() const;
};

/// Decodes every record's PPM once and attaches the raster.
void load_images(std::vector<DatasetRecord>& records);

/// Fixed-size batch of canvases with the image rectangle of each sample.
struct PaddedBatch {
  Tensord canvas;  // N x 3 x S x S
  std::vector<Region> regions;
  std::vector<ThemeId> themes;
  std::vector<ScoreDistribution> targets;

  Index size() const { return static_cast<Index>(regions.size()); }
  Index canvas_size() const { return canvas.dim(2); }
};

/// How each image becomes an S x S network input.
enum class TransformMode {
  pad,          // anchor at the origin, zero elsewhere
  resize,       // bilinear resize to S x S
  resized_pad,  // aspect-preserving resize so the longer edge is S, then pad
  random_crop,  // resize the shorter edge to S, then an S x S crop
};

const char* to_string(TransformMode mode);

struct PaddedImage {
  Image canvas;
  Region region;
};

/// Copies the image to the top-left of a zero S x S canvas.
PaddedImage pad_image(const Image& img, Index canvas);

/// Number of distinct training views: original, flip and four corner crops.
inline constexpr int kViewCount = 6;

/// View `index` of the augmentation collection: 0 original, 1 horizontal
/// flip, 2..5 the top-left, top-right, bottom-left, bottom-right crops of
/// size floor(7h/8) x floor(7w/8).
Image augmentation_view(const Image& img, int index);

/// Uniform draw from the six-view collection.
Image augment(const Image& img, Rng& rng);

/// All six views in index order.
std::vector<Image> test_time_views(const Image& img);

/// Input to make_batch: an already-augmented image with its labels.
struct BatchSample {
  Image image;
  ScoreDistribution target;
  ThemeId theme = 0;
};

/// Builds the network input for `mode`. `rng` drives random_crop offsets;
/// without one the crop is centred.
PaddedBatch make_batch(const std::vector<BatchSample>& samples, TransformMode mode, Index canvas,
                       Rng* rng = nullptr);

/// Transform of a single image to an S x S canvas under `mode`.
PaddedImage transform_image(const Image& img, TransformMode mode, Index canvas, Rng* rng = nullptr);

/// JSON-lines manifest: {"image": "rel/path.ppm", "votes": [int x K], "theme": int}.
/// `bins` fixes K; `themes`, when given, bounds the theme ids.
std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path, Index bins,
                                         std::optional<int> themes = std::nullopt);

void write_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

}  // namespace aesth
