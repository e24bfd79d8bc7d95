#include "aesth/data.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace aesth {

Image DatasetRecord::load_image() const {
  if (raster) return raster->to_image();
  return read_ppm(image).to_image();
}

void load_images(std::vector<DatasetRecord>& records) {
  for (auto& r : records)
    if (!r.raster) r.raster = std::make_shared<const Raster8>(read_ppm(r.image));
}

const char* to_string(TransformMode mode) {
  switch (mode) {
    case TransformMode::pad: return "pad";
    case TransformMode::resize: return "resize";
    case TransformMode::resized_pad: return "resized_pad";
    case TransformMode::random_crop: return "random_crop";
  }
  return "?";
}

PaddedImage pad_image(const Image& img, Index canvas) {
  if (img.width() > canvas || img.height() > canvas)
    throw SizeError("pad_image: " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                    " image does not fit a " + std::to_string(canvas) + " canvas");
  PaddedImage out{Image(canvas, canvas), Region{0, 0, 0, img.width(), img.height()}};
  for (Index y = 0; y < img.height(); ++y)
    for (Index x = 0; x < img.width(); ++x)
      for (Index c = 0; c < Image::kChannels; ++c) out.canvas.at(x, y, c) = img.at(x, y, c);
  return out;
}

Image augmentation_view(const Image& img, int index) {
  if (img.width() < 8 || img.height() < 8) throw SizeError("augment: image extents must be >= 8");
  const Index cw = 7 * img.width() / 8, ch = 7 * img.height() / 8;
  const Index right = img.width() - cw, bottom = img.height() - ch;
  switch (index) {
    case 0: return img;
    case 1: return flip_horizontal(img);
    case 2: return crop(img, 0, 0, cw, ch);
    case 3: return crop(img, right, 0, cw, ch);
    case 4: return crop(img, 0, bottom, cw, ch);
    case 5: return crop(img, right, bottom, cw, ch);
    default: throw RangeError("augmentation_view: index " + std::to_string(index) + " not in 0..5");
  }
}

Image augment(const Image& img, Rng& rng) {
  return augmentation_view(img, static_cast<int>(rng.uniform_int(0, kViewCount - 1)));
}

std::vector<Image> test_time_views(const Image& img) {
  std::vector<Image> views;
  views.reserve(kViewCount);
  for (int i = 0; i < kViewCount; ++i) views.push_back(augmentation_view(img, i));
  return views;
}

PaddedImage transform_image(const Image& img, TransformMode mode, Index canvas, Rng* rng) {
  switch (mode) {
    case TransformMode::pad:
      return pad_image(img, canvas);
    case TransformMode::resize:
      return {resize_bilinear(img, canvas, canvas), Region{0, 0, 0, canvas, canvas}};
    case TransformMode::resized_pad: {
      const Index longer = std::max(img.width(), img.height());
      const auto scaled = [&](Index e) {
        return std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(e) * canvas / longer)));
      };
      const Index w = std::min(canvas, scaled(img.width()));
      const Index h = std::min(canvas, scaled(img.height()));
      return pad_image(resize_bilinear(img, w, h), canvas);
    }
    case TransformMode::random_crop: {
      const Index shorter = std::min(img.width(), img.height());
      const auto scaled = [&](Index e) {
        return std::max<Index>(canvas, static_cast<Index>(std::lround(static_cast<double>(e) * canvas / shorter)));
      };
      const Image big = resize_bilinear(img, scaled(img.width()), scaled(img.height()));
      const Index sx = big.width() - canvas, sy = big.height() - canvas;
      const Index ox = rng ? rng->uniform_int(0, sx) : sx / 2;
      const Index oy = rng ? rng->uniform_int(0, sy) : sy / 2;
      return {crop(big, ox, oy, canvas, canvas), Region{0, 0, 0, canvas, canvas}};
    }
  }
  throw UsageError("transform_image: unknown mode");
}

PaddedBatch make_batch(const std::vector<BatchSample>& samples, TransformMode mode, Index canvas, Rng* rng) {
  if (canvas < 1) throw SizeError("make_batch: canvas must be >= 1");
  const Index n = static_cast<Index>(samples.size());
  PaddedBatch batch;
  batch.canvas = Tensord({n, Image::kChannels, canvas, canvas});
  batch.regions.reserve(samples.size());
  batch.themes.reserve(samples.size());
  batch.targets.reserve(samples.size());
  for (Index i = 0; i < n; ++i) {
    const BatchSample& s = samples[static_cast<std::size_t>(i)];
    PaddedImage p = transform_image(s.image, mode, canvas, rng);
    if (p.canvas.width() != canvas || p.canvas.height() != canvas)
      throw SizeError("make_batch: transform produced a " + std::to_string(p.canvas.width()) + "x" +
                      std::to_string(p.canvas.height()) + " canvas");
    for (Index c = 0; c < Image::kChannels; ++c) {
      double* dst = batch.canvas.plane(i, c);
      for (Index y = 0; y < canvas; ++y)
        for (Index x = 0; x < canvas; ++x) dst[y * canvas + x] = p.canvas.at(x, y, c);
    }
    p.region.batch_index = i;
    batch.regions.push_back(p.region);
    batch.themes.push_back(s.theme);
    batch.targets.push_back(s.target);
  }
  return batch;
}

std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path, Index bins, std::optional<int> themes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::vector<DatasetRecord> records;
  std::string line;
  for (long lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("image") || !j.contains("votes") || !j.contains("theme"))
      throw SchemaError(where + ": expected keys image, votes, theme");
    if (j.size() != 3) throw SchemaError(where + ": unexpected keys");
    if (!j["image"].is_string() || !j["votes"].is_array() || !j["theme"].is_number_integer())
      throw SchemaError(where + ": wrong field types");
    DatasetRecord r;
    const std::filesystem::path img = j["image"].get<std::string>();
    r.image = (img.is_absolute() ? img : base / img).string();
    for (const auto& v : j["votes"]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw SchemaError(where + ": votes must be non-negative integers");
      r.votes.counts.push_back(v.get<std::int64_t>());
    }
    if (r.votes.bins() != bins)
      throw SchemaError(where + ": " + std::to_string(r.votes.bins()) + " votes, expected " + std::to_string(bins));
    if (r.votes.total() < 1) throw SchemaError(where + ": histogram has no votes");
    r.theme = j["theme"].get<int>();
    if (r.theme < 0 || (themes && r.theme >= *themes))
      throw SchemaError(where + ": theme " + std::to_string(r.theme) + " out of range");
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  for (const auto& r : records) {
    std::filesystem::path img = r.image;
    if (img.is_absolute() || !base.empty()) {
      const auto rel = std::filesystem::path(r.image).lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") img = rel;
    }
    nlohmann::ordered_json j;
    j["image"] = img.generic_string();
    j["votes"] = r.votes.counts;
    j["theme"] = r.theme;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace aesth
