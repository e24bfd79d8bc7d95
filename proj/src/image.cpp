#include "aesth/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace aesth {

Image::Image(Index width, Index height, double fill) : width_(width), height_(height) {
  if (width < 1 || height < 1)
    throw SizeError("Image: extents must be >= 1, got " + std::to_string(width) + "x" + std::to_string(height));
  pixels_.assign(static_cast<std::size_t>(width * height * kChannels), fill);
}

Image Raster8::to_image() const {
  Image img(width, height);
  for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels()[i] = rgb[i] / 255.0;
  return img;
}

Raster8 Raster8::quantize(const Image& img) {
  Raster8 r{img.width(), img.height(), std::vector<std::uint8_t>(img.pixels().size())};
  for (std::size_t i = 0; i < r.rgb.size(); ++i) {
    const double v = std::clamp(img.pixels()[i], 0.0, 1.0);
    r.rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return r;
}

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& where) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(ch);
  }
  if (tok.empty()) throw ParseError(where + ": truncated PPM header");
  return tok;
}

struct PpmHeader {
  Index width, height;
};

PpmHeader read_header(std::istream& in, const std::string& where) {
  if (header_token(in, where) != "P6") throw ParseError(where + ": not a binary PPM (P6)");
  try {
    const Index w = std::stol(header_token(in, where));
    const Index h = std::stol(header_token(in, where));
    const long maxval = std::stol(header_token(in, where));
    if (w < 1 || h < 1) throw ParseError(where + ": non-positive extents");
    if (maxval != 255) throw ParseError(where + ": only maxval 255 is supported");
    return {w, h};
  } catch (const std::logic_error&) {
    throw ParseError(where + ": malformed PPM header");
  }
}

}  // namespace

Raster8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PpmHeader hdr = read_header(in, path.string());
  Raster8 r{hdr.width, hdr.height, std::vector<std::uint8_t>(static_cast<std::size_t>(hdr.width * hdr.height * 3))};
  in.read(reinterpret_cast<char*>(r.rgb.data()), static_cast<std::streamsize>(r.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.rgb.size()))
    throw ParseError(path.string() + ": truncated PPM raster");
  return r;
}

std::pair<Index, Index> ppm_extents(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const PpmHeader hdr = read_header(in, path.string());
  return {hdr.width, hdr.height};
}

void write_ppm(const std::filesystem::path& path, const Raster8& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << raster.width << ' ' << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.rgb.data()), static_cast<std::streamsize>(raster.rgb.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image flip_horizontal(const Image& img) {
  Image out(img.width(), img.height());
  for (Index y = 0; y < img.height(); ++y)
    for (Index x = 0; x < img.width(); ++x)
      for (Index c = 0; c < Image::kChannels; ++c) out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

Image crop(const Image& img, Index x0, Index y0, Index width, Index height) {
  if (x0 < 0 || y0 < 0 || width < 1 || height < 1 || x0 + width > img.width() || y0 + height > img.height())
    throw SizeError("crop: window outside the image");
  Image out(width, height);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < Image::kChannels; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

namespace {

struct Tap {
  Index i0, i1;
  double frac;
};

std::vector<Tap> resize_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<Index>(std::floor(s));
    taps[static_cast<std::size_t>(d)] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& img, Index out_w, Index out_h) {
  if (out_w < 1 || out_h < 1) throw SizeError("resize_bilinear: output extents must be >= 1");
  if (out_w == img.width() && out_h == img.height()) return img;
  const auto xt = resize_taps(img.width(), out_w);
  const auto yt = resize_taps(img.height(), out_h);
  Image out(out_w, out_h);
  for (Index y = 0; y < out_h; ++y) {
    const Tap& ty = yt[static_cast<std::size_t>(y)];
    for (Index x = 0; x < out_w; ++x) {
      const Tap& tx = xt[static_cast<std::size_t>(x)];
      for (Index c = 0; c < Image::kChannels; ++c) {
        const double top = (1 - tx.frac) * img.at(tx.i0, ty.i0, c) + tx.frac * img.at(tx.i1, ty.i0, c);
        const double bot = (1 - tx.frac) * img.at(tx.i0, ty.i1, c) + tx.frac * img.at(tx.i1, ty.i1, c);
        out.at(x, y, c) = (1 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
  return out;
}

}  // namespace aesth
