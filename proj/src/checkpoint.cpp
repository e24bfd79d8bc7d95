#include "aesth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace aesth {

namespace {

constexpr char kMagic[8] = {'A', 'E', 'S', 'T', 'H', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& where) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != sizeof(T)) throw ParseError(where + ": truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, std::uint32_t len, const std::string& where) {
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) throw ParseError(where + ": truncated checkpoint");
  return s;
}

ModelConfig read_header(std::istream& in, const std::string& where) {
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) throw ParseError(where + ": not a checkpoint file");
  const auto version = get<std::uint32_t>(in, where);
  if (version != kCheckpointVersion)
    throw ParseError(where + ": unsupported checkpoint version " + std::to_string(version));
  const auto digest = get<std::uint64_t>(in, where);
  const auto len = get<std::uint32_t>(in, where);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(get_string(in, len, where)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad config block: " + e.what());
  }
  if (cfg.digest() != digest) throw ParseError(where + ": config digest mismatch");
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, params.config.digest());
  const std::string cfg = params.config.to_json().dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto entries = params.entries();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor->rank()));
    for (Index d : e.tensor->shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(e.tensor->data()),
              static_cast<std::streamsize>(e.tensor->size() * static_cast<Index>(sizeof(double))));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string where = path.string();
  const ModelConfig cfg = read_header(in, where);
  ModelParams params = init_params(cfg, 0);
  auto entries = params.entries();
  const auto count = get<std::uint32_t>(in, where);
  if (count != entries.size()) throw ParseError(where + ": expected " + std::to_string(entries.size()) + " tensors");
  for (auto& e : entries) {
    const std::string name = get_string(in, get<std::uint32_t>(in, where), where);
    if (name != e.name) throw ParseError(where + ": expected tensor '" + e.name + "', found '" + name + "'");
    const auto rank = get<std::uint32_t>(in, where);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get<std::uint64_t>(in, where)));
    if (shape != e.tensor->shape())
      throw ParseError(where + ": tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                       shape_string(e.tensor->shape()));
    const auto bytes = static_cast<std::streamsize>(e.tensor->size() * static_cast<Index>(sizeof(double)));
    in.read(reinterpret_cast<char*>(e.tensor->data()), bytes);
    if (in.gcount() != bytes) throw ParseError(where + ": truncated tensor '" + name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(where + ": trailing bytes");
  return params;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_header(in, path.string());
}

}  // namespace aesth
