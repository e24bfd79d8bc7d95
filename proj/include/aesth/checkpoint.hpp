#pragma once

#include <filesystem>

#include "aesth/model.hpp"

namespace aesth {

/// Binary parameter container, all integers and doubles little-endian:
///
///   magic "AESTHCKP" | u32 version | u64 config digest
///   u32 config length | config JSON (UTF-8)
///   u32 tensor count | per tensor: u32 name length, name, u32 rank,
///                                  u64 extents[rank], f64 values[]
///
/// Loading verifies the magic, the version, the digest against the embedded
/// config and every tensor shape against the shapes that config implies.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Reads only the header; returns the embedded config.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace aesth
