#pragma once

#include <cstdint>
#include <string>

#include "mhtn/network.hpp"

namespace mhtn {

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
};

// Self-describing binary container: "MHTN" magic, format version, config
// digest, seed, then each parameter group as name + shapes + little-endian
// 64-bit float payloads (row-major). Written atomically (tmp + rename).
void save_checkpoint(const std::string& path, const StarNetwork& net,
                     std::uint64_t config_digest, std::uint64_t seed);

// Header only; does not touch parameters.
CheckpointInfo read_checkpoint_info(const std::string& path);

// Loads parameters into a network built from the active config. Group names
// and shapes must match exactly, and the stored digest must equal
// expected_digest.
CheckpointInfo load_checkpoint(const std::string& path, StarNetwork& net,
                               std::uint64_t expected_digest);

// FNV-1a over the file bytes; used to compare runs for determinism.
std::uint64_t file_digest(const std::string& path);

// Write-to-temp-then-rename so readers never see a partial file.
void atomic_write(const std::string& path, const std::string& bytes);

}  // namespace mhtn
