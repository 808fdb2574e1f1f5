#pragma once

#include <map>
#include <string>

#include "spqi/model.hpp"

namespace spqi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container file: 4-byte magic "SPQ1", little-endian u32 format version,
/// u64 metadata length, a JSON metadata block (variant, dims, seeds, id maps,
/// section directory, free-form extra), then raw little-endian f64 sections,
/// one per named parameter tensor. Round-trips are bit-exact.
void save_checkpoint(const Model& model,
                     const std::map<std::string, std::string>& extra,
                     const std::string& path);

struct Checkpoint {
  Model model;
  std::map<std::string, std::string> extra;
};

/// Loads a checkpoint; version or magic mismatch raises IoError naming both
/// versions.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spqi
