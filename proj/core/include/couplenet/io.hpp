#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "couplenet/config.hpp"
#include "couplenet/heads.hpp"
#include "couplenet/synth.hpp"

namespace couplenet {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint container; layout documented in docs/checkpoint_format.md.
struct Checkpoint {
  RunConfig config;
  ModelParams params;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr int kManifestVersion = 1;

/// Dataset manifest as JSON (schema in docs/manifest_schema.md).
std::string manifest_to_json(const Dataset& dataset);
Dataset dataset_from_manifest(std::string_view text);

/// True when regenerating from the manifest's seed and parameters reproduces
/// every recorded scene exactly.
bool manifest_matches_regeneration(const Dataset& from_manifest);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace couplenet
