#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "magup/config.hpp"
#include "magup/model.hpp"

namespace magup {

// File layout:
//   "MAGUP1\n"
//   "<header bytes> <header crc32, 8 hex digits>\n"
//   header: JSON {format, version, config, meta, tensors[{name, shape, offset, count}], blob_bytes, blob_crc32}
//   blob: little-endian float32 values, tensors back to back in manifest order
inline constexpr int kCheckpointVersion = 1;

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // in floats from the start of the blob
  std::size_t count = 0;
};

struct CheckpointInfo {
  RunConfig config;
  nlohmann::json meta;
  std::vector<ManifestEntry> manifest;
};

void save_checkpoint(const std::filesystem::path& path, SegModel& model, const RunConfig& cfg,
                     const nlohmann::json& meta = nlohmann::json::object());
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
// Rebuilds the model from the stored config and fills every parameter. BDC
// parameters may be absent (the model then has no BDC); anything else missing,
// extra or mis-shaped is an IoError.
SegModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

// Copy of `in` without the given component's parameters.
void strip_component(const std::filesystem::path& in, const std::filesystem::path& out, Component c);

std::uint32_t crc32_of(const void* data, std::size_t n);

}  // namespace magup
