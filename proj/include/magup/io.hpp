#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "magup/data.hpp"
#include "magup/model.hpp"
#include "magup/tensor.hpp"

namespace magup {

namespace fs = std::filesystem;

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

// Decodes any PNG to 8-bit gray (channels = 1) or RGB (channels = 3): palette
// and low bit depths are expanded, 16-bit is reduced, alpha is dropped.
Image8 read_png(const fs::path& path, std::size_t channels);
void write_png(const fs::path& path, const Image8& img);

enum class Split { train, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct SampleRecord {
  fs::path image;
  fs::path mask;
  Split split = Split::train;
};

// Pairs <root>/<split>/images/X.png with <root>/<split>/masks/X.png. When that
// split directory is absent but <root>/images exists, the root itself is used.
std::vector<SampleRecord> list_samples(const fs::path& root, Split split);

// Image / 255 (H x W x 3), mask >= 128 -> 1 (H x W). Throws IoError on decode
// failure or when extents differ.
std::pair<Tensor, Tensor> load_pair(const SampleRecord& record);
// Decodes in parallel; output order follows `records`.
std::vector<Sample> load_samples(const std::vector<SampleRecord>& records);

// Probability map (H x W in [0,1]) as 8-bit gray; `binary` thresholds at 0.5 first.
void write_mask_png(const fs::path& path, const Tensor& prob, bool binary);
// Gray PNG / 255 as an H x W map (no thresholding).
Tensor read_prob_png(const fs::path& path);

// Writes count train samples and test_count test samples (drawn after the train
// indices) under out/{train,test}/{images,masks}/NNNN.png.
void write_synth_dataset(const fs::path& out, const SynthConfig& cfg, std::size_t test_count);

}  // namespace magup
