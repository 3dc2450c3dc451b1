#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "magup/rng.hpp"
#include "magup/tensor.hpp"

namespace magup {

// Multi-scale augmentation. Picks s from `scales`, resizes to round(s * size)
// (image bilinear, mask nearest), then random-crops back to size when larger
// or resizes back when smaller. Mask stays binary.
std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, Rng& rng, std::size_t size,
                                  const std::vector<double>& scales);
// Same, with the scale fixed (crop offset still drawn from rng).
std::pair<Tensor, Tensor> augment_at(const Tensor& image, const Tensor& mask, Rng& rng, std::size_t size,
                                     double scale);

struct SynthConfig {
  std::size_t count = 16;
  std::size_t size = 64;
  std::size_t blobs_min = 1;
  std::size_t blobs_max = 3;
  double area_min = 0.04;  // total mask area as a fraction of the image
  double area_max = 0.30;
  double contrast_min = 0.25;
  double contrast_max = 0.55;
  double blur_min = 0.6;  // boundary blur sigma in pixels
  double blur_max = 1.8;
  double noise = 0.04;  // texture noise amplitude
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  std::vector<std::uint8_t> rgb;   // size x size x 3
  std::vector<std::uint8_t> mask;  // size x size, 0 or 255
  std::size_t blobs = 0;
};

// Sample `index` of the dataset defined by cfg; independent of the other indices.
SynthSample synth_sample(const SynthConfig& cfg, std::size_t index);
// All samples, generated in parallel across hardware threads.
std::vector<SynthSample> synth_dataset(const SynthConfig& cfg);

// 8-bit buffers to tensors: image / 255, mask >= 128 -> 1.
Tensor image_tensor(const std::vector<std::uint8_t>& rgb, std::size_t h, std::size_t w);
Tensor mask_tensor(const std::vector<std::uint8_t>& gray, std::size_t h, std::size_t w);
// Tensor in [0,1] to 8-bit (round half up, clamped).
std::vector<std::uint8_t> to_u8(const Tensor& t);

}  // namespace magup
