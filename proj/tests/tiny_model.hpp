#pragma once

#include <string>

#include "magup/model.hpp"
#include "magup/rng.hpp"

namespace magup::testing {

inline ModelConfig tiny_model_cfg(std::uint64_t seed = 1) {
  ModelConfig c;
  c.seed = seed;
  c.encoder.image_size = 16;
  c.encoder.patch = 4;
  c.encoder.d_model = 16;
  c.encoder.blocks = 2;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2;
  c.encoder.adapter.reduction = 4;
  c.encoder.adapter.d_state = 4;
  c.encoder.adapter.channel_embed = 4;
  c.decoder.heads = 2;
  c.decoder.depth = 2;
  return c;
}

// Overwrites every parameter with uniform noise so no tensor is trivially zero.
inline void randomize_all(SegModel& m, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  m.visit([&](const std::string&, Tensor& t) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  });
}

inline Tensor noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor({h, w, 3}, rng.uniform_vector(h * w * 3, 0.0, 1.0));
}

}  // namespace magup::testing
