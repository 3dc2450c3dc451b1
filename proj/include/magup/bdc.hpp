#pragma once

#include <utility>

#include "magup/nn.hpp"

namespace magup {

enum class Phase { train, infer };

// Boundary distillation runs only while training.
constexpr bool bdc_active(Phase phase) { return phase == Phase::train; }

enum class EmptyRegionPolicy { identity };  // no polyp or no background: E* = E

struct BdcConfig {
  std::size_t channels = 0;
  std::size_t d_k = 0;  // 0 -> channels
  bool stop_gradient = true;
  bool residual = true;  // E* = E_P + attention at polyp positions
  EmptyRegionPolicy empty_policy = EmptyRegionPolicy::identity;
};

struct Bdc {
  BdcConfig cfg;
  nn::Linear q, k, v;  // c -> d_k
  nn::Linear out;      // d_k -> c

  static Bdc make(BdcConfig cfg, Rng& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

// Area-average a binary H x W mask onto h x w cells, then threshold (>= 0.5 -> 1).
Tensor downsample_mask(const Tensor& mask, std::size_t h, std::size_t w);

// E: h x w x c, M: h x w binary. Returns (E ⊙ M, E ⊙ (1 - M)).
std::pair<Tensor, Tensor> masked_split(const Tensor& E, const Tensor& M);

// Polyp tokens attend to non-polyp tokens; non-polyp positions pass E_NP through.
Tensor cross_attention_boundary(const Tensor& E_P, const Tensor& E_NP, const Tensor& M, const Bdc& bdc);

// mean((E - E*)^2); with stop_gradient the target branch is detached.
Tensor distill_loss(const Tensor& E, const Tensor& E_star, bool stop_gradient = true);

struct BdcResult {
  Tensor e_star;
  Tensor loss;
};

// Full component: mask at embedding resolution, split, attend, loss.
// Throws ContractError outside the training phase.
BdcResult boundary_distill(const Tensor& E, const Tensor& mask_full, const Bdc& bdc, Phase phase);

}  // namespace magup
