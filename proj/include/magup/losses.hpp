#pragma once

#include "magup/ops.hpp"

namespace magup {

struct LossOptions {
  double dice_eps = 1e-8;
  double bce_delta = 1e-7;  // P clamped to [delta, 1 - delta]
  // Optional hard-pixel emphasis w = 1 + gain * |avgpool_k(M) - M|; 0 keeps the plain formulas.
  double boundary_gain = 0.0;
  std::size_t boundary_kernel = 31;
};

// P: predicted probabilities, M: binary target, same shape (any rank; H x W in practice).
Tensor dice_loss(const Tensor& P, const Tensor& M, const LossOptions& opt = {});
Tensor bce_loss(const Tensor& P, const Tensor& M, const LossOptions& opt = {});
Tensor combined_loss(const Tensor& P, const Tensor& M, const LossOptions& opt = {});

// Boundary weight map for an H x W binary mask (ones when gain is 0).
Tensor boundary_weights(const Tensor& M, const LossOptions& opt);

}  // namespace magup
