#include "magup/losses.hpp"

#include <algorithm>
#include <cmath>

namespace magup {

namespace {

void require_pair(const Tensor& P, const Tensor& M, const char* op) {
  if (P.shape() != M.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + shape_str(P.shape()) + " vs mask " + shape_str(M.shape()));
  }
}

}  // namespace

Tensor boundary_weights(const Tensor& M, const LossOptions& opt) {
  if (opt.boundary_gain == 0.0) return Tensor::ones(M.shape());
  if (M.rank() != 2) throw ShapeError("boundary_weights: mask " + shape_str(M.shape()));
  const std::size_t H = M.dim(0), W = M.dim(1);
  const long r = static_cast<long>(opt.boundary_kernel / 2);
  const double area = static_cast<double>(opt.boundary_kernel * opt.boundary_kernel);
  // Integral image for the zero-padded box average.
  std::vector<double> S((H + 1) * (W + 1), 0.0);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      S[(i + 1) * (W + 1) + j + 1] = M[i * W + j] + S[i * (W + 1) + j + 1] + S[(i + 1) * (W + 1) + j] - S[i * (W + 1) + j];
    }
  }
  auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
  std::vector<double> w(H * W);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const auto i0 = clampi(static_cast<long>(i) - r, static_cast<long>(H));
      const auto i1 = clampi(static_cast<long>(i) + r + 1, static_cast<long>(H));
      const auto j0 = clampi(static_cast<long>(j) - r, static_cast<long>(W));
      const auto j1 = clampi(static_cast<long>(j) + r + 1, static_cast<long>(W));
      const double box = S[i1 * (W + 1) + j1] - S[i0 * (W + 1) + j1] - S[i1 * (W + 1) + j0] + S[i0 * (W + 1) + j0];
      w[i * W + j] = 1.0 + opt.boundary_gain * std::abs(box / area - M[i * W + j]);
    }
  }
  return Tensor({H, W}, std::move(w));
}

Tensor dice_loss(const Tensor& P, const Tensor& M, const LossOptions& opt) {
  require_pair(P, M, "dice_loss");
  if (opt.boundary_gain == 0.0) {
    const Tensor inter = sum(P * M);
    return add_scalar(-(scale(inter, 2.0) / add_scalar(sum(P) + sum(M), opt.dice_eps)), 1.0);
  }
  const Tensor w = boundary_weights(M, opt);
  const Tensor inter = sum(w * P * M);
  return add_scalar(-(scale(inter, 2.0) / add_scalar(sum(w * P) + sum(w * M), opt.dice_eps)), 1.0);
}

Tensor bce_loss(const Tensor& P, const Tensor& M, const LossOptions& opt) {
  require_pair(P, M, "bce_loss");
  const Tensor p = clamp(P, opt.bce_delta, 1.0 - opt.bce_delta);
  const Tensor ll = M * log(p) + add_scalar(-M, 1.0) * log(add_scalar(-p, 1.0));
  if (opt.boundary_gain == 0.0) return -mean(ll);
  const Tensor w = boundary_weights(M, opt);
  return -(sum(w * ll) / sum(w));
}

Tensor combined_loss(const Tensor& P, const Tensor& M, const LossOptions& opt) {
  return dice_loss(P, M, opt) + bce_loss(P, M, opt);
}

}  // namespace magup
