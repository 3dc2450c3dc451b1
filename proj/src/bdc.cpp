#include "magup/bdc.hpp"

#include <algorithm>
#include <cmath>

namespace magup {

Bdc Bdc::make(BdcConfig cfg, Rng& rng) {
  if (cfg.channels == 0) throw ConfigError("bdc: channels must be positive");
  if (cfg.d_k == 0) cfg.d_k = cfg.channels;
  Bdc b;
  b.cfg = cfg;
  b.q = nn::Linear::make(cfg.channels, cfg.d_k, rng);
  b.k = nn::Linear::make(cfg.channels, cfg.d_k, rng);
  b.v = nn::Linear::make(cfg.channels, cfg.d_k, rng);
  b.out = nn::Linear::make(cfg.d_k, cfg.channels, rng);
  return b;
}

void Bdc::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  q.visit(prefix + ".q", f);
  k.visit(prefix + ".k", f);
  v.visit(prefix + ".v", f);
  out.visit(prefix + ".out", f);
}

namespace {

// Overlap of [a0, a1) with [b0, b1).
double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

void require_binary_grid(const Tensor& M, const char* op) {
  if (M.rank() != 2) throw ShapeError(std::string(op) + ": mask " + shape_str(M.shape()));
  for (double v : M.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(op) + ": mask is not binary");
  }
}

}  // namespace

Tensor downsample_mask(const Tensor& mask, std::size_t h, std::size_t w) {
  if (mask.rank() != 2) throw ShapeError("downsample_mask: mask " + shape_str(mask.shape()));
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  if (h == 0 || w == 0 || H < h || W < w) {
    throw ContractError("downsample_mask: cannot reduce " + shape_str(mask.shape()) + " to " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  const double sy = static_cast<double>(H) / static_cast<double>(h);
  const double sx = static_cast<double>(W) / static_cast<double>(w);
  const auto m = mask.data();
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    const double y0 = static_cast<double>(i) * sy, y1 = y0 + sy;
    for (std::size_t j = 0; j < w; ++j) {
      const double x0 = static_cast<double>(j) * sx, x1 = x0 + sx;
      double acc = 0.0;
      for (auto r = static_cast<std::size_t>(y0); r < H && static_cast<double>(r) < y1; ++r) {
        const double wy = overlap(y0, y1, static_cast<double>(r), static_cast<double>(r + 1));
        for (auto c = static_cast<std::size_t>(x0); c < W && static_cast<double>(c) < x1; ++c) {
          acc += wy * overlap(x0, x1, static_cast<double>(c), static_cast<double>(c + 1)) * m[r * W + c];
        }
      }
      out[i * w + j] = acc / (sy * sx) >= 0.5 - 1e-12 ? 1.0 : 0.0;
    }
  }
  return Tensor({h, w}, std::move(out));
}

std::pair<Tensor, Tensor> masked_split(const Tensor& E, const Tensor& M) {
  require_binary_grid(M, "masked_split");
  if (E.rank() != 3 || E.dim(0) != M.dim(0) || E.dim(1) != M.dim(1)) {
    throw ContractError("masked_split: embedding " + shape_str(E.shape()) + " vs mask " + shape_str(M.shape()));
  }
  const Tensor m = reshape(M, {M.dim(0), M.dim(1), 1});
  return {E * m, E * add_scalar(-m, 1.0)};
}

Tensor cross_attention_boundary(const Tensor& E_P, const Tensor& E_NP, const Tensor& M, const Bdc& bdc) {
  require_binary_grid(M, "cross_attention_boundary");
  if (E_P.shape() != E_NP.shape() || E_P.rank() != 3 || E_P.dim(0) != M.dim(0) || E_P.dim(1) != M.dim(1)) {
    throw ContractError("cross_attention_boundary: " + shape_str(E_P.shape()) + " / " +
                        shape_str(E_NP.shape()) + " / mask " + shape_str(M.shape()));
  }
  const std::size_t n = M.numel(), c = E_P.dim(2);
  std::vector<std::size_t> polyp, background;
  for (std::size_t i = 0; i < n; ++i) (M[i] == 1.0 ? polyp : background).push_back(i);
  if (polyp.empty() || background.empty()) return E_P + E_NP;

  const Tensor p_flat = reshape(E_P, {n, c});
  const Tensor np_flat = reshape(E_NP, {n, c});
  const Tensor queries = index_select(p_flat, polyp);
  const Tensor kv = index_select(np_flat, background);
  Tensor attended = bdc.out(nn::attention(bdc.q(queries), bdc.k(kv), bdc.v(kv)));
  if (bdc.cfg.residual) attended = queries + attended;

  // Rows [0, n) are the passthrough, rows [n, n + |polyp|) the attended polyp tokens.
  std::vector<std::size_t> gather(n);
  for (std::size_t i = 0; i < n; ++i) gather[i] = i;
  for (std::size_t r = 0; r < polyp.size(); ++r) gather[polyp[r]] = n + r;
  return reshape(index_select(concat({np_flat, attended}, 0), gather), E_P.shape());
}

Tensor distill_loss(const Tensor& E, const Tensor& E_star, bool stop_gradient) {
  if (E.shape() != E_star.shape()) {
    throw ContractError("distill_loss: " + shape_str(E.shape()) + " vs " + shape_str(E_star.shape()));
  }
  const Tensor target = stop_gradient ? magup::stop_gradient(E_star) : E_star;
  return mean(square(E - target));
}

BdcResult boundary_distill(const Tensor& E, const Tensor& mask_full, const Bdc& bdc, Phase phase) {
  if (!bdc_active(phase)) throw ContractError("boundary_distill: BDC accessed outside training");
  const Tensor M = downsample_mask(mask_full, E.dim(0), E.dim(1));
  const auto [ep, enp] = masked_split(E, M);
  Tensor e_star = cross_attention_boundary(ep, enp, M, bdc);
  Tensor loss = distill_loss(E, e_star, bdc.cfg.stop_gradient);
  return {std::move(e_star), std::move(loss)};
}

}  // namespace magup
