#include "magup/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace magup {

using detail::TensorImpl;

namespace {

double softplus_value(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

SsmParams SsmParams::make(std::size_t d_inner, std::size_t d_state, Rng& rng) {
  SsmParams p;
  std::vector<double> a_log(d_inner * d_state);
  for (std::size_t c = 0; c < d_inner; ++c) {
    for (std::size_t n = 0; n < d_state; ++n) a_log[c * d_state + n] = std::log(static_cast<double>(n + 1));
  }
  p.A_log = Tensor::parameter({d_inner, d_state}, std::move(a_log));
  p.D = nn::constant_param({d_inner}, 1.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_inner));
  p.w_delta = nn::uniform_param({d_inner, d_inner}, bound, rng);
  std::vector<double> bias(d_inner);
  for (auto& b : bias) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = dt + std::log(-std::expm1(-dt));
  }
  p.b_delta = Tensor::parameter({d_inner}, std::move(bias));
  p.w_B = nn::uniform_param({d_inner, d_state}, bound, rng);
  p.w_C = nn::uniform_param({d_inner, d_state}, bound, rng);
  return p;
}

void SsmParams::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  f(prefix + ".A_log", A_log);
  f(prefix + ".D", D);
  f(prefix + ".w_delta", w_delta);
  f(prefix + ".b_delta", b_delta);
  f(prefix + ".w_B", w_B);
  f(prefix + ".w_C", w_C);
}

std::vector<double> selective_scan_naive(const Tensor& x, const Tensor& delta, const Tensor& A_log,
                                         const Tensor& B, const Tensor& C, const Tensor& D) {
  const std::size_t T = x.dim(0), d = x.dim(1), N = A_log.dim(1);
  const auto xv = x.data(), dv = delta.data(), al = A_log.data(), bv = B.data(), cv = C.data(),
             Dv = D.data();
  std::vector<double> y(T * d, 0.0);
  std::vector<double> h(d * N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const double xi = xv[t * d + c];
      const double dt = dv[t * d + c];
      double out = Dv[c] * xi;
      for (std::size_t n = 0; n < N; ++n) {
        const double A = -std::exp(al[c * N + n]);
        double& state = h[c * N + n];
        state = std::exp(dt * A) * state + dt * bv[t * N + n] * xi;
        out += cv[t * N + n] * state;
      }
      y[t * d + c] = out;
    }
  }
  return y;
}

std::vector<double> selective_scan_naive(const Tensor& x, const SsmParams& p) {
  const std::size_t T = x.dim(0), d = p.d_inner(), N = p.d_state();
  require(x.rank() == 2 && x.dim(1) == d, "selective_scan_naive: input " + shape_str(x.shape()));
  const auto xv = x.data();
  const auto wd = p.w_delta.data();
  const auto bd = p.b_delta.data();
  const auto wb = p.w_B.data();
  const auto wc = p.w_C.data();
  std::vector<double> delta(T * d), B(T * N), C(T * N);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = bd[j];
      for (std::size_t i = 0; i < d; ++i) s += xv[t * d + i] * wd[i * d + j];
      delta[t * d + j] = softplus_value(s);
    }
    for (std::size_t n = 0; n < N; ++n) {
      double sb = 0.0, sc = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        sb += xv[t * d + i] * wb[i * N + n];
        sc += xv[t * d + i] * wc[i * N + n];
      }
      B[t * N + n] = sb;
      C[t * N + n] = sc;
    }
  }
  return selective_scan_naive(x, Tensor({T, d}, std::move(delta)), p.A_log, Tensor({T, N}, std::move(B)),
                              Tensor({T, N}, std::move(C)), p.D);
}

Tensor scan_kernel(const Tensor& x, const Tensor& delta, const Tensor& A_log, const Tensor& B,
                   const Tensor& C, const Tensor& D, std::size_t chunk) {
  require(x.rank() == 2, "scan_kernel: x " + shape_str(x.shape()));
  const std::size_t T = x.dim(0), d = x.dim(1);
  require(A_log.rank() == 2 && A_log.dim(0) == d, "scan_kernel: A_log " + shape_str(A_log.shape()));
  const std::size_t N = A_log.dim(1);
  require(delta.shape() == x.shape(), "scan_kernel: delta " + shape_str(delta.shape()));
  require(B.shape() == Shape{T, N} && C.shape() == Shape{T, N},
          "scan_kernel: B/C " + shape_str(B.shape()) + " " + shape_str(C.shape()));
  require(D.shape() == Shape{d}, "scan_kernel: D " + shape_str(D.shape()));
  if (chunk == 0) chunk = T;

  const auto xv = x.data(), dv = delta.data(), al = A_log.data(), bv = B.data(), cv = C.data(),
             Dv = D.data();
  // Hidden states h[t][c][n], kept for the backward pass.
  auto states = std::make_shared<std::vector<double>>(T * d * N);
  auto& H = *states;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t n = 0; n < N; ++n) {
      const double A = -std::exp(al[c * N + n]);
      double carry = 0.0;
      for (std::size_t s = 0; s < T; s += chunk) {
        const std::size_t e = std::min(T, s + chunk);
        double local = 0.0, log_decay = 0.0;
        for (std::size_t t = s; t < e; ++t) {
          const double dA = dv[t * d + c] * A;
          local = std::exp(dA) * local + dv[t * d + c] * bv[t * N + n] * xv[t * d + c];
          log_decay += dA;
          H[(t * d + c) * N + n] = local + std::exp(log_decay) * carry;
        }
        carry = H[((e - 1) * d + c) * N + n];
      }
    }
  }
  std::vector<double> y(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      double out = Dv[c] * xv[t * d + c];
      const double* h = &H[(t * d + c) * N];
      for (std::size_t n = 0; n < N; ++n) out += cv[t * N + n] * h[n];
      y[t * d + c] = out;
    }
  }

  auto xi = x.impl_, di = delta.impl_, ai = A_log.impl_, bi = B.impl_, ci = C.impl_, Di = D.impl_;
  return detail::make_result(
      {T, d}, std::move(y), {&x, &delta, &A_log, &B, &C, &D},
      [=](TensorImpl& o) {
        const auto& H = *states;
        const auto& gy = o.grad;
        const auto& xs = xi->data;
        const auto& ds = di->data;
        const auto& bs = bi->data;
        const auto& cs = ci->data;
        double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
        double* gd = di->requires_grad ? di->grad_buffer().data() : nullptr;
        double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
        double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
        double* gc = ci->requires_grad ? ci->grad_buffer().data() : nullptr;
        double* gD = Di->requires_grad ? Di->grad_buffer().data() : nullptr;
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t c = 0; c < d; ++c) {
            const double g = gy[t * d + c];
            if (gx) gx[t * d + c] += g * Di->data[c];
            if (gD) gD[c] += g * xs[t * d + c];
            if (gc) {
              const double* h = &H[(t * d + c) * N];
              for (std::size_t n = 0; n < N; ++n) gc[t * N + n] += g * h[n];
            }
          }
        }
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t n = 0; n < N; ++n) {
            const double A = -std::exp(ai->data[c * N + n]);
            double gh = 0.0, gA = 0.0;
            for (std::size_t t = T; t-- > 0;) {
              gh += cs[t * N + n] * gy[t * d + c];
              const double dt = ds[t * d + c];
              const double a = std::exp(dt * A);
              const double h_prev = t > 0 ? H[((t - 1) * d + c) * N + n] : 0.0;
              const double xt = xs[t * d + c];
              if (gx) gx[t * d + c] += gh * dt * bs[t * N + n];
              if (gd) gd[t * d + c] += gh * (bs[t * N + n] * xt + A * a * h_prev);
              if (gb) gb[t * N + n] += gh * dt * xt;
              gA += gh * dt * a * h_prev;
              gh *= a;
            }
            if (ga) ga[c * N + n] += gA * A;
          }
        }
      },
      "scan_kernel");
}

Tensor selective_scan(const Tensor& x, const SsmParams& p) {
  require(x.rank() == 2 && x.dim(1) == p.d_inner(), "selective_scan: input " + shape_str(x.shape()));
  const Tensor delta = softplus(linear(x, p.w_delta, p.b_delta));
  const Tensor B = matmul(x, p.w_B);
  const Tensor C = matmul(x, p.w_C);
  return scan_kernel(x, delta, p.A_log, B, C, p.D);
}

Mamba1d Mamba1d::make(Mamba1dConfig cfg, Rng& rng) {
  if (cfg.d_model == 0) throw ConfigError("mamba_1d: d_model must be positive");
  if (cfg.d_inner == 0) cfg.d_inner = 2 * cfg.d_model;
  Mamba1d m;
  m.cfg = cfg;
  m.norm = nn::LayerNorm::make(cfg.d_model);
  m.in_proj = nn::Linear::make(cfg.d_model, 2 * cfg.d_inner, rng, false);
  const std::size_t count = cfg.bidirectional && !cfg.share_directions ? 2 : 1;
  for (std::size_t i = 0; i < count; ++i) {
    Direction dir;
    if (cfg.conv_kernel > 0) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel));
      dir.conv_w = nn::uniform_param({cfg.conv_kernel, cfg.d_inner}, bound, rng);
      dir.conv_b = nn::uniform_param({cfg.d_inner}, bound, rng);
    }
    dir.ssm = SsmParams::make(cfg.d_inner, cfg.d_state, rng);
    m.dirs.push_back(std::move(dir));
  }
  m.out_proj = nn::Linear::make(cfg.d_inner, cfg.d_model, rng, false);
  return m;
}

Tensor Mamba1d::operator()(const Tensor& x) const {
  require(x.rank() == 2 && x.dim(1) == cfg.d_model, "mamba_block_1d: input " + shape_str(x.shape()));
  const Tensor uz = in_proj(norm(x));
  const Tensor u = slice(uz, 1, 0, cfg.d_inner);
  const Tensor z = slice(uz, 1, cfg.d_inner, cfg.d_inner);
  const std::size_t passes = cfg.bidirectional ? 2 : 1;
  Tensor merged;
  for (std::size_t i = 0; i < passes; ++i) {
    const Direction& dir = direction(i);
    const bool rev = i == 1;
    Tensor v = rev ? flip(u, 0) : u;
    if (cfg.conv_kernel > 0) v = depthwise_conv1d_causal(v, dir.conv_w) + dir.conv_b;
    Tensor y = selective_scan(silu(v), dir.ssm);
    if (rev) y = flip(y, 0);
    merged = i == 0 ? y : merged + y;
  }
  return x + out_proj(merged * silu(z));
}

void Mamba1d::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  norm.visit(prefix + ".norm", f);
  in_proj.visit(prefix + ".in_proj", f);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const std::string p = prefix + ".dir" + std::to_string(i);
    if (cfg.conv_kernel > 0) {
      f(p + ".conv_w", dirs[i].conv_w);
      f(p + ".conv_b", dirs[i].conv_b);
    }
    dirs[i].ssm.visit(p + ".ssm", f);
  }
  out_proj.visit(prefix + ".out_proj", f);
}

Tensor mamba_block_1d(const Tensor& x, const Mamba1d& block) { return block(x); }

std::vector<std::size_t> scan_order_indices(std::size_t H, std::size_t W, ScanOrder order) {
  std::vector<std::size_t> idx;
  idx.reserve(H * W);
  switch (order) {
    case ScanOrder::row_major:
    case ScanOrder::row_major_reversed:
    case ScanOrder::forward:
    case ScanOrder::reverse:
      for (std::size_t k = 0; k < H * W; ++k) idx.push_back(k);
      break;
    case ScanOrder::col_major:
    case ScanOrder::col_major_reversed:
      for (std::size_t c = 0; c < W; ++c) {
        for (std::size_t r = 0; r < H; ++r) idx.push_back(r * W + c);
      }
      break;
  }
  if (order == ScanOrder::row_major_reversed || order == ScanOrder::col_major_reversed ||
      order == ScanOrder::reverse) {
    std::reverse(idx.begin(), idx.end());
  }
  return idx;
}

std::array<ScanSequence, 4> cross_scan_2d(const Tensor& grid) {
  require(grid.rank() == 3, "cross_scan_2d: grid " + shape_str(grid.shape()));
  const std::size_t H = grid.dim(0), W = grid.dim(1), d = grid.dim(2);
  const Tensor flat = reshape(grid, {H * W, d});
  std::array<ScanSequence, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {index_select(flat, scan_order_indices(H, W, kCrossOrders[i])), kCrossOrders[i]};
  }
  return out;
}

Tensor cross_merge_2d(const std::array<Tensor, 4>& seqs, std::size_t H, std::size_t W) {
  Tensor merged;
  for (std::size_t i = 0; i < 4; ++i) {
    require(seqs[i].rank() == 2 && seqs[i].dim(0) == H * W,
            "cross_merge_2d: sequence " + shape_str(seqs[i].shape()));
    const auto order = scan_order_indices(H, W, kCrossOrders[i]);
    std::vector<std::size_t> inverse(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = k;
    const Tensor back = index_select(seqs[i], inverse);
    merged = i == 0 ? back : merged + back;
  }
  return reshape(merged, {H, W, seqs[0].dim(1)});
}

Ss2d Ss2d::make(Ss2dConfig cfg, Rng& rng) {
  if (cfg.d_model == 0) throw ConfigError("ss2d: d_model must be positive");
  if (cfg.d_inner == 0) cfg.d_inner = 2 * cfg.d_model;
  Ss2d m;
  m.cfg = cfg;
  m.in_proj = nn::Linear::make(cfg.d_model, cfg.d_inner, rng, false);
  const std::size_t count = cfg.share_directions ? 1 : 4;
  for (std::size_t i = 0; i < count; ++i) m.ssm.push_back(SsmParams::make(cfg.d_inner, cfg.d_state, rng));
  m.out_proj = nn::Linear::make(cfg.d_inner, cfg.d_model, rng, false);
  return m;
}

Tensor Ss2d::operator()(const Tensor& grid) const {
  require(grid.rank() == 3 && grid.dim(2) == cfg.d_model, "ss2d_block: grid " + shape_str(grid.shape()));
  const std::size_t H = grid.dim(0), W = grid.dim(1);
  const Tensor u = silu(in_proj(grid));
  const auto seqs = cross_scan_2d(u);
  std::array<Tensor, 4> scanned;
  for (std::size_t i = 0; i < 4; ++i) scanned[i] = selective_scan(seqs[i], branch(i));
  return out_proj(cross_merge_2d(scanned, H, W));
}

void Ss2d::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  in_proj.visit(prefix + ".in_proj", f);
  for (std::size_t i = 0; i < ssm.size(); ++i) ssm[i].visit(prefix + ".ssm" + std::to_string(i), f);
  out_proj.visit(prefix + ".out_proj", f);
}

Tensor ss2d_block(const Tensor& grid, const Ss2d& block) { return block(grid); }

}  // namespace magup
