#pragma once

#include <array>
#include <vector>

#include "magup/nn.hpp"

namespace magup {

// Selective state-space parameters for one scan direction.
// Δ = softplus(x W_Δ + b_Δ), B = x W_B, C = x W_C, A = -exp(A_log).
struct SsmParams {
  Tensor A_log;    // d_inner x d_state
  Tensor D;        // d_inner
  Tensor w_delta;  // d_inner x d_inner
  Tensor b_delta;  // d_inner
  Tensor w_B;      // d_inner x d_state
  Tensor w_C;      // d_inner x d_state

  // A_log = log(1..N) per row, D = 1, Δ bias chosen so softplus(b) spans [1e-3, 1e-1].
  static SsmParams make(std::size_t d_inner, std::size_t d_state, Rng& rng);

  std::size_t d_inner() const { return A_log.dim(0); }
  std::size_t d_state() const { return A_log.dim(1); }
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

enum class ScanOrder { row_major, row_major_reversed, col_major, col_major_reversed, forward, reverse };

struct ScanSequence {
  Tensor tokens;  // T x d_inner
  ScanOrder direction = ScanOrder::forward;
};

// Plain sequential recurrence on raw values; reference oracle, not differentiable.
std::vector<double> selective_scan_naive(const Tensor& x, const SsmParams& p);
// Same recurrence on already-projected inputs: x, delta: T x d; B, C: T x N.
std::vector<double> selective_scan_naive(const Tensor& x, const Tensor& delta, const Tensor& A_log,
                                         const Tensor& B, const Tensor& C, const Tensor& D);

// Differentiable scan over projected inputs. x, delta: T x d; B, C: T x N.
// The forward pass runs in chunks of `chunk` steps with carried state.
Tensor scan_kernel(const Tensor& x, const Tensor& delta, const Tensor& A_log, const Tensor& B,
                   const Tensor& C, const Tensor& D, std::size_t chunk = 64);

Tensor selective_scan(const Tensor& x, const SsmParams& p);
inline Tensor selective_scan(const ScanSequence& seq, const SsmParams& p) {
  return selective_scan(seq.tokens, p);
}

struct Mamba1dConfig {
  std::size_t d_model = 0;
  std::size_t d_inner = 0;  // 0 -> 2 * d_model
  std::size_t d_state = 8;
  std::size_t conv_kernel = 3;  // 0 disables the short convolution
  bool bidirectional = false;
  bool share_directions = false;
};

struct Mamba1d {
  struct Direction {
    Tensor conv_w;  // k x d_inner
    Tensor conv_b;  // d_inner
    SsmParams ssm;
  };

  Mamba1dConfig cfg;
  nn::LayerNorm norm;
  nn::Linear in_proj;   // d_model -> 2 d_inner, no bias
  std::vector<Direction> dirs;
  nn::Linear out_proj;  // d_inner -> d_model, no bias

  static Mamba1d make(Mamba1dConfig cfg, Rng& rng);

  const Direction& direction(std::size_t i) const { return dirs[cfg.share_directions ? 0 : i]; }
  Tensor operator()(const Tensor& x) const;  // T x d_model
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

Tensor mamba_block_1d(const Tensor& x, const Mamba1d& block);

inline constexpr std::array<ScanOrder, 4> kCrossOrders = {
    ScanOrder::row_major, ScanOrder::row_major_reversed, ScanOrder::col_major,
    ScanOrder::col_major_reversed};

// order[k] = row-major grid index visited at step k.
std::vector<std::size_t> scan_order_indices(std::size_t H, std::size_t W, ScanOrder order);

std::array<ScanSequence, 4> cross_scan_2d(const Tensor& grid);
// Un-permutes each sequence back to grid order and sums them: H x W x d.
Tensor cross_merge_2d(const std::array<Tensor, 4>& seqs, std::size_t H, std::size_t W);

struct Ss2dConfig {
  std::size_t d_model = 0;
  std::size_t d_inner = 0;  // 0 -> 2 * d_model
  std::size_t d_state = 8;
  bool share_directions = false;
};

struct Ss2d {
  Ss2dConfig cfg;
  nn::Linear in_proj;  // no bias
  std::vector<SsmParams> ssm;  // 4, or 1 when shared
  nn::Linear out_proj;  // no bias

  static Ss2d make(Ss2dConfig cfg, Rng& rng);

  const SsmParams& branch(std::size_t i) const { return ssm[cfg.share_directions ? 0 : i]; }
  Tensor operator()(const Tensor& grid) const;  // H x W x d_model
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

Tensor ss2d_block(const Tensor& grid, const Ss2d& block);

}  // namespace magup
