#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "magup/tensor.hpp"

namespace magup {

enum class OpKind {
  // binary, broadcasting under trailing-dimension rules
  add,
  sub,
  mul,
  div,
  // unary
  neg,
  exp,
  log,
  sqrt,
  square,
  tanh,
  sigmoid,
  silu,
  softplus,
  gelu,
};

bool is_binary(OpKind kind);

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(OpKind kind, const Tensor& a);
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(OpKind::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(OpKind::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(OpKind::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(OpKind::div, a, b); }
inline Tensor neg(const Tensor& a) { return elementwise(OpKind::neg, a); }
inline Tensor exp(const Tensor& a) { return elementwise(OpKind::exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(OpKind::log, a); }
inline Tensor sqrt(const Tensor& a) { return elementwise(OpKind::sqrt, a); }
inline Tensor square(const Tensor& a) { return elementwise(OpKind::square, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(OpKind::tanh, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(OpKind::sigmoid, a); }
inline Tensor silu(const Tensor& a) { return elementwise(OpKind::silu, a); }
inline Tensor softplus(const Tensor& a) { return elementwise(OpKind::softplus, a); }
// tanh approximation
inline Tensor gelu(const Tensor& a) { return elementwise(OpKind::gelu, a); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// Values outside [lo, hi] are clamped and receive zero gradient.
Tensor clamp(const Tensor& a, double lo, double hi);
// Identity forward, blocks gradient flow.
Tensor stop_gradient(const Tensor& a);

// a: m x k, b: k x n.
Tensor matmul(const Tensor& a, const Tensor& b);
// x: (..., in) flattened over leading axes, w: in x out, bias: out.
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias);

// x: H x W x Cin, w: k x k x Cin x Cout, zero padding, arbitrary stride.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);
// Odd k, stride 1, zero "same" padding.
Tensor conv2d_same(const Tensor& x, const Tensor& w);
// Non-overlapping transposed convolution with kernel == stride == s.
// x: h x w x Cin, w: Cin x s x s x Cout -> (s*h) x (s*w) x Cout.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w);
// Causal depthwise convolution along the token axis. x: T x d, w: k x d.
Tensor depthwise_conv1d_causal(const Tensor& x, const Tensor& w);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);

enum class Reduction { sum, mean };
// Reduces over the listed axes (all axes when empty).
Tensor reduce(const Tensor& x, Reduction kind, const std::vector<std::size_t>& axes = {},
              bool keepdims = false);
inline Tensor sum(const Tensor& x) { return reduce(x, Reduction::sum); }
inline Tensor mean(const Tensor& x) { return reduce(x, Reduction::mean); }

// Normalizes over the last axis; gamma and beta have that axis' extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor pad(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& widths);
Tensor flip(const Tensor& x, std::size_t axis);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Gathers slices along axis 0. Backward scatter-adds.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices);

// H x W x C resampling. Bilinear uses the align_corners=false convention:
// src = (dst + 0.5) * in / out - 0.5, clamped to the valid range.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
// Nearest: src = floor(dst * in / out).
Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w);

}  // namespace magup
