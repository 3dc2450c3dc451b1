#pragma once

#include <functional>
#include <optional>
#include <string>

#include "magup/ops.hpp"
#include "magup/rng.hpp"

namespace magup::nn {

using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;

// Trainable leaf drawn from U(-bound, bound).
Tensor uniform_param(const Shape& shape, double bound, Rng& rng);
Tensor zeros_param(const Shape& shape);
Tensor constant_param(const Shape& shape, double value);

struct Linear {
  Tensor weight;  // in x out
  std::optional<Tensor> bias;

  // PyTorch-style U(-1/sqrt(in), 1/sqrt(in)) init; `zero` gives an all-zero layer.
  static Linear make(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true,
                     bool zero = false);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm make(std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor& f);
};

// Single-head scaled dot-product attention over token rows.
// q: Tq x d, k: Tk x d, v: Tk x dv.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention make(std::size_t d_model, std::size_t inner, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

}  // namespace magup::nn
