#include "magup/nn.hpp"

#include <cmath>

namespace magup::nn {

Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  return Tensor::parameter(shape, rng.uniform_vector(shape_numel(shape), -bound, bound));
}

Tensor zeros_param(const Shape& shape) { return constant_param(shape, 0.0); }

Tensor constant_param(const Shape& shape, double value) {
  return Tensor::parameter(shape, std::vector<double>(shape_numel(shape), value));
}

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, bool with_bias, bool zero) {
  Linear l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = zero ? zeros_param({in, out}) : uniform_param({in, out}, bound, rng);
  if (with_bias) l.bias = zero ? zeros_param({out}) : uniform_param({out}, bound, rng);
  return l;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", weight);
  if (bias) f(prefix + ".bias", *bias);
}

LayerNorm LayerNorm::make(std::size_t d) {
  return LayerNorm{constant_param({d}, 1.0), zeros_param({d})};
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".gamma", gamma);
  f(prefix + ".beta", beta);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = scale(matmul(q, transpose(k)), s);
  return matmul(softmax(scores, -1), v);
}

MultiHeadAttention MultiHeadAttention::make(std::size_t d_model, std::size_t inner, std::size_t heads,
                                            Rng& rng) {
  if (heads == 0 || inner % heads != 0) {
    throw ConfigError("attention width " + std::to_string(inner) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.q = Linear::make(d_model, inner, rng);
  m.k = Linear::make(d_model, inner, rng);
  m.v = Linear::make(d_model, inner, rng);
  m.out = Linear::make(inner, d_model, rng);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys,
                                      const Tensor& values) const {
  const Tensor qp = q(queries), kp = k(keys), vp = v(values);
  const std::size_t width = qp.dim(1) / heads;
  if (heads == 1) return out(attention(qp, kp, vp));
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    parts.push_back(attention(slice(qp, 1, h * width, width), slice(kp, 1, h * width, width),
                              slice(vp, 1, h * width, width)));
  }
  return out(concat(parts, 1));
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& f) {
  q.visit(prefix + ".q", f);
  k.visit(prefix + ".k", f);
  v.visit(prefix + ".v", f);
  out.visit(prefix + ".out", f);
}

}  // namespace magup::nn
