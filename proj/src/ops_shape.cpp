#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "magup/ops.hpp"

namespace magup {

using detail::TensorImpl;

namespace {

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// Result whose gradient is a gather/scatter through a fixed index map:
// out[i] = in[map[i]].
Tensor gather_result(const Tensor& x, Shape shape, std::shared_ptr<std::vector<std::size_t>> map,
                     const char* op) {
  const auto xv = x.data();
  std::vector<double> out(map->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  auto xi = x.impl_;
  return detail::make_result(
      std::move(shape), std::move(out), {&x},
      [xi, map](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < map->size(); ++i) g[(*map)[i]] += o.grad[i];
      },
      op);
}

}  // namespace

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  auto xi = x.impl_;
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::make_result(
      x.shape(), std::move(out), {&x},
      [xi, y, s](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t a = 0; a < s.outer; ++a) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = a * s.n * s.inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t idx = base + j * s.inner;
              dot += o.grad[idx] * (*y)[idx];
            }
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t idx = base + j * s.inner;
              g[idx] += (*y)[idx] * (o.grad[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor reduce(const Tensor& x, Reduction kind, const std::vector<std::size_t>& axes, bool keepdims) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, axes.empty());
  for (auto a : axes) {
    if (a >= rank) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range");
    reduced[a] = true;
  }
  Shape out_shape;
  Shape kept_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= x.dim(i);
      if (keepdims) out_shape.push_back(1);
      kept_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(i));
      kept_shape.push_back(x.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const std::size_t n_out = shape_numel(kept_shape);
  // Output index for every input element.
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  const auto kst = row_major_strides(kept_shape);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    (*map)[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      if (!reduced[d]) flat += kst[d];
      if (counter[d] < x.dim(d)) break;
      if (!reduced[d]) flat -= kst[d] * counter[d];
      counter[d] = 0;
    }
  }
  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> out(n_out, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[(*map)[i]] += xv[i];
  if (kind == Reduction::mean) {
    for (auto& v : out) v /= static_cast<double>(count);
  }
  auto xi = x.impl_;
  return detail::make_result(
      std::move(out_shape), std::move(out), {&x},
      [xi, map, factor](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < map->size(); ++i) g[i] += o.grad[(*map)[i]] * factor;
      },
      "reduce");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine parameters must have extent " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  auto xi = x.impl_;
  auto gi = gamma.impl_;
  auto bi = beta.impl_;
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [xi, gi, bi, xhat, rstd, d, rows](TensorImpl& o) {
        const auto& g = o.grad;
        if (gi->requires_grad || bi->requires_grad) {
          auto* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
          auto* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
              if (gb) gb[j] += g[r * d + j];
            }
          }
        }
        if (!xi->requires_grad) return;
        auto& gx = xi->grad_buffer();
        const auto& gam = gi->data;
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gam[j];
            s1 += gh;
            s2 += gh * (*xhat)[r * d + j];
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gam[j];
            gx[r * d + j] += (*rstd)[r] * (gh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
          }
        }
      },
      "layer_norm");
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xi = x.impl_;
  return detail::make_result(
      shape, std::move(out), {&x},
      [xi](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      },
      "reshape");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes do not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  const auto in_st = row_major_strides(x.shape());
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    (*map)[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += in_st[axes[d]];
      if (counter[d] < out_shape[d]) break;
      src -= in_st[axes[d]] * counter[d];
      counter[d] = 0;
    }
  }
  return gather_result(x, std::move(out_shape), std::move(map), "permute");
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw ShapeError("concat: incompatible extents " + shape_str(p.shape()) + " vs " +
                         shape_str(first));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.dim(axis) * s.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(pv.begin() + static_cast<std::ptrdiff_t>(o * block),
                pv.begin() + static_cast<std::ptrdiff_t>((o + 1) * block),
                out.begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner + off * s.inner));
    }
    off += p.dim(axis);
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    impls.push_back(p.impl_);
    inputs.push_back(&p);
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), inputs,
      [impls, offsets, s, axis](TensorImpl& o) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
          auto& pi = *impls[k];
          if (!pi.requires_grad) continue;
          auto& g = pi.grad_buffer();
          const std::size_t block = pi.shape[axis] * s.inner;
          for (std::size_t a = 0; a < s.outer; ++a) {
            const double* src = o.grad.data() + a * s.n * s.inner + offsets[k] * s.inner;
            double* dst = g.data() + a * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t base = (o * s.n + start + j) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) map->push_back(base + i);
    }
  }
  return gather_result(x, std::move(out_shape), std::move(map), "slice");
}

Tensor flip(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("flip: axis out of range");
  const AxisSplit s = split_at(x.shape(), axis);
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const std::size_t base = (o * s.n + (s.n - 1 - j)) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) map->push_back(base + i);
    }
  }
  return gather_result(x, x.shape(), std::move(map), "flip");
}

Tensor pad(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& widths) {
  if (widths.size() != x.rank()) throw ShapeError("pad: one width pair per axis required");
  const std::size_t rank = x.rank();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(i) + widths[i].first + widths[i].second;
  const auto ost = row_major_strides(out_shape);
  // destination for every input element
  auto dest = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < rank; ++d) flat += (counter[d] + widths[d].first) * ost[d];
    (*dest)[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < x.dim(d)) break;
      counter[d] = 0;
    }
  }
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[(*dest)[i]] = xv[i];
  auto xi = x.impl_;
  return detail::make_result(
      std::move(out_shape), std::move(out), {&x},
      [xi, dest](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < dest->size(); ++i) g[i] += o.grad[(*dest)[i]];
      },
      "pad");
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  const std::size_t rank = shape.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) -
                               static_cast<std::ptrdiff_t>(rank - x.rank());
    if (src >= 0) {
      const std::size_t e = x.dim(static_cast<std::size_t>(src));
      stride[i] = e == 1 ? 0 : acc;
      acc *= e;
    }
  }
  auto map = std::make_shared<std::vector<std::size_t>>(shape_numel(shape));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < map->size(); ++i) {
    (*map)[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      flat += stride[d];
      if (counter[d] < shape[d]) break;
      flat -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return gather_result(x, shape, std::move(map), "broadcast_to");
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0 || indices.empty()) throw ShapeError("index_select: empty selection");
  const std::size_t rows = x.dim(0);
  const std::size_t inner = x.numel() / rows;
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(indices.size() * inner);
  for (auto r : indices) {
    if (r >= rows) throw ShapeError("index_select: index " + std::to_string(r) + " out of range");
    for (std::size_t i = 0; i < inner; ++i) map->push_back(r * inner + i);
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  return gather_result(x, std::move(out_shape), std::move(map), "index_select");
}

namespace {

struct LerpTap {
  std::size_t i0, i1;
  double w1;
};

std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("resize_bilinear: expected H x W x C, got " + shape_str(x.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty target");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  const auto xv = x.data();
  std::vector<double> out(out_h * out_w * C);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const auto& b = tx[xx];
      const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
      const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
      const double* p00 = xv.data() + (a.i0 * W + b.i0) * C;
      const double* p01 = xv.data() + (a.i0 * W + b.i1) * C;
      const double* p10 = xv.data() + (a.i1 * W + b.i0) * C;
      const double* p11 = xv.data() + (a.i1 * W + b.i1) * C;
      double* dst = out.data() + (y * out_w + xx) * C;
      for (std::size_t c = 0; c < C; ++c) {
        dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  auto xi = x.impl_;
  return detail::make_result(
      {out_h, out_w, C}, std::move(out), {&x},
      [xi, ty, tx, W, C, out_w](TensorImpl& o) {
        auto& g = xi->grad_buffer();
        for (std::size_t y = 0; y < ty.size(); ++y) {
          const auto& a = ty[y];
          for (std::size_t xx = 0; xx < out_w; ++xx) {
            const auto& b = tx[xx];
            const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
            const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
            const double* src = o.grad.data() + (y * out_w + xx) * C;
            for (std::size_t c = 0; c < C; ++c) {
              g[(a.i0 * W + b.i0) * C + c] += w00 * src[c];
              g[(a.i0 * W + b.i1) * C + c] += w01 * src[c];
              g[(a.i1 * W + b.i0) * C + c] += w10 * src[c];
              g[(a.i1 * W + b.i1) * C + c] += w11 * src[c];
            }
          }
        }
      },
      "resize_bilinear");
}

Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("resize_nearest: expected H x W x C, got " + shape_str(x.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_nearest: empty target");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(out_h * out_w * C);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(y * H / out_h, H - 1);
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const std::size_t sx = std::min(xx * W / out_w, W - 1);
      for (std::size_t c = 0; c < C; ++c) map->push_back((sy * W + sx) * C + c);
    }
  }
  return gather_result(x, {out_h, out_w, C}, std::move(map), "resize_nearest");
}

}  // namespace magup
