#include <Eigen/Core>

#include "magup/ops.hpp"

namespace magup {

using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  if (b.dim(0) != a.dim(1)) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  auto ai = a.impl_;
  auto bi = b.impl_;
  return detail::make_result(
      {a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
      [ai, bi, m, k, n](TensorImpl& o) {
        MapC g(o.grad.data(), m, n);
        if (ai->requires_grad) {
          Map(ai->grad_buffer().data(), m, k).noalias() += g * MapC(bi->data.data(), k, n).transpose();
        }
        if (bi->requires_grad) {
          Map(bi->grad_buffer().data(), k, n).noalias() += MapC(ai->data.data(), m, k).transpose() * g;
        }
      },
      "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  require_rank(w, 2, "linear");
  if (x.rank() == 0 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  if (bias && bias->numel() != w.dim(1)) {
    throw ShapeError("linear: bias " + shape_str(bias->shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const auto k = static_cast<Eigen::Index>(w.dim(0));
  const auto n = static_cast<Eigen::Index>(w.dim(1));
  const auto m = static_cast<Eigen::Index>(x.numel() / w.dim(0));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map y(out.data(), m, n);
  y.noalias() = MapC(x.data().data(), m, k) * MapC(w.data().data(), k, n);
  if (bias) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->data().data(), n);
  }
  Shape shape = x.shape();
  shape.back() = w.dim(1);
  auto xi = x.impl_;
  auto wi = w.impl_;
  auto bi = bias ? bias->impl_ : nullptr;
  std::vector<const Tensor*> inputs{&x, &w};
  if (bias) inputs.push_back(&*bias);
  return detail::make_result(
      std::move(shape), std::move(out), inputs,
      [xi, wi, bi, m, k, n](TensorImpl& o) {
        MapC g(o.grad.data(), m, n);
        if (xi->requires_grad) {
          Map(xi->grad_buffer().data(), m, k).noalias() += g * MapC(wi->data.data(), k, n).transpose();
        }
        if (wi->requires_grad) {
          Map(wi->grad_buffer().data(), k, n).noalias() += MapC(xi->data.data(), m, k).transpose() * g;
        }
        if (bi && bi->requires_grad) {
          Eigen::Map<Eigen::RowVectorXd>(bi->grad_buffer().data(), n) += g.colwise().sum();
        }
      },
      "linear");
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const std::size_t k = w.dim(0), cout = w.dim(3);
  if (w.dim(1) != k) throw ConfigError("conv2d: kernel must be square");
  if (w.dim(2) != cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " vs weights " +
                     shape_str(w.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (H + 2 * padding < k || W + 2 * padding < k) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t ho = (H + 2 * padding - k) / stride + 1;
  const std::size_t wo = (W + 2 * padding - k) / stride + 1;
  const std::size_t patch = k * k * cin;

  // im2col; rows are output pixels, columns (ky, kx, ci) matching the weight layout.
  auto cols = std::make_shared<std::vector<double>>(ho * wo * patch, 0.0);
  const auto xv = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* row = cols->data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* src = xv.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
          std::copy(src, src + cin, row + (ky * k + kx) * cin);
        }
      }
    }
  }
  const auto M = static_cast<Eigen::Index>(ho * wo);
  const auto K = static_cast<Eigen::Index>(patch);
  const auto N = static_cast<Eigen::Index>(cout);
  std::vector<double> out(ho * wo * cout);
  Map(out.data(), M, N).noalias() = MapC(cols->data(), M, K) * MapC(w.data().data(), K, N);

  auto xi = x.impl_;
  auto wi = w.impl_;
  return detail::make_result(
      {ho, wo, cout}, std::move(out), {&x, &w},
      [=](TensorImpl& o) {
        MapC g(o.grad.data(), M, N);
        if (wi->requires_grad) {
          Map(wi->grad_buffer().data(), K, N).noalias() += MapC(cols->data(), M, K).transpose() * g;
        }
        if (!xi->requires_grad) return;
        RowMat gcols = g * MapC(wi->data.data(), K, N).transpose();
        auto& gx = xi->grad_buffer();
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double* row = gcols.data() + (oy * wo + ox) * patch;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                double* dst = gx.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
                const double* src = row + (ky * k + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      },
      "conv2d");
}

Tensor conv2d_same(const Tensor& x, const Tensor& w) {
  require_rank(w, 4, "conv2d");
  const std::size_t k = w.dim(0);
  if (k % 2 == 0) throw ConfigError("conv2d: same padding needs an odd kernel, got " + std::to_string(k));
  return conv2d(x, w, 1, k / 2);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(w, 4, "conv_transpose2d");
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t s = w.dim(1), cout = w.dim(3);
  if (w.dim(0) != cin || w.dim(2) != s) {
    throw ShapeError("conv_transpose2d: weights " + shape_str(w.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  const auto M = static_cast<Eigen::Index>(h * wd);
  const auto K = static_cast<Eigen::Index>(cin);
  const auto N = static_cast<Eigen::Index>(s * s * cout);
  RowMat y = MapC(x.data().data(), M, K) * MapC(w.data().data(), K, N);
  const std::size_t oh = h * s, ow = wd * s;
  std::vector<double> out(oh * ow * cout);
  // y row (i, j), column (a, b, co) -> out (i*s + a, j*s + b, co)
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wd; ++j) {
      const double* row = y.data() + (i * wd + j) * static_cast<std::size_t>(N);
      for (std::size_t a = 0; a < s; ++a) {
        for (std::size_t b = 0; b < s; ++b) {
          double* dst = out.data() + ((i * s + a) * ow + (j * s + b)) * cout;
          const double* src = row + (a * s + b) * cout;
          std::copy(src, src + cout, dst);
        }
      }
    }
  }
  auto xi = x.impl_;
  auto wi = w.impl_;
  return detail::make_result(
      {oh, ow, cout}, std::move(out), {&x, &w},
      [=](TensorImpl& o) {
        RowMat gy(M, N);
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < wd; ++j) {
            double* row = gy.data() + (i * wd + j) * static_cast<std::size_t>(N);
            for (std::size_t a = 0; a < s; ++a) {
              for (std::size_t b = 0; b < s; ++b) {
                const double* src = o.grad.data() + ((i * s + a) * ow + (j * s + b)) * cout;
                std::copy(src, src + cout, row + (a * s + b) * cout);
              }
            }
          }
        }
        if (xi->requires_grad) {
          Map(xi->grad_buffer().data(), M, K).noalias() += gy * MapC(wi->data.data(), K, N).transpose();
        }
        if (wi->requires_grad) {
          Map(wi->grad_buffer().data(), K, N).noalias() += MapC(xi->data.data(), M, K).transpose() * gy;
        }
      },
      "conv_transpose2d");
}

Tensor depthwise_conv1d_causal(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "depthwise_conv1d_causal");
  require_rank(w, 2, "depthwise_conv1d_causal");
  const std::size_t T = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (w.dim(1) != d) {
    throw ShapeError("depthwise_conv1d_causal: weights " + shape_str(w.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(T * d, 0.0);
  // y[t] = sum_j w[j] * x[t + j - (k - 1)]
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      if (t + j < k - 1) continue;
      const std::size_t src = t + j - (k - 1);
      for (std::size_t c = 0; c < d; ++c) out[t * d + c] += wv[j * d + c] * xv[src * d + c];
    }
  }
  auto xi = x.impl_;
  auto wi = w.impl_;
  return detail::make_result(
      {T, d}, std::move(out), {&x, &w},
      [=](TensorImpl& o) {
        double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
        double* gw = wi->requires_grad ? wi->grad_buffer().data() : nullptr;
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t j = 0; j < k; ++j) {
            if (t + j < k - 1) continue;
            const std::size_t src = t + j - (k - 1);
            for (std::size_t c = 0; c < d; ++c) {
              const double g = o.grad[t * d + c];
              if (gx) gx[src * d + c] += g * wi->data[j * d + c];
              if (gw) gw[j * d + c] += g * xi->data[src * d + c];
            }
          }
        }
      },
      "depthwise_conv1d_causal");
}

}  // namespace magup
