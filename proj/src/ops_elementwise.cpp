#include <algorithm>
#include <cmath>

#include "magup/ops.hpp"

namespace magup {

using detail::TensorImpl;

bool is_binary(OpKind kind) {
  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div:
      return true;
    default:
      return false;
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

// Maps output flat indices to input flat indices.
struct BroadcastMap {
  enum class Mode { same, a_scalar, b_scalar, b_suffix, a_suffix, general };
  Shape out;
  Mode mode = Mode::same;
  std::size_t na = 0, nb = 0;
  std::vector<std::size_t> ia, ib;

  BroadcastMap(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
    na = shape_numel(a);
    nb = shape_numel(b);
    const std::size_t n = shape_numel(out);
    if (a == b) {
      mode = Mode::same;
    } else if (nb == 1) {
      mode = Mode::b_scalar;
    } else if (na == 1) {
      mode = Mode::a_scalar;
    } else if (na == n && is_suffix(b, a)) {
      mode = Mode::b_suffix;
    } else if (nb == n && is_suffix(a, b)) {
      mode = Mode::a_suffix;
    } else {
      mode = Mode::general;
      ia = expand(a, n);
      ib = expand(b, n);
    }
  }

  // true when `small` equals the trailing extents of `big` (after dropping leading 1s)
  static bool is_suffix(const Shape& small, const Shape& big) {
    std::size_t s = 0;
    while (s < small.size() && small[s] == 1) ++s;
    const std::size_t len = small.size() - s;
    if (len > big.size()) return false;
    return std::equal(small.begin() + static_cast<std::ptrdiff_t>(s), small.end(),
                      big.end() - static_cast<std::ptrdiff_t>(len));
  }

  std::vector<std::size_t> expand(const Shape& in, std::size_t n) const {
    const std::size_t rank = out.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = rank; i-- > 0;) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) -
                                 static_cast<std::ptrdiff_t>(rank - in.size());
      if (src >= 0) {
        const std::size_t e = in[static_cast<std::size_t>(src)];
        stride[i] = e == 1 ? 0 : acc;
        acc *= e;
      }
    }
    std::vector<std::size_t> idx(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t flat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      idx[i] = flat;
      for (std::size_t d = rank; d-- > 0;) {
        ++counter[d];
        flat += stride[d];
        if (counter[d] < out[d]) break;
        flat -= stride[d] * counter[d];
        counter[d] = 0;
      }
    }
    return idx;
  }

  template <class F>
  void for_each(F&& fn) const {
    const std::size_t n = shape_numel(out);
    switch (mode) {
      case Mode::same:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
        break;
      case Mode::b_scalar:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
        break;
      case Mode::a_scalar:
        for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
        break;
      case Mode::b_suffix:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i % nb);
        break;
      case Mode::a_suffix:
        for (std::size_t i = 0; i < n; ++i) fn(i, i % na, i);
        break;
      case Mode::general:
        for (std::size_t i = 0; i < n; ++i) fn(i, ia[i], ib[i]);
        break;
    }
  }
};

}  // namespace

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b) {
  if (!is_binary(kind)) throw ContractError("elementwise: unary op kind given two operands");
  auto map = std::make_shared<BroadcastMap>(a.shape(), b.shape());
  std::vector<double> out(shape_numel(map->out));
  const auto av = a.data();
  const auto bv = b.data();
  switch (kind) {
    case OpKind::add:
      map->for_each([&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] + bv[y]; });
      break;
    case OpKind::sub:
      map->for_each([&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] - bv[y]; });
      break;
    case OpKind::mul:
      map->for_each([&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] * bv[y]; });
      break;
    case OpKind::div:
      map->for_each([&](std::size_t i, std::size_t x, std::size_t y) { out[i] = av[x] / bv[y]; });
      break;
    default:
      break;
  }
  auto ai = a.impl_;
  auto bi = b.impl_;
  return detail::make_result(
      map->out, std::move(out), {&a, &b},
      [kind, map, ai, bi](TensorImpl& o) {
        const auto& g = o.grad;
        const bool need_a = ai->requires_grad;
        const bool need_b = bi->requires_grad;
        double* ga = need_a ? ai->grad_buffer().data() : nullptr;
        double* gb = need_b ? bi->grad_buffer().data() : nullptr;
        const auto& av = ai->data;
        const auto& bv = bi->data;
        switch (kind) {
          case OpKind::add:
            map->for_each([&](std::size_t i, std::size_t x, std::size_t y) {
              if (ga) ga[x] += g[i];
              if (gb) gb[y] += g[i];
            });
            break;
          case OpKind::sub:
            map->for_each([&](std::size_t i, std::size_t x, std::size_t y) {
              if (ga) ga[x] += g[i];
              if (gb) gb[y] -= g[i];
            });
            break;
          case OpKind::mul:
            map->for_each([&](std::size_t i, std::size_t x, std::size_t y) {
              if (ga) ga[x] += g[i] * bv[y];
              if (gb) gb[y] += g[i] * av[x];
            });
            break;
          case OpKind::div:
            map->for_each([&](std::size_t i, std::size_t x, std::size_t y) {
              if (ga) ga[x] += g[i] / bv[y];
              if (gb) gb[y] -= g[i] * av[x] / (bv[y] * bv[y]);
            });
            break;
          default:
            break;
        }
      },
      "elementwise");
}

Tensor elementwise(OpKind kind, const Tensor& a) {
  if (is_binary(kind)) throw ContractError("elementwise: binary op kind given one operand");
  const auto av = a.data();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    double y = 0.0;
    switch (kind) {
      case OpKind::neg: y = -x; break;
      case OpKind::exp: y = std::exp(x); break;
      case OpKind::log: y = std::log(x); break;
      case OpKind::sqrt: y = std::sqrt(x); break;
      case OpKind::square: y = x * x; break;
      case OpKind::tanh: y = std::tanh(x); break;
      case OpKind::sigmoid: y = sigmoid_value(x); break;
      case OpKind::silu: y = x * sigmoid_value(x); break;
      case OpKind::softplus: y = softplus_value(x); break;
      case OpKind::gelu:
        y = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
        break;
      default: break;
    }
    out[i] = y;
  }
  auto ai = a.impl_;
  std::vector<double> saved = (kind == OpKind::exp || kind == OpKind::sqrt ||
                               kind == OpKind::tanh || kind == OpKind::sigmoid)
                                  ? out
                                  : std::vector<double>{};
  return detail::make_result(
      a.shape(), std::move(out), {&a},
      [kind, ai, saved = std::move(saved)](TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        const auto& g = o.grad;
        const auto& xv = ai->data;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = xv[i];
          double d = 0.0;
          switch (kind) {
            case OpKind::neg: d = -1.0; break;
            case OpKind::exp: d = saved[i]; break;
            case OpKind::log: d = 1.0 / x; break;
            case OpKind::sqrt: d = 0.5 / saved[i]; break;
            case OpKind::square: d = 2.0 * x; break;
            case OpKind::tanh: d = 1.0 - saved[i] * saved[i]; break;
            case OpKind::sigmoid: d = saved[i] * (1.0 - saved[i]); break;
            case OpKind::silu: {
              const double s = sigmoid_value(x);
              d = s + x * s * (1.0 - s);
              break;
            }
            case OpKind::softplus: d = sigmoid_value(x); break;
            case OpKind::gelu: {
              const double t = std::tanh(kGeluC * (x + kGeluK * x * x * x));
              d = 0.5 * (1.0 + t) +
                  0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
              break;
            }
            default: break;
          }
          ga[i] += g[i] * d;
        }
      },
      "elementwise");
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto ai = a.impl_;
  return detail::make_result(
      a.shape(), std::move(out), {&a},
      [ai, factor](TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * factor;
      },
      "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  auto ai = a.impl_;
  return detail::make_result(
      a.shape(), std::move(out), {&a},
      [ai](TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
      },
      "add_scalar");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::clamp(v, lo, hi);
  auto ai = a.impl_;
  return detail::make_result(
      a.shape(), std::move(out), {&a},
      [ai, lo, hi](TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double x = ai->data[i];
          if (x >= lo && x <= hi) ga[i] += o.grad[i];
        }
      },
      "clamp");
}

Tensor stop_gradient(const Tensor& a) { return a.detach(); }

}  // namespace magup
