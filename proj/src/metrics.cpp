#include "magup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace magup {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

struct Grid {
  std::size_t H, W;
};

Grid require_pair(const Tensor& P, const Tensor& M, const char* op) {
  if (P.rank() != 2 || P.shape() != M.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + shape_str(P.shape()) + " vs mask " + shape_str(M.shape()));
  }
  for (double v : M.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(op) + ": ground truth is not binary");
  }
  return {P.dim(0), P.dim(1)};
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Object similarity of the values selected by `sel`.
double object_score(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double x = 0.0;
  for (double v : values) x += v;
  x /= n;
  double var = 0.0;
  for (double v : values) var += (v - x) * (v - x);
  const double sigma = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double s_object(std::span<const double> p, std::span<const double> m) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == 1.0) {
      fg.push_back(p[i]);
    } else {
      bg.push_back(1.0 - p[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(p.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double d = n - 1.0 + kEps;
  sxx /= d;
  syy /= d;
  sxy /= d;
  const double a = 4.0 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sxx + syy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

double s_region(std::span<const double> p, std::span<const double> m, Grid g) {
  double total = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < g.H; ++i) {
    for (std::size_t j = 0; j < g.W; ++j) {
      const double v = m[i * g.W + j];
      total += v;
      cx += v * static_cast<double>(j + 1);
      cy += v * static_cast<double>(i + 1);
    }
  }
  // Split point as a count of leading columns / rows.
  const auto X = static_cast<std::size_t>(std::round(cx / total));
  const auto Y = static_cast<std::size_t>(std::round(cy / total));
  const double area = static_cast<double>(g.H * g.W);
  const std::size_t r0[4] = {0, 0, Y, Y}, r1[4] = {Y, Y, g.H, g.H};
  const std::size_t c0[4] = {0, X, 0, X}, c1[4] = {X, g.W, X, g.W};
  double q = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (r1[k] <= r0[k] || c1[k] <= c0[k]) continue;
    std::vector<double> xs, ys;
    for (std::size_t i = r0[k]; i < r1[k]; ++i) {
      for (std::size_t j = c0[k]; j < c1[k]; ++j) {
        xs.push_back(p[i * g.W + j]);
        ys.push_back(m[i * g.W + j]);
      }
    }
    const double w = static_cast<double>((r1[k] - r0[k]) * (c1[k] - c0[k])) / area;
    q += w * region_ssim(xs, ys);
  }
  return q;
}

// Squared Euclidean distance to the nearest foreground pixel and that pixel's
// index; ties go to the smallest row-major index.
void distance_transform(std::span<const double> m, Grid g, std::vector<double>& dist2,
                        std::vector<std::size_t>& nearest) {
  const std::size_t H = g.H, W = g.W;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> col(H * W, inf);
  for (std::size_t j = 0; j < W; ++j) {
    double last = -1.0;
    for (std::size_t i = 0; i < H; ++i) {
      if (m[i * W + j] == 1.0) last = static_cast<double>(i);
      if (last >= 0.0) col[i * W + j] = static_cast<double>(i) - last;
    }
    last = -1.0;
    for (std::size_t i = H; i-- > 0;) {
      if (m[i * W + j] == 1.0) last = static_cast<double>(i);
      if (last >= 0.0) col[i * W + j] = std::min(col[i * W + j], last - static_cast<double>(i));
    }
  }
  dist2.assign(H * W, inf);
  nearest.assign(H * W, 0);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      double best = inf;
      for (std::size_t k = 0; k < W; ++k) {
        const double c = col[i * W + k];
        if (c == inf) continue;
        const double dx = static_cast<double>(j) - static_cast<double>(k);
        best = std::min(best, dx * dx + c * c);
      }
      dist2[i * W + j] = best;
    }
  }
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const auto D = static_cast<long>(dist2[i * W + j]);
      const auto r = static_cast<long>(std::sqrt(static_cast<double>(D)));
      bool found = false;
      for (long dy = -r - 1; dy <= r + 1 && !found; ++dy) {
        const long y = static_cast<long>(i) + dy;
        const long rest = D - dy * dy;
        if (y < 0 || y >= static_cast<long>(H) || rest < 0) continue;
        auto dx = static_cast<long>(std::llround(std::sqrt(static_cast<double>(rest))));
        if (dx * dx != rest) continue;
        for (long x : {static_cast<long>(j) - dx, static_cast<long>(j) + dx}) {
          if (x < 0 || x >= static_cast<long>(W)) continue;
          const std::size_t idx = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
          if (m[idx] == 1.0) {
            nearest[i * W + j] = idx;
            found = true;
            break;
          }
        }
      }
    }
  }
}

// 7x7 Gaussian, sigma 5, normalised; zero-padded correlation (separable).
std::vector<double> gaussian_filter(const std::vector<double>& x, Grid g) {
  constexpr int r = 3;
  double k[2 * r + 1];
  double s = 0.0;
  for (int t = -r; t <= r; ++t) s += (k[t + r] = std::exp(-(t * t) / (2.0 * 25.0)));
  for (double& v : k) v /= s;
  const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
  std::vector<double> tmp(x.size(), 0.0), out(x.size(), 0.0);
  for (long i = 0; i < H; ++i) {
    for (long j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        if (j + t >= 0 && j + t < W) acc += k[t + r] * x[static_cast<std::size_t>(i * W + j + t)];
      }
      tmp[static_cast<std::size_t>(i * W + j)] = acc;
    }
  }
  for (long i = 0; i < H; ++i) {
    for (long j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        if (i + t >= 0 && i + t < H) acc += k[t + r] * tmp[static_cast<std::size_t>((i + t) * W + j)];
      }
      out[static_cast<std::size_t>(i * W + j)] = acc;
    }
  }
  return out;
}

}  // namespace

DiceIou mdice_miou(const Tensor& P, const Tensor& M, double threshold) {
  require_pair(P, M, "mdice_miou");
  const auto p = P.data(), m = M.data();
  double inter = 0.0, np = 0.0, nm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] >= threshold, b = m[i] == 1.0;
    inter += a && b;
    np += a;
    nm += b;
  }
  if (np + nm == 0.0) return {1.0, 1.0};
  return {2.0 * inter / (np + nm), inter / (np + nm - inter)};
}

double mae(const Tensor& P, const Tensor& M) {
  require_pair(P, M, "mae");
  const auto p = P.data(), m = M.data();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - m[i]);
  return s / static_cast<double>(p.size());
}

double s_measure(const Tensor& P, const Tensor& M, double alpha) {
  const Grid g = require_pair(P, M, "s_measure");
  const auto p = P.data(), m = M.data();
  const double y = mean_of(m);
  if (y == 0.0) return 1.0 - mean_of(p);
  if (y == 1.0) return mean_of(p);
  const double q = alpha * s_object(p, m) + (1.0 - alpha) * s_region(p, m, g);
  return std::max(q, 0.0);
}

double e_measure_binary(const std::vector<bool>& fg, const Tensor& M) {
  const auto m = M.data();
  const double n = static_cast<double>(m.size());
  double sum_gt = 0.0, sum_fm = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    sum_gt += m[i];
    sum_fm += fg[i];
  }
  double total = 0.0;
  if (sum_gt == 0.0) {
    total = n - sum_fm;
  } else if (sum_gt == n) {
    total = sum_fm;
  } else {
    const double mu_fm = sum_fm / n, mu_gt = sum_gt / n;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double a = (fg[i] ? 1.0 : 0.0) - mu_fm, b = m[i] - mu_gt;
      const double align = 2.0 * a * b / (a * a + b * b + kEps);
      total += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return total / n;
}

double e_measure_max(const Tensor& P, const Tensor& M) {
  require_pair(P, M, "e_measure_max");
  const auto p = P.data();
  std::vector<bool> fg(p.size());
  double best = 0.0;
  for (int t = 0; t < 256; ++t) {
    const double th = t / 255.0;
    for (std::size_t i = 0; i < p.size(); ++i) fg[i] = p[i] > th;
    best = std::max(best, e_measure_binary(fg, M));
  }
  return best;
}

double weighted_fmeasure(const Tensor& P, const Tensor& M, double beta2) {
  const Grid g = require_pair(P, M, "weighted_fmeasure");
  const auto p = P.data(), m = M.data();
  const std::size_t n = p.size();
  double gt_count = 0.0;
  for (double v : m) gt_count += v;
  if (gt_count == 0.0) {
    return std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; }) ? 1.0 : 0.0;
  }
  std::vector<double> E(n);
  for (std::size_t i = 0; i < n; ++i) E[i] = std::abs(p[i] - m[i]);
  std::vector<double> dist2;
  std::vector<std::size_t> nearest;
  distance_transform(m, g, dist2, nearest);
  std::vector<double> Et = E;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] == 0.0) Et[i] = E[nearest[i]];
  }
  const std::vector<double> EA = gaussian_filter(Et, g);
  double tp_err = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] == 1.0) {
      tp_err += (EA[i] < E[i]) ? EA[i] : E[i];
    } else {
      const double B = 2.0 - std::exp(std::log(0.5) / 5.0 * std::sqrt(dist2[i]));
      fp += E[i] * B;
    }
  }
  const double tpw = gt_count - tp_err;
  const double R = 1.0 - tp_err / gt_count;
  const double Pw = tpw / (kEps + tpw + fp);
  return (1.0 + beta2) * R * Pw / (kEps + R + beta2 * Pw);
}

MetricReport evaluate_pair(const Tensor& P, const Tensor& M) {
  const DiceIou di = mdice_miou(P, M);
  return {di.dice, di.iou, weighted_fmeasure(P, M), s_measure(P, M), e_measure_max(P, M), mae(P, M), 1};
}

MetricReport average(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ContractError("evaluate_dataset: no samples");
  MetricReport r;
  for (const auto& x : reports) {
    r.mdice += x.mdice;
    r.miou += x.miou;
    r.wfm += x.wfm;
    r.s_alpha += x.s_alpha;
    r.e_max += x.e_max;
    r.mae += x.mae;
  }
  const double n = static_cast<double>(reports.size());
  r.mdice /= n;
  r.miou /= n;
  r.wfm /= n;
  r.s_alpha /= n;
  r.e_max /= n;
  r.mae /= n;
  r.count = reports.size();
  return r;
}

MetricReport evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
  std::vector<MetricReport> per;
  per.reserve(pairs.size());
  for (const auto& [P, M] : pairs) per.push_back(evaluate_pair(P, M));
  return average(per);
}

void write_report_csv(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  os << "name,mDice,mIoU,wFm,Sm,Em,MAE,count\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& [name, r] : rows) {
    os << name << ',' << r.mdice << ',' << r.miou << ',' << r.wfm << ',' << r.s_alpha << ',' << r.e_max << ','
       << r.mae << ',' << r.count << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

void write_report_table(std::ostream& os, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t width = 7;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  auto col = [&](const std::string& s) { os << std::setw(8) << s; };
  os << std::left << std::setw(static_cast<int>(width)) << "dataset" << std::right;
  for (const char* h : {"mDice", "mIoU", "wFm", "Sm", "Em", "MAE"}) col(h);
  os << std::setw(8) << "n" << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << name << std::right;
    for (double v : {r.mdice, r.miou, r.wfm, r.s_alpha, r.e_max}) os << std::setw(8) << v;
    os << std::setw(8) << 100.0 * r.mae << std::setw(8) << r.count << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace magup
