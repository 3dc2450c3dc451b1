#include "magup/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "magup/errors.hpp"
#include "magup/ops.hpp"
#include "magup/parallel.hpp"

namespace magup {

std::pair<Tensor, Tensor> augment_at(const Tensor& image, const Tensor& mask, Rng& rng, std::size_t size,
                                     double scale) {
  if (image.rank() != 3 || mask.rank() != 2 || image.dim(0) != mask.dim(0) || image.dim(1) != mask.dim(1)) {
    throw ShapeError("augment: image " + shape_str(image.shape()) + " vs mask " + shape_str(mask.shape()));
  }
  const auto n = static_cast<std::size_t>(std::max(1.0, std::round(scale * static_cast<double>(size))));
  Tensor img = resize_bilinear(image, n, n);
  Tensor m = resize_nearest(reshape(mask, {mask.dim(0), mask.dim(1), 1}), n, n);
  if (n > size) {
    const std::size_t oy = rng.below(n - size + 1), ox = rng.below(n - size + 1);
    img = slice(slice(img, 0, oy, size), 1, ox, size);
    m = slice(slice(m, 0, oy, size), 1, ox, size);
  } else if (n < size) {
    img = resize_bilinear(img, size, size);
    m = resize_nearest(m, size, size);
  }
  return {img, reshape(m, {size, size})};
}

std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, Rng& rng, std::size_t size,
                                  const std::vector<double>& scales) {
  if (scales.empty()) throw ConfigError("augment: no scale factors");
  return augment_at(image, mask, rng, size, scales[rng.below(scales.size())]);
}

void SynthConfig::validate() const {
  auto range = [](double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ConfigError(std::string("synth: empty ") + what + " range");
  };
  if (count == 0 || size < 8) throw ConfigError("synth: need count >= 1 and size >= 8");
  if (blobs_min == 0 || blobs_min > blobs_max) throw ConfigError("synth: blob count range must be 1 <= min <= max");
  range(area_min, area_max, "area");
  range(contrast_min, contrast_max, "contrast");
  range(blur_min, blur_max, "blur");
  if (area_min <= 0.0 || area_max >= 1.0) throw ConfigError("synth: area fractions must lie in (0, 1)");
  if (contrast_min < 0.0 || blur_min < 0.0 || noise < 0.0) throw ConfigError("synth: negative parameter");
}

namespace {

struct Blob {
  double cy, cx, ry, rx, angle;
  double amp[3], phase[3];
};

bool inside(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double u = (c * dx + s * dy) / b.rx, v = (-s * dx + c * dy) / b.ry;
  const double phi = std::atan2(v, u);
  double r = 1.0;
  for (int k = 0; k < 3; ++k) r += b.amp[k] * std::cos((k + 2) * phi + b.phase[k]);
  return u * u + v * v <= r * r;
}

std::vector<double> blur(const std::vector<double>& src, std::size_t n, double sigma) {
  if (sigma <= 0.0) return src;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  const long N = static_cast<long>(n);
  auto at = [&](long v) { return static_cast<std::size_t>(std::clamp(v, 0L, N - 1)); };
  std::vector<double> tmp(n * n), out(n * n);
  for (long i = 0; i < N; ++i) {
    for (long j = 0; j < N; ++j) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * src[i * n + at(j + t)];
      tmp[i * n + j] = acc;
    }
  }
  for (long i = 0; i < N; ++i) {
    for (long j = 0; j < N; ++j) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp[at(i + t) * n + j];
      out[i * n + j] = acc;
    }
  }
  return out;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

SynthSample synth_sample(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(index);
  const std::size_t n = cfg.size;
  const double S = static_cast<double>(n), pixels = S * S;
  const std::size_t blobs = cfg.blobs_min + rng.below(cfg.blobs_max - cfg.blobs_min + 1);

  std::vector<double> mask(n * n);
  bool accepted = false;
  for (int attempt = 0; attempt < 500 && !accepted; ++attempt) {
    const double target = rng.uniform(cfg.area_min, cfg.area_max) * pixels;
    std::vector<double> w(blobs);
    double wsum = 0.0;
    for (auto& v : w) wsum += v = rng.uniform(0.5, 1.5);
    std::vector<Blob> shapes;
    for (std::size_t b = 0; b < blobs; ++b) {
      Blob s{};
      const double area = target * w[b] / wsum;
      const double aspect = rng.uniform(0.6, 1.0);
      s.rx = std::sqrt(area / (std::numbers::pi * aspect));
      s.ry = s.rx * aspect;
      s.cy = rng.uniform(0.15, 0.85) * S;
      s.cx = rng.uniform(0.15, 0.85) * S;
      s.angle = rng.uniform(0.0, std::numbers::pi);
      for (int k = 0; k < 3; ++k) {
        s.amp[k] = rng.uniform(0.0, 0.12);
        s.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      shapes.push_back(s);
    }
    std::vector<std::size_t> per_blob(blobs, 0);
    double count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double y = static_cast<double>(i) + 0.5, x = static_cast<double>(j) + 0.5;
        bool on = false;
        for (std::size_t b = 0; b < blobs; ++b) {
          if (inside(shapes[b], y, x)) {
            on = true;
            ++per_blob[b];
          }
        }
        mask[i * n + j] = on ? 1.0 : 0.0;
        count += on ? 1.0 : 0.0;
      }
    }
    const double frac = count / pixels;
    accepted = frac >= cfg.area_min && frac <= cfg.area_max &&
               std::all_of(per_blob.begin(), per_blob.end(), [](std::size_t c) { return c > 0; });
  }
  if (!accepted) throw ConfigError("synth: could not place blobs within the area range");

  const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  const double sigma = rng.uniform(cfg.blur_min, cfg.blur_max);
  const double tint[3] = {1.0, rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.6)};
  const double sign = rng.uniform() < 0.75 ? 1.0 : -1.0;
  double base[3];
  for (double& b : base) b = rng.uniform(0.3, 0.55);
  struct Wave {
    double fy, fx, phase;
  } waves[3];
  for (auto& wv : waves) wv = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2.0 * std::numbers::pi)};
  const std::vector<double> soft = blur(mask, n, sigma);

  SynthSample out;
  out.blobs = blobs;
  out.rgb.resize(n * n * 3);
  out.mask.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double y = static_cast<double>(i) / S, x = static_cast<double>(j) / S;
      double tex = 0.0;
      for (const auto& wv : waves) tex += std::sin(2.0 * std::numbers::pi * (wv.fy * y + wv.fx * x) + wv.phase);
      tex *= cfg.noise;
      const std::size_t p = i * n + j;
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + tex + sign * contrast * tint[c] * soft[p] + cfg.noise * rng.normal();
        out.rgb[p * 3 + c] = quantize(v);
      }
      out.mask[p] = mask[p] > 0.5 ? 255 : 0;
    }
  }
  return out;
}

std::vector<SynthSample> synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthSample> out(cfg.count);
  parallel_for(cfg.count, [&](std::size_t i) { out[i] = synth_sample(cfg, i); });
  return out;
}

Tensor image_tensor(const std::vector<std::uint8_t>& rgb, std::size_t h, std::size_t w) {
  if (rgb.size() != h * w * 3) throw ShapeError("image_tensor: buffer size mismatch");
  std::vector<double> v(rgb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rgb[i] / 255.0;
  return Tensor({h, w, 3}, std::move(v));
}

Tensor mask_tensor(const std::vector<std::uint8_t>& gray, std::size_t h, std::size_t w) {
  if (gray.size() != h * w) throw ShapeError("mask_tensor: buffer size mismatch");
  std::vector<double> v(gray.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = gray[i] >= 128 ? 1.0 : 0.0;
  return Tensor({h, w}, std::move(v));
}

std::vector<std::uint8_t> to_u8(const Tensor& t) {
  std::vector<std::uint8_t> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize(d[i]);
  return out;
}

}  // namespace magup
