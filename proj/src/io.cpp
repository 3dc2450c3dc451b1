#include "magup/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "magup/errors.hpp"
#include "magup/parallel.hpp"

namespace magup {

Image8 read_png(const fs::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const fs::path& path, const Image8& src) {
  if (src.channels != 1 && src.channels != 3) throw ContractError("write_png: channels must be 1 or 3");
  if (src.pixels.size() != src.width * src.height * src.channels) throw ContractError("write_png: buffer size");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(src.width);
  img.height = static_cast<png_uint_32>(src.height);
  img.format = src.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  if (!png_image_write_to_file(&img, path.c_str(), 0, src.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + img.message);
  }
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

std::vector<SampleRecord> list_samples(const fs::path& root, Split split) {
  fs::path base = root / split_name(split);
  if (!fs::is_directory(base / "images")) {
    if (fs::is_directory(root / "images")) {
      base = root;
    } else {
      throw IoError("no images directory under " + base.string() + " or " + root.string());
    }
  }
  std::vector<SampleRecord> out;
  for (const auto& entry : fs::directory_iterator(base / "images")) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const fs::path mask = base / "masks" / entry.path().filename();
    if (!fs::exists(mask)) throw IoError("missing mask " + mask.string() + " for " + entry.path().string());
    out.push_back({entry.path(), mask, split});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.image < b.image; });
  if (out.empty()) throw IoError("no .png images in " + (base / "images").string());
  return out;
}

std::pair<Tensor, Tensor> load_pair(const SampleRecord& r) {
  const Image8 img = read_png(r.image, 3);
  const Image8 mask = read_png(r.mask, 1);
  if (img.width != mask.width || img.height != mask.height) {
    throw IoError("extent mismatch: " + r.image.string() + " is " + std::to_string(img.height) + "x" +
                  std::to_string(img.width) + ", " + r.mask.string() + " is " + std::to_string(mask.height) + "x" +
                  std::to_string(mask.width));
  }
  return {image_tensor(img.pixels, img.height, img.width), mask_tensor(mask.pixels, mask.height, mask.width)};
}

std::vector<Sample> load_samples(const std::vector<SampleRecord>& records) {
  std::vector<Sample> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    auto [img, mask] = load_pair(records[i]);
    out[i] = {std::move(img), std::move(mask)};
  });
  return out;
}

void write_mask_png(const fs::path& path, const Tensor& prob, bool binary) {
  if (prob.rank() != 2) throw ShapeError("write_mask_png: expected H x W, got " + shape_str(prob.shape()));
  Image8 img{prob.dim(1), prob.dim(0), 1, {}};
  if (binary) {
    img.pixels.resize(prob.numel());
    for (std::size_t i = 0; i < prob.numel(); ++i) img.pixels[i] = prob[i] >= 0.5 ? 255 : 0;
  } else {
    img.pixels = to_u8(prob);
  }
  write_png(path, img);
}

Tensor read_prob_png(const fs::path& path) {
  const Image8 img = read_png(path, 1);
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return Tensor({img.height, img.width}, std::move(v));
}

void write_synth_dataset(const fs::path& out, const SynthConfig& cfg, std::size_t test_count) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  for (const char* split : {"train", "test"}) {
    for (const char* kind : {"images", "masks"}) {
      if (std::string(split) == "test" && test_count == 0) continue;
      fs::create_directories(out / split / kind, ec);
      if (ec) throw IoError("cannot create " + (out / split / kind).string() + ": " + ec.message());
    }
  }
  const std::size_t total = cfg.count + test_count;
  parallel_for(total, [&](std::size_t i) {
    const SynthSample s = synth_sample(cfg, i);
    const bool train = i < cfg.count;
    const fs::path dir = out / (train ? "train" : "test");
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", train ? i : i - cfg.count);
    write_png(dir / "images" / name, {cfg.size, cfg.size, 3, s.rgb});
    write_png(dir / "masks" / name, {cfg.size, cfg.size, 1, s.mask});
  });
}

}  // namespace magup
