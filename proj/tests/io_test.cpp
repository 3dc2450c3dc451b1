#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "magup/checkpoint.hpp"
#include "magup/config.hpp"
#include "magup/data.hpp"
#include "magup/errors.hpp"
#include "magup/io.hpp"
#include "scratch.hpp"
#include "tiny_model.hpp"

using namespace magup;
using magup::testing::noise_image;
using magup::testing::randomize_all;
using magup::testing::scratch_dir;
using magup::testing::tiny_model_cfg;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double fg_fraction(const SynthSample& s) {
  double n = 0;
  for (auto v : s.mask) n += v == 255 ? 1.0 : 0.0;
  return n / static_cast<double>(s.mask.size());
}

// Best Dice any single-channel global threshold (either polarity) achieves.
double best_threshold_dice(const SynthSample& s) {
  const std::size_t n = s.mask.size();
  double best = 0;
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < 256; ++t) {
      for (int pol = 0; pol < 2; ++pol) {
        double inter = 0, a = 0, b = 0;
        for (std::size_t p = 0; p < n; ++p) {
          const bool on = pol == 0 ? s.rgb[p * 3 + c] > t : s.rgb[p * 3 + c] <= t;
          const bool gt = s.mask[p] == 255;
          inter += on && gt;
          a += on;
          b += gt;
        }
        best = std::max(best, 2 * inter / (a + b));
      }
    }
  }
  return best;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data();
  const auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin());
}

}  // namespace

TEST(Synth, DeterministicPerIndex) {
  SynthConfig cfg;
  cfg.seed = 7;
  const auto a = synth_sample(cfg, 3), b = synth_sample(cfg, 3), c = synth_sample(cfg, 4);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.rgb, c.rgb);
  cfg.seed = 8;
  EXPECT_NE(synth_sample(cfg, 3).mask, a.mask);
  cfg.seed = 7;
  cfg.count = 5;
  const auto all = synth_dataset(cfg);
  EXPECT_EQ(all[3].rgb, a.rgb);
}

TEST(Synth, AreaAndBlobCountWithinRange) {
  SynthConfig cfg;
  cfg.seed = 11;
  cfg.count = 100;
  for (const auto& s : synth_dataset(cfg)) {
    const double f = fg_fraction(s);
    EXPECT_GE(f, cfg.area_min);
    EXPECT_LE(f, cfg.area_max);
    EXPECT_GE(s.blobs, cfg.blobs_min);
    EXPECT_LE(s.blobs, cfg.blobs_max);
    for (auto v : s.mask) ASSERT_TRUE(v == 0 || v == 255);
  }
}

TEST(Synth, ContrastCarriesTheMask) {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.count = 12;
  double with = 0, without = 0;
  for (const auto& s : synth_dataset(cfg)) with += best_threshold_dice(s) / 12;
  cfg.contrast_min = cfg.contrast_max = 0.0;
  for (const auto& s : synth_dataset(cfg)) without += best_threshold_dice(s) / 12;
  EXPECT_GT(with, 0.8);
  EXPECT_LT(without, 0.6);
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig cfg;
  cfg.area_min = 0.5;
  cfg.area_max = 0.4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.blobs_min = 0;
  EXPECT_THROW(synth_sample(cfg, 0), ConfigError);
  cfg = {};
  cfg.size = 4;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
}

TEST(Png, LosslessRoundTrip) {
  const auto dir = scratch_dir();
  Rng rng(3);
  for (std::size_t ch : {1u, 3u}) {
    Image8 img{13, 7, ch, {}};
    for (std::size_t i = 0; i < 13 * 7 * ch; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    const auto p = dir / "sub" / ("x" + std::to_string(ch) + ".png");
    write_png(p, img);
    const Image8 back = read_png(p, ch);
    EXPECT_EQ(back.width, 13u);
    EXPECT_EQ(back.height, 7u);
    EXPECT_EQ(back.pixels, img.pixels);
  }
}

TEST(Png, GrayExpandsToRgb) {
  const auto dir = scratch_dir();
  write_png(dir / "g.png", Image8{2, 1, 1, {10, 200}});
  EXPECT_EQ(read_png(dir / "g.png", 3).pixels, (std::vector<std::uint8_t>{10, 10, 10, 200, 200, 200}));
}

TEST(Png, ErrorsAreIoErrors) {
  const auto dir = scratch_dir();
  EXPECT_THROW(read_png(dir / "missing.png", 3), IoError);
  spit(dir / "junk.png", "not a png at all");
  EXPECT_THROW(read_png(dir / "junk.png", 1), IoError);
  EXPECT_THROW(read_png(dir / "junk.png", 2), ContractError);
}

TEST(Dataset, MaskThresholdTieGoesToForeground) {
  const auto dir = scratch_dir();
  write_png(dir / "images" / "a.png", Image8{4, 1, 3, std::vector<std::uint8_t>(12, 255)});
  write_png(dir / "masks" / "a.png", Image8{4, 1, 1, {0, 127, 128, 255}});
  const auto recs = list_samples(dir, Split::train);
  ASSERT_EQ(recs.size(), 1u);
  const auto [img, mask] = load_pair(recs[0]);
  EXPECT_EQ(img.shape(), (Shape{1, 4, 3}));
  EXPECT_DOUBLE_EQ(img.data()[0], 1.0);
  EXPECT_EQ(std::vector<double>(mask.data().begin(), mask.data().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Dataset, ListingAndErrors) {
  const auto dir = scratch_dir();
  SynthConfig cfg;
  cfg.count = 3;
  cfg.size = 16;
  cfg.seed = 2;
  write_synth_dataset(dir, cfg, 2);
  EXPECT_EQ(list_samples(dir, Split::train).size(), 3u);
  const auto test = list_samples(dir, Split::test);
  ASSERT_EQ(test.size(), 2u);
  EXPECT_EQ(test[1].image.filename(), "0001.png");
  // Test samples continue the generator after the training indices.
  const auto [img, mask] = load_pair(test[0]);
  const SynthSample s = synth_sample(cfg, 3);
  EXPECT_TRUE(same_values(img, image_tensor(s.rgb, 16, 16)));
  EXPECT_TRUE(same_values(mask, mask_tensor(s.mask, 16, 16)));
  const auto loaded = load_samples(test);
  EXPECT_TRUE(same_values(loaded[0].image, img));

  fs::remove(dir / "test" / "masks" / "0001.png");
  EXPECT_THROW(list_samples(dir, Split::test), IoError);
  write_png(dir / "test" / "masks" / "0001.png", Image8{3, 3, 1, std::vector<std::uint8_t>(9)});
  EXPECT_THROW(load_pair(list_samples(dir, Split::test)[1]), IoError);
  EXPECT_THROW(list_samples(dir / "nowhere", Split::train), IoError);
  EXPECT_THROW(parse_split("val"), ConfigError);
}

TEST(Dataset, MaskPngWriting) {
  const auto dir = scratch_dir();
  const Tensor p({1, 3}, {0.2, 0.5, 0.9});
  write_mask_png(dir / "soft.png", p, false);
  write_mask_png(dir / "hard.png", p, true);
  EXPECT_EQ(read_png(dir / "soft.png", 1).pixels, (std::vector<std::uint8_t>{51, 128, 230}));
  EXPECT_EQ(read_png(dir / "hard.png", 1).pixels, (std::vector<std::uint8_t>{0, 255, 255}));
  const Tensor back = read_prob_png(dir / "soft.png");
  EXPECT_NEAR(back.data()[2], 230.0 / 255.0, 1e-15);
}

TEST(Augment, ShapesBinaryAndAligned) {
  // A bright square marker in the image matches the mask square.
  const std::size_t H = 40, W = 30, S = 32;
  std::vector<double> im(H * W * 3, 0.0), mk(H * W, 0.0);
  for (std::size_t i = 12; i < 28; ++i)
    for (std::size_t j = 8; j < 22; ++j) {
      mk[i * W + j] = 1.0;
      for (int c = 0; c < 3; ++c) im[(i * W + j) * 3 + c] = 1.0;
    }
  const Tensor image({H, W, 3}, im), mask({H, W}, mk);
  Rng rng(9);
  std::set<double> seen;
  for (double scale : {0.75, 1.0, 1.25}) {
    for (int rep = 0; rep < 4; ++rep) {
      const auto [a, m] = augment_at(image, mask, rng, S, scale);
      ASSERT_EQ(a.shape(), (Shape{S, S, 3}));
      ASSERT_EQ(m.shape(), (Shape{S, S}));
      double in = 0, out = 0, n_in = 0, n_out = 0;
      const auto av = a.data(), mv = m.data();
      for (std::size_t p = 0; p < S * S; ++p) {
        ASSERT_TRUE(mv[p] == 0.0 || mv[p] == 1.0);
        (mv[p] == 1.0 ? in : out) += av[p * 3];
        (mv[p] == 1.0 ? n_in : n_out) += 1;
      }
      ASSERT_GT(n_in, 0);
      EXPECT_GT(in / n_in, 0.85);
      EXPECT_LT(out / n_out, 0.1);
      seen.insert(n_in);
    }
  }
  EXPECT_GT(seen.size(), 1u);
}

TEST(Augment, DeterministicGivenRng) {
  const Tensor image = noise_image(20, 20, 1);
  const Tensor mask({20, 20}, std::vector<double>(400, 1.0));
  Rng r1(4), r2(4);
  for (int i = 0; i < 5; ++i) {
    const auto a = augment(image, mask, r1, 16, {0.75, 1.0, 1.25});
    const auto b = augment(image, mask, r2, 16, {0.75, 1.0, 1.25});
    EXPECT_TRUE(same_values(a.first, b.first));
  }
  EXPECT_THROW(augment(image, mask, r1, 16, {}), ConfigError);
  EXPECT_THROW(augment_at(image, Tensor::zeros({19, 20}), r1, 16, 1.0), ShapeError);
}

TEST(Config, RoundTripAndLayering) {
  RunConfig c;
  c.model.encoder.d_model = 48;
  c.model.encoder.placement = AdapterPlacement::sequential;
  c.train.scales = {1.0};
  c.model.use_bdc = false;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  const RunConfig layered = run_config_from_json(json{{"train", {{"lr", 0.5}}}}, c);
  EXPECT_EQ(layered.model.encoder.d_model, 48u);
  EXPECT_DOUBLE_EQ(layered.train.lr, 0.5);
  EXPECT_FALSE(layered.model.use_bdc);
}

TEST(Config, RejectsUnknownAndMistyped) {
  EXPECT_THROW(run_config_from_json(json{{"trian", json::object()}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"train", {{"learning_rate", 1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"train", {{"batch", -1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"train", {{"batch", 1.5}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"model", {{"use_bdc", 1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"encoder", {{"placement", "diagonal"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"encoder", {{"d_model", 60}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"train", {{"batch", 0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json::array()), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), IoError);
}

TEST(Config, Overrides) {
  RunConfig c;
  apply_override(c, "encoder.placement=sequential");
  apply_override(c, "train.lr=0.001");
  apply_override(c, "model.use_bdc=false");
  apply_override(c, "train.scales=[1.0,1.5]");
  EXPECT_EQ(c.model.encoder.placement, AdapterPlacement::sequential);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_FALSE(c.model.use_bdc);
  EXPECT_EQ(c.train.scales, (std::vector<double>{1.0, 1.5}));
  EXPECT_THROW(apply_override(c, "lr=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.lr"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.nope=1"), ConfigError);
}

TEST(Config, Ablations) {
  RunConfig c;
  apply_ablation(c, "msd,bdc");
  EXPECT_FALSE(c.model.encoder.adapter.msd);
  EXPECT_TRUE(c.model.encoder.adapter.mamba1d);
  EXPECT_FALSE(c.model.use_bdc);
  EXPECT_THROW(apply_ablation(c, "attention"), ConfigError);
  const RunConfig r0 = ablation_row({}, 0), r4 = ablation_row({}, 4);
  EXPECT_FALSE(r0.model.encoder.adapter.msd || r0.model.encoder.adapter.mamba1d ||
               r0.model.encoder.adapter.mamba2d || r0.model.use_bdc);
  EXPECT_TRUE(r4.model.encoder.adapter.msd && r4.model.encoder.adapter.mamba1d &&
              r4.model.encoder.adapter.mamba2d && r4.model.use_bdc);
  EXPECT_THROW(ablation_row({}, 5), ConfigError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = scratch_dir();
    cfg.model = tiny_model_cfg(3);
    model = SegModel::make(cfg.model);
    randomize_all(model, 17);
    path = dir / "m.ckpt";
    save_checkpoint(path, model, cfg, json{{"note", "x"}});
  }
  fs::path dir, path;
  RunConfig cfg;
  SegModel model = SegModel::make(tiny_model_cfg());
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  CheckpointInfo info;
  SegModel back = load_checkpoint(path, &info);
  EXPECT_EQ(info.meta.at("note"), "x");
  save_checkpoint(dir / "again.ckpt", back, info.config, info.meta);
  EXPECT_EQ(slurp(path), slurp(dir / "again.ckpt"));

  auto a = model.named_parameters();
  auto b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    const auto x = a[i].second.data(), y = b[i].second.data();
    for (std::size_t k = 0; k < x.size(); ++k) ASSERT_EQ(y[k], static_cast<double>(static_cast<float>(x[k])));
  }
}

TEST_F(CheckpointTest, CorruptionIsDetected) {
  const std::string good = slurp(path);
  const auto header_at = good.find("\"config\"");
  std::string bad = good;
  bad[header_at + 2] ^= 0x01;
  spit(dir / "h.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir / "h.ckpt"), IoError);

  bad = good;
  bad[bad.size() - 7] ^= 0x10;
  spit(dir / "b.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), IoError);

  spit(dir / "t.ckpt", good.substr(0, good.size() - 4));
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), IoError);
  spit(dir / "t2.ckpt", good.substr(0, 20));
  EXPECT_THROW(read_checkpoint_info(dir / "t2.ckpt"), IoError);
  spit(dir / "x.ckpt", good + "tail");
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), IoError);
  spit(dir / "m.bin", "PK\x03\x04 something else");
  EXPECT_THROW(load_checkpoint(dir / "m.bin"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST_F(CheckpointTest, StripBdcKeepsInference) {
  strip_component(path, dir / "nobdc.ckpt", Component::bdc);
  const SegModel full = load_checkpoint(path);
  const SegModel lean = load_checkpoint(dir / "nobdc.ckpt");
  EXPECT_TRUE(full.bdc.has_value());
  EXPECT_FALSE(lean.bdc.has_value());
  for (const auto& e : read_checkpoint_info(dir / "nobdc.ckpt").manifest) {
    EXPECT_NE(component_of(e.name), Component::bdc) << e.name;
  }
  const Tensor img = noise_image(20, 24, 2);
  EXPECT_TRUE(same_values(infer(full, img), infer(lean, img)));
}

TEST_F(CheckpointTest, MissingNonBdcTensorIsAnError) {
  strip_component(path, dir / "nohead.ckpt", Component::head);
  EXPECT_THROW(load_checkpoint(dir / "nohead.ckpt"), IoError);
  // The stripped file itself is well formed.
  EXPECT_NO_THROW(read_checkpoint_info(dir / "nohead.ckpt"));
}

TEST(CheckpointManifest, MatchesModelOverRandomConfigs) {
  const auto dir = scratch_dir();
  Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    RunConfig cfg;
    cfg.model = tiny_model_cfg(trial);
    cfg.model.encoder.blocks = 1 + rng.below(3);
    cfg.model.encoder.d_model = 8 * (2 + rng.below(2));
    cfg.model.encoder.placement = rng.below(2) ? AdapterPlacement::parallel : AdapterPlacement::sequential;
    cfg.model.encoder.adapter.msd = rng.below(2);
    cfg.model.encoder.adapter.mamba1d = rng.below(2);
    cfg.model.encoder.adapter.mamba2d = rng.below(2);
    cfg.model.use_bdc = rng.below(2);
    cfg.model.decoder.depth = 1 + rng.below(2);
    SegModel m = SegModel::make(cfg.model);
    const auto p = dir / ("c" + std::to_string(trial) + ".ckpt");
    save_checkpoint(p, m, cfg);
    const CheckpointInfo info = read_checkpoint_info(p);
    const auto params = m.named_parameters();
    ASSERT_EQ(info.manifest.size(), params.size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      EXPECT_EQ(info.manifest[i].name, params[i].first);
      EXPECT_EQ(info.manifest[i].shape, params[i].second.shape());
      EXPECT_EQ(info.manifest[i].offset, offset);
      offset += info.manifest[i].count;
    }
    EXPECT_EQ(to_json(info.config), to_json(cfg));
    EXPECT_EQ(load_checkpoint(p).bdc.has_value(), cfg.model.use_bdc);
  }
}
