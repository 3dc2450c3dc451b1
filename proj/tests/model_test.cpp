#include <gtest/gtest.h>

#include <map>

#include "gradcheck.hpp"
#include "magup/data.hpp"
#include "magup/errors.hpp"
#include "magup/model.hpp"

using namespace magup;
using magup::testing::gradcheck;
using magup::testing::random_tensor;

namespace {

ModelConfig tiny_cfg(std::uint64_t seed = 1) {
  ModelConfig c;
  c.seed = seed;
  c.encoder.image_size = 16;
  c.encoder.patch = 4;
  c.encoder.d_model = 16;
  c.encoder.blocks = 2;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2;
  c.encoder.adapter.reduction = 4;
  c.encoder.adapter.d_state = 4;
  c.encoder.adapter.channel_embed = 4;
  c.decoder.heads = 2;
  c.decoder.depth = 2;
  return c;
}

void randomize(Tensor& t, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
}

// Zero-initialised tensors (adapter up-projections, prompt output) get random
// values so gradients reach everything upstream of them.
void randomize_zero_inits(SegModel& m, std::uint64_t seed) {
  std::uint64_t k = seed;
  m.visit([&](const std::string& name, Tensor& t) {
    ++k;
    const bool zero = std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
    if (zero && name.find("beta") == std::string::npos) randomize(t, k, 0.2);
  });
}

Tensor image(std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor({s, s, 3}, rng.uniform_vector(s * s * 3, 0.0, 1.0));
}

Tensor blob_mask(std::size_t s, double cy, double cx, double r) {
  std::vector<double> v(s * s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
      v[i * s + j] = dy * dy + dx * dx <= r * r ? 1.0 : 0.0;
    }
  return Tensor({s, s}, v);
}

std::map<std::string, std::vector<double>> snapshot(SegModel& m) {
  std::map<std::string, std::vector<double>> out;
  m.visit([&](const std::string& n, Tensor& t) { out[n] = {t.data().begin(), t.data().end()}; });
  return out;
}

std::vector<Sample> tiny_data(std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({image(16, 100 + i), blob_mask(16, 5.0 + static_cast<double>(i), 8.0, 4.0)});
  }
  return out;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Encoder, GridShape) {
  ModelConfig c;
  c.encoder.image_size = 64;
  SegModel m = SegModel::make(c);
  const EncoderOutput out = m.encoder(image(64, 1));
  EXPECT_EQ(out.grid.shape(), (Shape{8, 8, 64}));
  EXPECT_EQ(out.E.shape(), (Shape{8, 8, 64}));
}

TEST(Encoder, SizeNotDivisibleByPatch) {
  ModelConfig c = tiny_cfg();
  c.encoder.image_size = 18;
  EXPECT_THROW(SegModel::make(c), ContractError);
}

TEST(Encoder, WrongImageSizeIsContractError) {
  SegModel m = SegModel::make(tiny_cfg());
  EXPECT_THROW(m.encoder(image(20, 1)), ContractError);
}

TEST(Encoder, FreshAdaptersAreIdentity) {
  for (auto placement : {AdapterPlacement::parallel, AdapterPlacement::sequential}) {
    ModelConfig c = tiny_cfg();
    c.encoder.placement = placement;
    SegModel m = SegModel::make(c);
    const Tensor x = image(16, 3);
    EXPECT_TRUE(same(m.encoder(x, true).grid, m.encoder(x, false).grid));
    EXPECT_TRUE(same(m.encoder(x, true).E, m.encoder(x, false).E));
  }
}

TEST(Encoder, TrainedAdaptersChangeOutput) {
  SegModel m = SegModel::make(tiny_cfg());
  randomize(m.encoder.blocks[0].adapter.up.weight, 5);
  const Tensor x = image(16, 3);
  EXPECT_FALSE(same(m.encoder(x, true).grid, m.encoder(x, false).grid));
}

TEST(Encoder, DeterministicUnderSeed) {
  SegModel a = SegModel::make(tiny_cfg(7)), b = SegModel::make(tiny_cfg(7)), c = SegModel::make(tiny_cfg(8));
  const Tensor x = image(16, 4);
  EXPECT_TRUE(same(a.encoder(x).grid, b.encoder(x).grid));
  EXPECT_FALSE(same(a.encoder(x).grid, c.encoder(x).grid));
}

TEST(Head, ZeroProjectionGivesHalf) {
  SegModel m = SegModel::make(tiny_cfg());
  for (auto& v : m.head.proj.weight.mutable_data()) v = 0.0;
  for (auto& v : m.head.proj.bias->mutable_data()) v = 0.0;
  const Tensor p = m.forward(image(16, 1), Stage::one).enc_up;
  EXPECT_EQ(p.shape(), (Shape{16, 16}));
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST(Head, GradientReachesAdapter) {
  SegModel m = SegModel::make(tiny_cfg(2));
  randomize_zero_inits(m, 40);
  const Tensor x = image(16, 5), M = blob_mask(16, 7, 7, 4);
  auto& a = m.encoder.blocks[0].adapter;
  const auto r = gradcheck([&] { return combined_loss(m.forward(x, Stage::one).enc_up, M); },
                           {a.up.weight, a.down.weight, a.msd->weights[0]}, 6, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Prompt, ZeroInitIsNeutral) {
  SegModel m = SegModel::make(tiny_cfg());
  const Tensor p = m.prompt(Tensor::full({16, 16}, 0.7));
  EXPECT_EQ(p.shape(), (Shape{4, 4, 16}));
  for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Prompt, DistinguishesMasksOnceTrained) {
  SegModel m = SegModel::make(tiny_cfg());
  randomize(m.prompt.proj.weight, 9);
  const Tensor a = m.prompt(Tensor::full({16, 16}, 0.5));
  const Tensor b = m.prompt(Tensor::full({16, 16}, 1.0));
  EXPECT_FALSE(same(a, b));
}

TEST(Prompt, CausalityOnDecoderOutput) {
  SegModel m = SegModel::make(tiny_cfg(3));
  const Tensor x = image(16, 6);
  // zero prompt output: decoder ignores the pseudo mask
  const Tensor before = infer(m, x);
  randomize(m.head.proj.weight, 11, 1.0);
  EXPECT_TRUE(same(before, infer(m, x)));
  // live prompt: changing the pseudo mask changes the decoder output
  randomize(m.prompt.proj.weight, 12);
  const Tensor with_prompt = infer(m, x);
  randomize(m.head.proj.weight, 13, 1.0);
  EXPECT_FALSE(same(with_prompt, infer(m, x)));
}

TEST(Decoder, OutputRangeAndExtents) {
  SegModel m = SegModel::make(tiny_cfg());
  const Tensor p = infer(m, image(16, 7));
  EXPECT_EQ(p.shape(), (Shape{16, 16}));
  for (double v : p.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Decoder, SinusoidalPeShape) {
  const Tensor pe = sinusoidal_pe(3, 5, 16);
  EXPECT_EQ(pe.shape(), (Shape{15, 16}));
  EXPECT_FALSE(same(slice(pe, 0, 0, 1), slice(pe, 0, 1, 1)));
}

TEST(Model, ComponentClassification) {
  EXPECT_EQ(component_of("encoder.blocks.0.adapter.up.weight"), Component::adapter);
  EXPECT_EQ(component_of("encoder.blocks.0.fc1.weight"), Component::backbone);
  EXPECT_EQ(component_of("encoder.pos"), Component::backbone);
  EXPECT_EQ(component_of("head.proj.bias"), Component::head);
  EXPECT_EQ(component_of("prompt.proj.weight"), Component::prompt);
  EXPECT_EQ(component_of("decoder.mask_token"), Component::decoder);
  EXPECT_EQ(component_of("bdc.q.weight"), Component::bdc);
  EXPECT_THROW(component_of("mystery"), ContractError);
}

TEST(Model, ParameterNamesUnique) {
  SegModel m = SegModel::make(tiny_cfg());
  std::map<std::string, int> seen;
  for (const auto& [name, t] : m.named_parameters()) EXPECT_EQ(++seen[name], 1) << name;
  EXPECT_GT(seen.count("bdc.out.weight"), 0u);
}

TEST(Model, Stage2GraphFiniteDifferences) {
  ModelConfig c = tiny_cfg(4);
  c.bdc.stop_gradient = false;  // finite differences see the target branch too
  c.encoder.freeze_backbone = false;
  SegModel m = SegModel::make(c);
  randomize_zero_inits(m, 60);
  const Tensor x = image(16, 8), M = blob_mask(16, 6, 9, 4);
  std::map<Component, std::vector<Tensor>> groups;
  for (auto& [name, t] : m.named_parameters()) groups[component_of(name)].push_back(t);
  for (auto& [comp, tensors] : groups) {
    if (comp == Component::head) continue;  // frozen in Stage II, covered by Head.GradientReachesAdapter
    Rng pick(static_cast<std::uint64_t>(comp) + 70);
    std::vector<Tensor> chosen;
    for (int k = 0; k < 5; ++k) chosen.push_back(tensors[pick.below(tensors.size())]);
    const auto r = gradcheck([&] { return sample_loss(m, Stage::two, x, M, 1.0); }, chosen, 2, 1e-5);
    EXPECT_LT(r.max_rel_err, 1e-3) << component_name(comp);
    EXPECT_GE(r.checked, 5u);
  }
}

TEST(Train, StageOneIsolation) {
  SegModel m = SegModel::make(tiny_cfg(5));
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch = 2;
  tc.max_steps = 2;
  train_stage1(m, tiny_data(4), tc);
  const auto after = snapshot(m);
  bool adapter_moved = false, head_moved = false;
  for (const auto& [name, v] : before) {
    const Component c = component_of(name);
    if (c == Component::backbone || c == Component::decoder || c == Component::prompt) {
      EXPECT_EQ(v, after.at(name)) << name;
    }
    if (c == Component::adapter && v != after.at(name)) adapter_moved = true;
    if (c == Component::head && v != after.at(name)) head_moved = true;
  }
  EXPECT_TRUE(adapter_moved);
  EXPECT_TRUE(head_moved);
}

TEST(Train, StageTwoIsolation) {
  SegModel m = SegModel::make(tiny_cfg(6));
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch = 2;
  tc.max_steps = 2;
  train_stage2(m, tiny_data(4), tc);
  const auto after = snapshot(m);
  bool decoder_moved = false, prompt_moved = false;
  for (const auto& [name, v] : before) {
    const Component c = component_of(name);
    if (c == Component::backbone || c == Component::head) EXPECT_EQ(v, after.at(name)) << name;
    if (c == Component::decoder && v != after.at(name)) decoder_moved = true;
    if (c == Component::prompt && v != after.at(name)) prompt_moved = true;
  }
  EXPECT_TRUE(decoder_moved);
  EXPECT_TRUE(prompt_moved);
}

TEST(Train, UnfrozenBackboneMoves) {
  ModelConfig c = tiny_cfg(7);
  c.encoder.freeze_backbone = false;
  SegModel m = SegModel::make(c);
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch = 2;
  tc.max_steps = 1;
  train_stage1(m, tiny_data(2), tc);
  EXPECT_NE(before.at("encoder.pos"), snapshot(m).at("encoder.pos"));
}

TEST(Train, Errors) {
  SegModel m = SegModel::make(tiny_cfg());
  TrainConfig tc;
  EXPECT_THROW(train_stage1(m, {}, tc), ContractError);
  tc.lr = 0.0;
  EXPECT_THROW(train_stage1(m, tiny_data(1), tc), ConfigError);
  tc = TrainConfig{};
  tc.batch = 0;
  EXPECT_THROW(train_stage2(m, tiny_data(1), tc), ConfigError);
}

TEST(Train, DeterministicLossTrajectory) {
  auto run = [] {
    SegModel m = SegModel::make(tiny_cfg(8));
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.batch = 2;
    tc.max_steps = 3;
    tc.seed = 4;
    auto s1 = train_stage1(m, tiny_data(4), tc);
    auto s2 = train_stage2(m, tiny_data(4), tc);
    s1.losses.insert(s1.losses.end(), s2.losses.begin(), s2.losses.end());
    return s1.losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, MaxStepsAndEpochs) {
  SegModel m = SegModel::make(tiny_cfg());
  TrainConfig tc;
  tc.batch = 3;
  tc.epochs = 2;
  const auto s = train_stage1(m, tiny_data(4), tc);
  EXPECT_EQ(s.steps, 4u);  // 2 batches per epoch, last one partial
  tc.max_steps = 3;
  EXPECT_EQ(train_stage1(m, tiny_data(4), tc).steps, 3u);
}

TEST(Infer, RejectsMask) {
  SegModel m = SegModel::make(tiny_cfg());
  EXPECT_THROW(infer(m, image(16, 1), blob_mask(16, 7, 7, 3)), ContractError);
}

TEST(Infer, IndependentOfBdc) {
  SegModel m = SegModel::make(tiny_cfg(9));
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch = 2;
  tc.max_steps = 2;
  train_stage1(m, tiny_data(2), tc);
  const Tensor x = image(16, 2);
  const Tensor a = infer(m, x);
  for (auto& [name, t] : m.named_parameters()) {
    if (component_of(name) == Component::bdc) {
      Tensor tt = t;
      randomize(tt, 3, 5.0);
    }
  }
  EXPECT_TRUE(same(a, infer(m, x)));
  m.bdc.reset();
  EXPECT_TRUE(same(a, infer(m, x)));
}

TEST(Infer, ResamplesOtherSizes) {
  SegModel m = SegModel::make(tiny_cfg());
  const Tensor p = infer(m, image(24, 3));
  EXPECT_EQ(p.shape(), (Shape{24, 24}));
  EXPECT_TRUE(same(p, infer(m, image(24, 3))));
}

TEST(Ablation, TrainableCountsIncrease) {
  std::vector<std::size_t> counts;
  for (int row = 0; row < 5; ++row) {
    ModelConfig c = tiny_cfg();
    c.encoder.adapter.msd = row >= 1;
    c.encoder.adapter.mamba1d = row >= 2;
    c.encoder.adapter.mamba2d = row >= 3;
    c.use_bdc = row >= 4;
    SegModel m = SegModel::make(c);
    counts.push_back(m.trainable_count(Stage::two));
  }
  for (std::size_t i = 1; i < counts.size(); ++i) EXPECT_GT(counts[i], counts[i - 1]) << i;
}
