#include "magup/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magup/data.hpp"

namespace magup {

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

Tensor normal_param(const Shape& shape, double stddev, Rng& rng) {
  return Tensor::parameter(shape, rng.normal_vector(shape_numel(shape), stddev));
}

Tensor flat_tokens(const Tensor& grid) { return reshape(grid, {grid.dim(0) * grid.dim(1), grid.dim(2)}); }

}  // namespace

void EncoderConfig::validate() const {
  if (patch == 0 || image_size == 0 || image_size % patch != 0) {
    throw ContractError("image size " + std::to_string(image_size) + " not divisible by patch " +
                        std::to_string(patch));
  }
  if (!is_pow2(patch)) throw ConfigError("patch size must be a power of two, got " + std::to_string(patch));
  if (d_model == 0 || blocks == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(d_model) + " incompatible with " +
                      std::to_string(heads) + " heads");
  }
  if (d_model % 8 != 0) throw ConfigError("d_model must be a multiple of 8, got " + std::to_string(d_model));
}

// ---- encoder -----------------------------------------------------------

void EncoderBlock::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  ln1.visit(prefix + ".ln1", f);
  attn.visit(prefix + ".attn", f);
  ln2.visit(prefix + ".ln2", f);
  fc1.visit(prefix + ".fc1", f);
  fc2.visit(prefix + ".fc2", f);
  adapter.visit(prefix + ".adapter", f);
}

Encoder Encoder::make(const EncoderConfig& cfg_in, Rng& rng) {
  cfg_in.validate();
  Encoder e;
  e.cfg = cfg_in;
  e.cfg.adapter.d_model = cfg_in.d_model;
  const std::size_t d = e.cfg.d_model, p = e.cfg.patch, g = e.cfg.grid();
  const double bound = 1.0 / std::sqrt(static_cast<double>(3 * p * p));
  e.patch_weight = nn::uniform_param({p, p, 3, d}, bound, rng);
  e.patch_bias = nn::uniform_param({d}, bound, rng);
  e.pos = normal_param({g * g, d}, 0.02, rng);
  for (std::size_t i = 0; i < e.cfg.blocks; ++i) {
    EncoderBlock b{nn::LayerNorm::make(d),
                   nn::MultiHeadAttention::make(d, d, e.cfg.heads, rng),
                   nn::LayerNorm::make(d),
                   nn::Linear::make(d, d * e.cfg.mlp_ratio, rng),
                   nn::Linear::make(d * e.cfg.mlp_ratio, d, rng),
                   MaGuPAdapter::make(e.cfg.adapter, rng)};
    e.blocks.push_back(std::move(b));
  }
  e.norm = nn::LayerNorm::make(d);
  return e;
}

EncoderOutput Encoder::operator()(const Tensor& image, bool with_adapters) const {
  const std::size_t S = cfg.image_size, g = cfg.grid(), d = cfg.d_model;
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("encoder: image " + shape_str(image.shape()));
  if (image.dim(0) != S || image.dim(1) != S) {
    throw ContractError("encoder: image " + shape_str(image.shape()) + " but model size is " + std::to_string(S));
  }
  Tensor h = flat_tokens(conv2d(image, patch_weight, cfg.patch, 0) + patch_bias) + pos;
  for (const auto& b : blocks) {
    const Tensor n = b.ln1(h);
    h = h + b.attn(n, n, n);
    const Tensor n2 = b.ln2(h);
    std::optional<Tensor> delta;
    if (with_adapters && cfg.placement == AdapterPlacement::parallel) delta = b.adapter.delta(n2, g, g);
    h = h + b.fc2(gelu(b.fc1(n2)));
    if (with_adapters && cfg.placement == AdapterPlacement::sequential) delta = b.adapter.delta(b.ln2(h), g, g);
    if (delta) h = h + *delta;
  }
  Tensor grid = reshape(norm(h), {g, g, d});
  return {grid, grid};
}

void Encoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  f(prefix + ".patch.weight", patch_weight);
  f(prefix + ".patch.bias", patch_bias);
  f(prefix + ".pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
  norm.visit(prefix + ".norm", f);
}

// ---- pseudo mask head --------------------------------------------------

PseudoMaskHead PseudoMaskHead::make(std::size_t d_model, Rng& rng) {
  return {nn::Linear::make(d_model, 1, rng)};
}

Tensor PseudoMaskHead::operator()(const Tensor& grid, std::size_t H, std::size_t W) const {
  return reshape(sigmoid(resize_bilinear(proj(grid), H, W)), {H, W});
}

void PseudoMaskHead::visit(const std::string& prefix, const nn::ParamVisitor& f) { proj.visit(prefix + ".proj", f); }

// ---- prompt encoder ----------------------------------------------------

PromptEncoder PromptEncoder::make(std::size_t patch, std::size_t d_model, Rng& rng) {
  if (!is_pow2(patch) || patch < 2) throw ConfigError("prompt encoder needs a power-of-two patch >= 2");
  PromptEncoder p;
  std::size_t cin = 1;
  for (std::size_t s = patch, i = 0; s > 1; s /= 2, ++i) {
    const std::size_t cout = std::min<std::size_t>(4u << i, 16);
    const double bound = 1.0 / std::sqrt(static_cast<double>(4 * cin));
    p.weights.push_back(nn::uniform_param({2, 2, cin, cout}, bound, rng));
    p.biases.push_back(nn::uniform_param({cout}, bound, rng));
    cin = cout;
  }
  p.proj = nn::Linear::make(cin, d_model, rng, true, true);
  return p;
}

Tensor PromptEncoder::operator()(const Tensor& mask) const {
  if (mask.rank() != 2) throw ShapeError("prompt encoder: mask " + shape_str(mask.shape()));
  Tensor x = reshape(mask, {mask.dim(0), mask.dim(1), 1});
  for (std::size_t i = 0; i < weights.size(); ++i) x = gelu(conv2d(x, weights[i], 2, 0) + biases[i]);
  return proj(x);
}

void PromptEncoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    f(prefix + ".conv" + std::to_string(i) + ".weight", weights[i]);
    f(prefix + ".conv" + std::to_string(i) + ".bias", biases[i]);
  }
  proj.visit(prefix + ".proj", f);
}

// ---- mask decoder ------------------------------------------------------

Tensor sinusoidal_pe(std::size_t h, std::size_t w, std::size_t d) {
  const std::size_t quarter = d / 4;
  std::vector<double> v(h * w * d, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double* row = &v[(i * w + j) * d];
      const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
      for (std::size_t k = 0; k < quarter; ++k) {
        const double freq = std::pow(100.0, static_cast<double>(k) / static_cast<double>(quarter)) * M_PI;
        row[k] = std::sin(y * freq);
        row[quarter + k] = std::cos(y * freq);
        row[2 * quarter + k] = std::sin(x * freq);
        row[3 * quarter + k] = std::cos(x * freq);
      }
    }
  }
  return Tensor({h * w, d}, std::move(v));
}

void TwoWayLayer::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  self_attn.visit(prefix + ".self_attn", f);
  n1.visit(prefix + ".n1", f);
  token_to_image.visit(prefix + ".t2i", f);
  n2.visit(prefix + ".n2", f);
  mlp1.visit(prefix + ".mlp1", f);
  mlp2.visit(prefix + ".mlp2", f);
  n3.visit(prefix + ".n3", f);
  image_to_token.visit(prefix + ".i2t", f);
  n4.visit(prefix + ".n4", f);
}

MaskDecoder MaskDecoder::make(const DecoderConfig& cfg, std::size_t d, Rng& rng) {
  if (cfg.depth == 0 || cfg.heads == 0) throw ConfigError("decoder depth and heads must be positive");
  MaskDecoder m;
  m.cfg = cfg;
  m.mask_token = normal_param({1, d}, 1.0, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    TwoWayLayer l{nn::MultiHeadAttention::make(d, d, cfg.heads, rng),
                  nn::LayerNorm::make(d),
                  nn::MultiHeadAttention::make(d, d / 2, cfg.heads, rng),
                  nn::LayerNorm::make(d),
                  nn::Linear::make(d, d * cfg.mlp_ratio, rng),
                  nn::Linear::make(d * cfg.mlp_ratio, d, rng),
                  nn::LayerNorm::make(d),
                  nn::MultiHeadAttention::make(d, d / 2, cfg.heads, rng),
                  nn::LayerNorm::make(d),
                  i == 0};
    m.layers.push_back(std::move(l));
  }
  m.final_attn = nn::MultiHeadAttention::make(d, d / 2, cfg.heads, rng);
  m.norm_final = nn::LayerNorm::make(d);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(d * 4));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(d));
  m.up1_weight = nn::uniform_param({d, 2, 2, d / 4}, b1, rng);
  m.up1_bias = nn::uniform_param({d / 4}, b1, rng);
  m.up_norm = nn::LayerNorm::make(d / 4);
  m.up2_weight = nn::uniform_param({d / 4, 2, 2, d / 8}, b2, rng);
  m.up2_bias = nn::uniform_param({d / 8}, b2, rng);
  m.hyper1 = nn::Linear::make(d, d, rng);
  m.hyper2 = nn::Linear::make(d, d, rng);
  m.hyper3 = nn::Linear::make(d, d / 8, rng);
  return m;
}

Tensor MaskDecoder::operator()(const Tensor& src, std::size_t H, std::size_t W) const {
  const std::size_t h = src.dim(0), w = src.dim(1), d = src.dim(2);
  const Tensor key_pe = sinusoidal_pe(h, w, d);
  const Tensor& query_pe = mask_token;
  Tensor queries = mask_token;
  Tensor keys = flat_tokens(src);
  for (const auto& l : layers) {
    if (l.skip_first_pe) {
      queries = l.self_attn(queries, queries, queries);
    } else {
      const Tensor q = queries + query_pe;
      queries = queries + l.self_attn(q, q, queries);
    }
    queries = l.n1(queries);
    {
      const Tensor q = queries + query_pe, k = keys + key_pe;
      queries = l.n2(queries + l.token_to_image(q, k, keys));
    }
    queries = l.n3(queries + l.mlp2(gelu(l.mlp1(queries))));
    {
      const Tensor q = queries + query_pe, k = keys + key_pe;
      keys = l.n4(keys + l.image_to_token(k, q, queries));
    }
  }
  queries = norm_final(queries + final_attn(queries + query_pe, keys + key_pe, keys));

  const Tensor up = gelu(conv_transpose2d(gelu(up_norm(conv_transpose2d(reshape(keys, {h, w, d}), up1_weight) + up1_bias)),
                                          up2_weight) +
                         up2_bias);
  const Tensor hyper = hyper3(gelu(hyper2(gelu(hyper1(queries)))));  // 1 x d/8
  const std::size_t uh = up.dim(0), uw = up.dim(1);
  const Tensor logits = reshape(matmul(reshape(up, {uh * uw, up.dim(2)}), transpose(hyper)), {uh, uw, 1});
  return reshape(sigmoid(resize_bilinear(logits, H, W)), {H, W});
}

void MaskDecoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  f(prefix + ".mask_token", mask_token);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layers." + std::to_string(i), f);
  final_attn.visit(prefix + ".final_attn", f);
  norm_final.visit(prefix + ".norm_final", f);
  f(prefix + ".up1.weight", up1_weight);
  f(prefix + ".up1.bias", up1_bias);
  up_norm.visit(prefix + ".up_norm", f);
  f(prefix + ".up2.weight", up2_weight);
  f(prefix + ".up2.bias", up2_bias);
  hyper1.visit(prefix + ".hyper1", f);
  hyper2.visit(prefix + ".hyper2", f);
  hyper3.visit(prefix + ".hyper3", f);
}

// ---- model -------------------------------------------------------------

const char* component_name(Component c) {
  switch (c) {
    case Component::backbone: return "backbone";
    case Component::adapter: return "adapter";
    case Component::head: return "head";
    case Component::prompt: return "prompt";
    case Component::decoder: return "decoder";
    case Component::bdc: return "bdc";
  }
  return "?";
}

Component component_of(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("bdc.")) return Component::bdc;
  if (starts("head.")) return Component::head;
  if (starts("prompt.")) return Component::prompt;
  if (starts("decoder.")) return Component::decoder;
  if (starts("encoder.") && name.find(".adapter.") != std::string::npos) return Component::adapter;
  if (starts("encoder.")) return Component::backbone;
  throw ContractError("unknown parameter " + name);
}

SegModel SegModel::make(const ModelConfig& cfg_in) {
  SegModel m;
  m.cfg = cfg_in;
  m.cfg.encoder.adapter.d_model = cfg_in.encoder.d_model;
  m.cfg.bdc.channels = cfg_in.encoder.d_model;
  Rng root(m.cfg.seed);
  Rng r_enc = root.fork(1), r_head = root.fork(2), r_prompt = root.fork(3), r_dec = root.fork(4), r_bdc = root.fork(5);
  m.encoder = Encoder::make(m.cfg.encoder, r_enc);
  m.head = PseudoMaskHead::make(m.cfg.encoder.d_model, r_head);
  m.prompt = PromptEncoder::make(m.cfg.encoder.patch, m.cfg.encoder.d_model, r_prompt);
  m.decoder = MaskDecoder::make(m.cfg.decoder, m.cfg.encoder.d_model, r_dec);
  if (m.cfg.use_bdc) m.bdc = Bdc::make(m.cfg.bdc, r_bdc);
  return m;
}

void SegModel::visit(const nn::ParamVisitor& f) {
  encoder.visit("encoder", f);
  head.visit("head", f);
  prompt.visit("prompt", f);
  decoder.visit("decoder", f);
  if (bdc) bdc->visit("bdc", f);
}

std::vector<std::pair<std::string, Tensor>> SegModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  visit([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

namespace {

bool trains(Component c, Stage stage, bool freeze_backbone) {
  switch (c) {
    case Component::backbone: return !freeze_backbone;
    case Component::adapter:
    case Component::bdc: return true;
    case Component::head: return stage == Stage::one;
    case Component::prompt:
    case Component::decoder: return stage == Stage::two;
  }
  return false;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> SegModel::trainable(Stage stage) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : named_parameters()) {
    if (trains(component_of(name), stage, cfg.encoder.freeze_backbone)) out.emplace_back(name, t);
  }
  return out;
}

std::size_t SegModel::trainable_count(Stage stage) {
  std::size_t n = 0;
  for (const auto& [name, t] : trainable(stage)) n += t.numel();
  return n;
}

StageOutputs SegModel::forward(const Tensor& image, Stage stage) const {
  const std::size_t S = cfg.encoder.image_size;
  EncoderOutput enc = encoder(image);
  StageOutputs out;
  out.enc_up = head(enc.grid, S, S);
  if (stage == Stage::two) {
    const Tensor dense = prompt(out.enc_up);
    out.dec = decoder(enc.grid + dense, S, S);
  }
  out.E = enc.E;
  out.grid = enc.grid;
  return out;
}

Tensor sample_loss(const SegModel& model, Stage stage, const Tensor& image, const Tensor& mask, double lambda,
                   const LossOptions& loss) {
  const StageOutputs o = model.forward(image, stage);
  Tensor total = combined_loss(stage == Stage::one ? o.enc_up : o.dec, mask, loss);
  if (model.bdc && lambda != 0.0) {
    const BdcResult r = boundary_distill(o.E, mask, *model.bdc, model.phase);
    total = total + scale(r.loss, lambda);
  }
  return total;
}

// ---- training ----------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0) || batch == 0 || epochs == 0) {
    throw ConfigError("train config needs positive lr, batch and epochs");
  }
  if (scales.empty()) throw ConfigError("train config needs at least one scale factor");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("scale factors must be positive");
  }
  if (lambda_distill < 0.0) throw ConfigError("lambda_distill must be non-negative");
}

TrainStats train_stage(SegModel& model, Stage stage, const std::vector<Sample>& data, const TrainConfig& cfg,
                       const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  const std::size_t S = model.cfg.encoder.image_size;
  for (const auto& s : data) {
    if (s.image.rank() != 3 || s.mask.rank() != 2 || s.image.dim(0) != s.mask.dim(0) ||
        s.image.dim(1) != s.mask.dim(1)) {
      throw ContractError("train: image " + shape_str(s.image.shape()) + " and mask " + shape_str(s.mask.shape()) +
                          " do not pair");
    }
  }
  model.phase = Phase::train;

  // Only the stage's set records gradients; everything else is held fixed.
  auto all = model.named_parameters();
  std::vector<Parameter> params;
  for (auto& [name, t] : all) {
    const bool on = trains(component_of(name), stage, model.cfg.encoder.freeze_backbone);
    t.set_requires_grad(on);
    if (on) params.emplace_back(name, t);
  }
  AdamOptions adam;
  adam.lr = cfg.lr;

  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.fork(1), aug_rng = rng.fork(2);
  TrainStats stats;
  std::vector<std::size_t> order(data.size());
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Tape::active().clear();
      for (auto& p : params) p.value.zero_grad();
      Tensor total;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = data[order[k]];
        Tensor image = s.image, mask = s.mask;
        if (cfg.augment) {
          std::tie(image, mask) = augment(image, mask, aug_rng, S, cfg.scales);
        } else if (image.dim(0) != S || image.dim(1) != S) {
          image = resize_bilinear(image, S, S);
          mask = reshape(resize_nearest(reshape(mask, {mask.dim(0), mask.dim(1), 1}), S, S), {S, S});
        }
        Tensor l = sample_loss(model, stage, image, mask, cfg.lambda_distill, cfg.loss);
        total = k == start ? l : total + l;
      }
      total = scale(total, 1.0 / static_cast<double>(end - start));
      backward(total);
      adam_step(params, adam);
      Tape::active().clear();
      stats.losses.push_back(total.item());
      ++stats.steps;
      if (on_step) on_step(stats.steps, stats.losses.back());
      if (cfg.max_steps != 0 && stats.steps >= cfg.max_steps) done = true;
    }
  }
  for (auto& [name, t] : all) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  return stats;
}

TrainStats train_stage1(SegModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                        const StepCallback& on_step) {
  return train_stage(model, Stage::one, data, cfg, on_step);
}

TrainStats train_stage2(SegModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                        const StepCallback& on_step) {
  return train_stage(model, Stage::two, data, cfg, on_step);
}

Tensor infer(const SegModel& model, const Tensor& image, const std::optional<Tensor>& mask) {
  if (mask) throw ContractError("infer: ground-truth masks are not accepted at inference");
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("infer: image " + shape_str(image.shape()));
  NoGradGuard guard;
  const std::size_t S = model.cfg.encoder.image_size;
  const std::size_t H = image.dim(0), W = image.dim(1);
  const Tensor x = (H == S && W == S) ? image : resize_bilinear(image, S, S);
  const EncoderOutput enc = model.encoder(x);
  const Tensor pseudo = model.head(enc.grid, S, S);
  const Tensor out = model.decoder(enc.grid + model.prompt(pseudo), S, S);
  if (H == S && W == S) return out;
  return reshape(resize_bilinear(reshape(out, {S, S, 1}), H, W), {H, W});
}

}  // namespace magup
