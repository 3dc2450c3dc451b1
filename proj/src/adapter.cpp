#include "magup/adapter.hpp"

#include <cmath>

namespace magup {

MaGuPConfig MaGuPConfig::resolved() const {
  MaGuPConfig c = *this;
  if (c.d_model == 0 || c.reduction == 0) throw ConfigError("magup: d_model and reduction must be positive");
  if (c.d_model % c.reduction != 0) {
    throw ConfigError("magup: d_model " + std::to_string(c.d_model) + " not divisible by reduction " +
                      std::to_string(c.reduction));
  }
  if (c.c0 == 0) c.c0 = (c.d_model + 3 * c.reduction - 1) / (3 * c.reduction);
  if (c.c1 == 0) c.c1 = 2 * c.c0;
  if (c.c5 == 0) c.c5 = c.d_model / c.reduction;
  if (c.d_state == 0 || c.channel_embed == 0) throw ConfigError("magup: d_state and channel_embed must be positive");
  return c;
}

Msd Msd::make(MsdConfig cfg, Rng& rng) {
  if (cfg.in_channels == 0 || cfg.c0 == 0) throw ConfigError("msd: channel counts must be positive");
  Msd m;
  m.cfg = cfg;
  for (std::size_t k : cfg.kernels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * cfg.in_channels));
    m.weights.push_back(nn::uniform_param({k, k, cfg.in_channels, cfg.c0}, bound, rng));
    m.biases.push_back(nn::uniform_param({cfg.c0}, bound, rng));
  }
  return m;
}

Msd Msd::single(std::size_t in_channels, std::size_t out_channels, Rng& rng) {
  Msd m;
  m.cfg = {in_channels, out_channels, {3, 0, 0}};
  const double bound = 1.0 / std::sqrt(static_cast<double>(9 * in_channels));
  m.weights.push_back(nn::uniform_param({3, 3, in_channels, out_channels}, bound, rng));
  m.biases.push_back(nn::uniform_param({out_channels}, bound, rng));
  return m;
}

std::size_t Msd::out_channels() const { return weights.size() * cfg.c0; }

Tensor Msd::operator()(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != cfg.in_channels) {
    throw ShapeError("msd_pyramid: input " + shape_str(x.shape()) + " expected C=" + std::to_string(cfg.in_channels));
  }
  std::vector<Tensor> branches;
  for (std::size_t i = weights.size(); i-- > 0;) branches.push_back(conv2d_same(x, weights[i]) + biases[i]);
  return branches.size() == 1 ? branches[0] : concat(branches, 2);
}

void Msd::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::string p = prefix + ".k" + std::to_string(cfg.kernels[i]);
    f(p + ".weight", weights[i]);
    f(p + ".bias", biases[i]);
  }
}

Tensor msd_pyramid(const Tensor& x, const Msd& msd) { return msd(x); }

ChannelStream ChannelStream::make(std::size_t c1, const MaGuPConfig& cfg, Rng& rng) {
  ChannelStream s;
  s.embed = nn::Linear::make(1, cfg.channel_embed, rng);
  s.mamba = Mamba1d::make({.d_model = cfg.channel_embed,
                           .d_state = cfg.d_state,
                           .bidirectional = true,
                           .share_directions = cfg.share_directions},
                          rng);
  s.head = nn::Linear::make(cfg.channel_embed, 1, rng);
  s.phi = nn::Linear::make(c1, c1, rng);
  return s;
}

Tensor ChannelStream::operator()(const Tensor& f) const {
  if (f.rank() != 3) throw ShapeError("channel_stream: input " + shape_str(f.shape()));
  const std::size_t c1 = f.dim(2);
  const Tensor pooled = reduce(f, Reduction::mean, {0, 1});  // C1
  const Tensor tokens = embed(reshape(pooled, {c1, 1}));
  const Tensor scanned = reshape(head(mamba(tokens)), {c1});
  const Tensor gate = silu(reshape(phi(reshape(pooled, {1, c1})), {c1}));
  return f * (gate * scanned) + f;
}

void ChannelStream::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  embed.visit(prefix + ".embed", f);
  mamba.visit(prefix + ".mamba", f);
  head.visit(prefix + ".head", f);
  phi.visit(prefix + ".phi", f);
}

SpatialStream SpatialStream::make(std::size_t c1, const MaGuPConfig& cfg, Rng& rng) {
  SpatialStream s;
  s.ss2d = Ss2d::make({.d_model = c1, .d_state = cfg.d_state, .share_directions = cfg.share_directions}, rng);
  s.phi = nn::Linear::make(c1, c1, rng);
  return s;
}

Tensor SpatialStream::operator()(const Tensor& f) const {
  if (f.rank() != 3) throw ShapeError("spatial_stream: input " + shape_str(f.shape()));
  return silu(phi(f)) * ss2d(f);
}

void SpatialStream::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  ss2d.visit(prefix + ".ss2d", f);
  phi.visit(prefix + ".phi", f);
}

Tensor channel_stream(const Tensor& f, const ChannelStream& s) { return s(f); }
Tensor spatial_stream(const Tensor& f, const SpatialStream& s) { return s(f); }

std::pair<Tensor, Tensor> derive_streams(const Tensor& pyramid, const nn::Linear& salient,
                                         const nn::Linear& context) {
  return {salient(pyramid), context(pyramid)};
}

Tensor fuse_domain_embedding(const std::optional<Tensor>& channel_out,
                             const std::optional<Tensor>& spatial_out, const nn::Linear& fuse) {
  if (channel_out && spatial_out) {
    const auto& a = channel_out->shape();
    const auto& b = spatial_out->shape();
    if (a.size() != 3 || b.size() != 3 || a[0] != b[0] || a[1] != b[1]) {
      throw ContractError("fuse_domain_embedding: extents " + shape_str(a) + " vs " + shape_str(b));
    }
    return fuse(concat({*channel_out, *spatial_out}, 2));
  }
  if (channel_out) return fuse(*channel_out);
  if (spatial_out) return fuse(*spatial_out);
  throw ContractError("fuse_domain_embedding: no stream output");
}

MaGuPAdapter MaGuPAdapter::make(const MaGuPConfig& config, Rng& rng) {
  MaGuPAdapter a;
  a.cfg = config.resolved();
  const MaGuPConfig& c = a.cfg;
  const std::size_t mid = c.bottleneck();
  a.down = nn::Linear::make(c.d_model, mid, rng);
  if (c.msd) {
    a.msd = Msd::make({mid, c.c0}, rng);
  } else if (c.any_stream()) {
    a.msd = Msd::single(mid, 3 * c.c0, rng);
  }
  if (a.msd) {
    const std::size_t pyr = a.msd->out_channels();
    std::size_t fused_in = pyr;
    if (c.any_stream()) {
      fused_in = 0;
      const bool need_salient = c.swap_streams ? c.mamba1d : c.mamba2d;
      const bool need_context = c.swap_streams ? c.mamba2d : c.mamba1d;
      if (need_salient) a.proj_salient = nn::Linear::make(pyr, c.c1, rng, false);
      if (need_context) a.proj_context = nn::Linear::make(pyr, c.c1, rng, false);
      if (c.mamba1d) {
        a.channel = ChannelStream::make(c.c1, c, rng);
        fused_in += c.c1;
      }
      if (c.mamba2d) {
        a.spatial = SpatialStream::make(c.c1, c, rng);
        fused_in += c.c1;
      }
    }
    a.fuse = nn::Linear::make(fused_in, c.c5, rng);
    for (auto& v : a.fuse->bias->mutable_data()) v = 0.0;
  }
  const std::size_t up_in = a.fuse ? c.c5 : mid;
  a.up = nn::Linear::make(up_in, c.d_model, rng, true, true);
  return a;
}

Tensor MaGuPAdapter::delta(const Tensor& tokens, std::size_t H, std::size_t W) const {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.d_model) {
    throw ShapeError("adapter_forward: tokens " + shape_str(tokens.shape()));
  }
  if (tokens.dim(0) != H * W) {
    throw ContractError("adapter_forward: " + std::to_string(tokens.dim(0)) + " tokens do not form a " +
                        std::to_string(H) + "x" + std::to_string(W) + " grid");
  }
  const Tensor h = gelu(down(tokens));
  if (!msd) return up(h);
  const Tensor pyramid = (*msd)(reshape(h, {H, W, cfg.bottleneck()}));
  Tensor fd;
  if (!cfg.any_stream()) {
    fd = (*fuse)(pyramid);
  } else {
    std::optional<Tensor> salient, context;
    if (proj_salient) salient = (*proj_salient)(pyramid);
    if (proj_context) context = (*proj_context)(pyramid);
    const auto& chan_in = cfg.swap_streams ? salient : context;
    const auto& spat_in = cfg.swap_streams ? context : salient;
    std::optional<Tensor> chan_out, spat_out;
    if (channel) chan_out = (*channel)(*chan_in);
    if (spatial) spat_out = (*spatial)(*spat_in);
    fd = fuse_domain_embedding(chan_out, spat_out, *fuse);
  }
  return up(reshape(fd, {H * W, cfg.c5}));
}

Tensor MaGuPAdapter::operator()(const Tensor& tokens, std::size_t H, std::size_t W) const {
  return tokens + delta(tokens, H, W);
}

void MaGuPAdapter::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  down.visit(prefix + ".down", f);
  if (msd) msd->visit(prefix + ".msd", f);
  if (proj_salient) proj_salient->visit(prefix + ".proj_salient", f);
  if (proj_context) proj_context->visit(prefix + ".proj_context", f);
  if (channel) channel->visit(prefix + ".channel", f);
  if (spatial) spatial->visit(prefix + ".spatial", f);
  if (fuse) fuse->visit(prefix + ".fuse", f);
  up.visit(prefix + ".up", f);
}

Tensor adapter_forward(const Tensor& tokens, std::size_t H, std::size_t W, const MaGuPAdapter& a) {
  return a(tokens, H, W);
}

std::size_t count_params(const std::function<void(const nn::ParamVisitor&)>& visit) {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

}  // namespace magup
