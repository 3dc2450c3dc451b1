#pragma once

#include <array>
#include <optional>
#include <utility>

#include "magup/ssm.hpp"

namespace magup {

struct MsdConfig {
  std::size_t in_channels = 0;
  std::size_t c0 = 0;
  std::array<std::size_t, 3> kernels = {3, 5, 7};  // fine to coarse
};

struct MaGuPConfig {
  std::size_t d_model = 64;
  std::size_t reduction = 4;
  std::size_t c0 = 0;  // 0 -> ceil(d_model / (3 r))
  std::size_t c1 = 0;  // 0 -> 2 c0
  std::size_t c5 = 0;  // 0 -> d_model / r
  bool msd = true;
  bool mamba1d = true;
  bool mamba2d = true;
  bool swap_streams = false;  // F^S feeds the channel stream, F^C the spatial one
  bool share_directions = false;
  std::size_t d_state = 8;
  std::size_t channel_embed = 8;  // width of each channel token

  // Fills the derived widths; throws ConfigError on non-positive sizes.
  MaGuPConfig resolved() const;
  std::size_t bottleneck() const { return d_model / reduction; }
  bool any_stream() const { return mamba1d || mamba2d; }
};

// Parallel same-padded convolutions; output channels stacked [F_7 | F_5 | F_3].
struct Msd {
  MsdConfig cfg;
  std::vector<Tensor> weights;  // per kernel: k x k x C x C0, in cfg.kernels order
  std::vector<Tensor> biases;

  static Msd make(MsdConfig cfg, Rng& rng);
  // A single k=3 branch, used when the pyramid is ablated but a stream still needs input.
  static Msd single(std::size_t in_channels, std::size_t out_channels, Rng& rng);

  std::size_t out_channels() const;
  Tensor operator()(const Tensor& x) const;  // H x W x C
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

Tensor msd_pyramid(const Tensor& x, const Msd& msd);

struct StreamState {
  Tensor salient;
  Tensor contextual;
  std::optional<Tensor> channel_out;
  std::optional<Tensor> spatial_out;
};

struct ChannelStream {
  nn::Linear embed;  // 1 -> e per channel token
  Mamba1d mamba;
  nn::Linear head;   // e -> 1
  nn::Linear phi;    // C1 -> C1 on the pooled descriptor

  static ChannelStream make(std::size_t c1, const MaGuPConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& f) const;  // H x W x C1
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

struct SpatialStream {
  Ss2d ss2d;
  nn::Linear phi;  // per-pixel C1 -> C1

  static SpatialStream make(std::size_t c1, const MaGuPConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& f) const;  // H x W x C1, no skip
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

Tensor channel_stream(const Tensor& f, const ChannelStream& s);
Tensor spatial_stream(const Tensor& f, const SpatialStream& s);

struct MaGuPAdapter {
  MaGuPConfig cfg;
  nn::Linear down;  // d_model -> d_model / r
  std::optional<Msd> msd;
  std::optional<nn::Linear> proj_salient;
  std::optional<nn::Linear> proj_context;
  std::optional<ChannelStream> channel;
  std::optional<SpatialStream> spatial;
  std::optional<nn::Linear> fuse;  // stream outputs (or F*) -> C5
  nn::Linear up;  // C5 -> d_model, zero-initialised

  static MaGuPAdapter make(const MaGuPConfig& cfg, Rng& rng);

  // Residual-free branch output: T x d_model.
  Tensor delta(const Tensor& tokens, std::size_t H, std::size_t W) const;
  Tensor operator()(const Tensor& tokens, std::size_t H, std::size_t W) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

std::pair<Tensor, Tensor> derive_streams(const Tensor& pyramid, const nn::Linear& salient,
                                         const nn::Linear& context);

// Either stream output may be absent when its toggle is off; at least one must be given.
Tensor fuse_domain_embedding(const std::optional<Tensor>& channel_out,
                             const std::optional<Tensor>& spatial_out, const nn::Linear& fuse);

Tensor adapter_forward(const Tensor& tokens, std::size_t H, std::size_t W, const MaGuPAdapter& a);

std::size_t count_params(const std::function<void(const nn::ParamVisitor&)>& visit);

template <typename Module>
std::size_t param_count(Module& m) {
  return count_params([&](const nn::ParamVisitor& f) { m.visit("", f); });
}

}  // namespace magup
