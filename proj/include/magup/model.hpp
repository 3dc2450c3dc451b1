#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "magup/adapter.hpp"
#include "magup/bdc.hpp"
#include "magup/losses.hpp"
#include "magup/nn.hpp"
#include "magup/optim.hpp"

namespace magup {

enum class AdapterPlacement { parallel, sequential };

struct EncoderConfig {
  std::size_t image_size = 352;
  std::size_t patch = 8;
  std::size_t d_model = 64;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  AdapterPlacement placement = AdapterPlacement::parallel;
  bool freeze_backbone = true;
  MaGuPConfig adapter;  // d_model is taken from the encoder

  std::size_t grid() const { return image_size / patch; }
  void validate() const;
};

struct DecoderConfig {
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 2;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  bool use_bdc = true;
  BdcConfig bdc;  // channels taken from the encoder
  std::uint64_t seed = 0;
};

struct EncoderBlock {
  nn::LayerNorm ln1;
  nn::MultiHeadAttention attn;
  nn::LayerNorm ln2;
  nn::Linear fc1, fc2;
  MaGuPAdapter adapter;

  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

struct EncoderOutput {
  Tensor grid;  // h x w x d, after the final norm
  Tensor E;     // Block-L tap fed to the BDC: the normalised last-block output
};

struct Encoder {
  EncoderConfig cfg;
  Tensor patch_weight;  // p x p x 3 x d
  Tensor patch_bias;
  Tensor pos;  // (h*w) x d
  std::vector<EncoderBlock> blocks;
  nn::LayerNorm norm;

  static Encoder make(const EncoderConfig& cfg, Rng& rng);
  // image: S x S x 3. `with_adapters` false runs the plain backbone.
  EncoderOutput operator()(const Tensor& image, bool with_adapters = true) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

// f(theta): 1x1 projection, bilinear upsample of the logits, logistic.
struct PseudoMaskHead {
  nn::Linear proj;  // d -> 1

  static PseudoMaskHead make(std::size_t d_model, Rng& rng);
  Tensor operator()(const Tensor& grid, std::size_t H, std::size_t W) const;  // -> H x W
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

// Strided 2x2 convolutions down to grid resolution, then a zero-initialised 1x1 projection.
struct PromptEncoder {
  std::vector<Tensor> weights;  // 2 x 2 x Cin x Cout
  std::vector<Tensor> biases;
  nn::Linear proj;

  static PromptEncoder make(std::size_t patch, std::size_t d_model, Rng& rng);
  Tensor operator()(const Tensor& mask) const;  // H x W -> h x w x d
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

struct TwoWayLayer {
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm n1;
  nn::MultiHeadAttention token_to_image;
  nn::LayerNorm n2;
  nn::Linear mlp1, mlp2;
  nn::LayerNorm n3;
  nn::MultiHeadAttention image_to_token;
  nn::LayerNorm n4;
  bool skip_first_pe = false;

  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

struct MaskDecoder {
  DecoderConfig cfg;
  Tensor mask_token;  // 1 x d
  std::vector<TwoWayLayer> layers;
  nn::MultiHeadAttention final_attn;
  nn::LayerNorm norm_final;
  Tensor up1_weight, up1_bias;  // d x 2 x 2 x d/4
  nn::LayerNorm up_norm;
  Tensor up2_weight, up2_bias;  // d/4 x 2 x 2 x d/8
  nn::Linear hyper1, hyper2, hyper3;

  static MaskDecoder make(const DecoderConfig& cfg, std::size_t d_model, Rng& rng);
  // src: image embedding plus dense prompt, h x w x d. Returns H x W probabilities.
  Tensor operator()(const Tensor& src, std::size_t H, std::size_t W) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
};

// Fixed 2D sinusoidal positional encoding, (h*w) x d.
Tensor sinusoidal_pe(std::size_t h, std::size_t w, std::size_t d);

enum class Component { backbone, adapter, head, prompt, decoder, bdc };
const char* component_name(Component c);
Component component_of(const std::string& param_name);

struct StageOutputs {
  Tensor enc_up;  // O^Up_Enc
  Tensor dec;     // O_Dec (empty in Stage I forward)
  Tensor E;
  Tensor grid;
};

enum class Stage { one = 1, two = 2 };

struct SegModel {
  ModelConfig cfg;
  Encoder encoder;
  PseudoMaskHead head;
  PromptEncoder prompt;
  MaskDecoder decoder;
  std::optional<Bdc> bdc;
  Phase phase = Phase::train;

  static SegModel make(const ModelConfig& cfg);
  void visit(const nn::ParamVisitor& f);
  // Parameters by component, in visit order.
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<std::pair<std::string, Tensor>> trainable(Stage stage);
  std::size_t trainable_count(Stage stage);

  // Full forward on one S x S x 3 image. Stage one skips the decoder.
  StageOutputs forward(const Tensor& image, Stage stage) const;
};

// L_D on the stage's output plus lambda * distillation (when the model has a BDC).
Tensor sample_loss(const SegModel& model, Stage stage, const Tensor& image, const Tensor& mask,
                   double lambda, const LossOptions& loss = {});

struct Sample {
  Tensor image;  // H x W x 3 in [0,1]
  Tensor mask;   // H x W in {0,1}
};

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch = 8;
  std::size_t epochs = 200;
  std::size_t max_steps = 0;  // 0: no cap
  double lambda_distill = 1.0;
  std::uint64_t seed = 0;
  bool augment = true;
  std::vector<double> scales = {0.75, 1.0, 1.25};
  LossOptions loss;

  void validate() const;
};

struct TrainStats {
  std::vector<double> losses;  // one per optimiser step (batch mean)
  std::size_t steps = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Adam over the stage's trainable set; fresh moments every call.
TrainStats train_stage(SegModel& model, Stage stage, const std::vector<Sample>& data,
                       const TrainConfig& cfg, const StepCallback& on_step = {});
TrainStats train_stage1(SegModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                        const StepCallback& on_step = {});
TrainStats train_stage2(SegModel& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                        const StepCallback& on_step = {});

// Encoder -> pseudo mask -> prompt -> decoder. Any image size; resampled to the
// model resolution and back. Passing a mask is a contract error.
Tensor infer(const SegModel& model, const Tensor& image, const std::optional<Tensor>& mask = std::nullopt);

}  // namespace magup
