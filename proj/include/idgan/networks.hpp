#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idgan/data.hpp"
#include "idgan/identity_latent.hpp"

namespace idgan {

/// Generator input width: z_id ‖ z_nid.
inline constexpr int64_t kGeneratorInputDim = 2 * kLatentDim;

struct NetworkOptions {
  int64_t max_stage = 3;
  int64_t channels_base = 64;
  int64_t channels_min = 16;
  int64_t image_channels = 3;
  /// Hidden width of the identity embedding E and the latent critic D_zid.
  int64_t latent_hidden_width = 128;
  // Progressive-GAN stabilizers, individually switchable.
  bool equalized_lr = true;
  bool pixel_norm = true;
  bool minibatch_stddev = true;

  /// Feature maps at a stage: channels_base for stages 0 and 1, then halved
  /// per stage down to channels_min.
  int64_t channels_at(int64_t stage) const;
  int64_t final_resolution() const { return stage_resolution(max_stage); }
};

/// Linear layer with runtime He scaling (equalized learning rate).
class EqualizedLinearImpl : public torch::nn::Module {
 public:
  EqualizedLinearImpl(int64_t in, int64_t out, double gain, bool equalized);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double scale_;
};
TORCH_MODULE(EqualizedLinear);

/// Same-padded convolution with runtime He scaling.
class EqualizedConv2dImpl : public torch::nn::Module {
 public:
  EqualizedConv2dImpl(int64_t in, int64_t out, int64_t kernel, double gain, bool equalized);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double scale_;
  int64_t padding_;
};
TORCH_MODULE(EqualizedConv2d);

/// Normalizes each feature vector (dim 1) to unit average square.
torch::Tensor pixel_norm(const torch::Tensor& x, double eps = 1e-8);

/// Appends the batch-wide mean standard deviation as one extra channel.
torch::Tensor minibatch_stddev(const torch::Tensor& x, double eps = 1e-8);

/// Progressive generator: batch×128 latents → batch×C×R×R images in [-1, 1].
///
/// Stage 0 holds the base block (dense 4×4 projection plus one convolution);
/// every later stage adds an upsampling block of two convolutions. While
/// alpha < 1 the output blends the upsampled previous-stage image with the
/// newest stage's image; both paths are tanh-bounded, so the blend is too.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(NetworkOptions options);

  torch::Tensor forward(const torch::Tensor& latents);

  /// Adds the next stage; existing parameters are untouched and alpha resets to 0.
  void grow();

  int64_t stage() const { return stage_; }
  int64_t resolution() const { return stage_resolution(stage_); }
  /// Convolutional depth: 1 + 2·stage.
  int64_t num_layers() const { return 1 + 2 * stage_; }
  double alpha() const { return alpha_; }
  void set_alpha(double alpha);
  const NetworkOptions& options() const { return options_; }

 private:
  void add_stage(int64_t stage);

  NetworkOptions options_;
  int64_t stage_ = 0;
  double alpha_ = 1.0;
  EqualizedLinear dense_{nullptr};
  EqualizedConv2d base_conv_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};  // blocks_[s - 1] serves stage s
  torch::nn::ModuleList to_rgb_{nullptr};  // to_rgb_[s] serves stage s
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
  torch::Tensor adv;        // batch, Wasserstein score
  torch::Tensor id_logits;  // batch × K
  torch::Tensor mi;         // batch × 64, regression of z_nid
};

/// Progressive discriminator with a shared trunk and three heads.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(NetworkOptions options, int64_t num_identities);

  /// Throws ShapeError when the input resolution differs from 4·2^stage.
  DiscriminatorOutput forward(const torch::Tensor& images);

  /// Adversarial head only.
  torch::Tensor score(const torch::Tensor& images) { return forward(images).adv; }

  /// Shared-trunk features feeding the three heads.
  torch::Tensor trunk(const torch::Tensor& images);

  void grow();

  int64_t stage() const { return stage_; }
  int64_t resolution() const { return stage_resolution(stage_); }
  int64_t num_layers() const { return 1 + 2 * stage_; }
  int64_t num_identities() const { return num_identities_; }
  double alpha() const { return alpha_; }
  void set_alpha(double alpha);

 private:
  void add_stage(int64_t stage);

  NetworkOptions options_;
  int64_t num_identities_;
  int64_t stage_ = 0;
  double alpha_ = 1.0;
  torch::nn::ModuleList from_rgb_{nullptr};  // from_rgb_[s] serves stage s
  torch::nn::ModuleList blocks_{nullptr};    // blocks_[s - 1] serves stage s
  EqualizedConv2d final_conv_{nullptr};
  EqualizedLinear final_dense_{nullptr};
  EqualizedLinear adv_head_{nullptr};
  EqualizedLinear id_head_{nullptr};
  EqualizedLinear mi_head_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Builds a generator already grown to `stage`. Throws ConfigError when
/// stage is outside [0, max_stage].
Generator build_generator(int64_t stage, int64_t max_stage, int64_t channels_base = 64);
Generator build_generator(int64_t stage, const NetworkOptions& options);

/// Builds a discriminator already grown to `stage`. Throws ConfigError when
/// num_identities < 2 or the stage is out of range.
Discriminator build_discriminator(int64_t stage, int64_t num_identities,
                                  const NetworkOptions& options = {});

/// The four networks trained together: G, the three-headed D, the identity
/// embedding E and the latent critic D_zid.
struct GanModel {
  NetworkOptions options;
  int64_t num_identities = 0;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  IdentityEmbedding embedding{nullptr};
  LatentCritic latent_critic{nullptr};

  static GanModel create(const NetworkOptions& options, int64_t num_identities,
                         int64_t stage = 0);

  int64_t stage() const { return generator->stage(); }
  double alpha() const { return generator->alpha(); }
  void set_alpha(double alpha);

  /// G(z_id ‖ z_nid).
  torch::Tensor generate(const torch::Tensor& z_id, const torch::Tensor& z_nid);

  /// Every parameter, prefixed "G.", "D.", "E." or "Dz.", in registration order.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;

  void to(torch::Dtype dtype);
  void eval();
  void train();
};

/// Grows G and D to new_stage (= current stage + 1) and resets alpha to 0.
void grow(GanModel& model, int64_t new_stage);

}  // namespace idgan
