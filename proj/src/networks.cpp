#include "idgan/networks.hpp"

#include <algorithm>
#include <cmath>

#include "idgan/errors.hpp"

namespace idgan {

namespace {

constexpr double kLeak = 0.2;
const double kHeGain = std::sqrt(2.0);

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeak); }

torch::Tensor upsample2x(const torch::Tensor& x) {
  return torch::upsample_nearest2d(x, {x.size(2) * 2, x.size(3) * 2});
}

torch::Tensor downsample2x(const torch::Tensor& x) { return torch::avg_pool2d(x, {2, 2}); }

class GeneratorBlockImpl : public torch::nn::Module {
 public:
  GeneratorBlockImpl(int64_t in, int64_t out, const NetworkOptions& o) : pixel_norm_(o.pixel_norm) {
    conv1_ = register_module("conv1", EqualizedConv2d(in, out, 3, kHeGain, o.equalized_lr));
    conv2_ = register_module("conv2", EqualizedConv2d(out, out, 3, kHeGain, o.equalized_lr));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = lrelu(conv1_(upsample2x(x)));
    if (pixel_norm_) h = pixel_norm(h);
    h = lrelu(conv2_(h));
    if (pixel_norm_) h = pixel_norm(h);
    return h;
  }

 private:
  bool pixel_norm_;
  EqualizedConv2d conv1_{nullptr};
  EqualizedConv2d conv2_{nullptr};
};

class DiscriminatorBlockImpl : public torch::nn::Module {
 public:
  DiscriminatorBlockImpl(int64_t in, int64_t out, const NetworkOptions& o) {
    conv1_ = register_module("conv1", EqualizedConv2d(in, in, 3, kHeGain, o.equalized_lr));
    conv2_ = register_module("conv2", EqualizedConv2d(in, out, 3, kHeGain, o.equalized_lr));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = lrelu(conv1_(x));
    h = lrelu(conv2_(h));
    return downsample2x(h);
  }

 private:
  EqualizedConv2d conv1_{nullptr};
  EqualizedConv2d conv2_{nullptr};
};

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("fade-in alpha must lie in [0, 1]");
}

}  // namespace

int64_t NetworkOptions::channels_at(int64_t stage) const {
  const int64_t halvings = std::max<int64_t>(0, stage - 1);
  int64_t c = channels_base;
  for (int64_t i = 0; i < halvings && c > channels_min; ++i) c /= 2;
  return std::max(c, channels_min);
}

EqualizedLinearImpl::EqualizedLinearImpl(int64_t in, int64_t out, double gain, bool equalized) {
  const double he = gain / std::sqrt(static_cast<double>(in));
  auto w = torch::randn({out, in});
  if (equalized) {
    scale_ = he;
  } else {
    w.mul_(he);
    scale_ = 1.0;
  }
  weight = register_parameter("weight", w);
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualizedLinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, weight * scale_, bias);
}

EqualizedConv2dImpl::EqualizedConv2dImpl(int64_t in, int64_t out, int64_t kernel, double gain,
                                         bool equalized)
    : padding_(kernel / 2) {
  const double he = gain / std::sqrt(static_cast<double>(in * kernel * kernel));
  auto w = torch::randn({out, in, kernel, kernel});
  if (equalized) {
    scale_ = he;
  } else {
    w.mul_(he);
    scale_ = 1.0;
  }
  weight = register_parameter("weight", w);
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualizedConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, weight * scale_, bias, /*stride=*/1, /*padding=*/padding_);
}

torch::Tensor pixel_norm(const torch::Tensor& x, double eps) {
  return x * torch::rsqrt(x.pow(2).mean(1, /*keepdim=*/true) + eps);
}

torch::Tensor minibatch_stddev(const torch::Tensor& x, double eps) {
  auto centered = x - x.mean(0, /*keepdim=*/true);
  auto stddev = torch::sqrt(centered.pow(2).mean(0) + eps).mean();
  auto feature = stddev.expand({x.size(0), 1, x.size(2), x.size(3)});
  return torch::cat({x, feature}, 1);
}

// ----------------------------------------------------------------------------
// Generator

GeneratorImpl::GeneratorImpl(NetworkOptions options) : options_(options) {
  if (options_.max_stage < 0) throw ConfigError("max_stage must be >= 0");
  const int64_t c0 = options_.channels_at(0);
  dense_ = register_module(
      "dense", EqualizedLinear(kGeneratorInputDim, c0 * 16, kHeGain / 4, options_.equalized_lr));
  base_conv_ = register_module("base_conv",
                               EqualizedConv2d(c0, c0, 3, kHeGain, options_.equalized_lr));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  to_rgb_ = register_module("to_rgb", torch::nn::ModuleList());
  add_stage(0);
}

void GeneratorImpl::add_stage(int64_t stage) {
  const auto dtype = dense_->weight.scalar_type();
  if (stage > 0) {
    auto block = std::make_shared<GeneratorBlockImpl>(options_.channels_at(stage - 1),
                                                      options_.channels_at(stage), options_);
    block->to(dtype);
    blocks_->push_back(block);
  }
  auto rgb = EqualizedConv2d(options_.channels_at(stage), options_.image_channels, 1, 1.0,
                             options_.equalized_lr);
  rgb->to(dtype);
  to_rgb_->push_back(rgb);
}

void GeneratorImpl::grow() {
  if (stage_ + 1 > options_.max_stage) {
    throw ConfigError("cannot grow generator beyond max_stage " +
                      std::to_string(options_.max_stage));
  }
  add_stage(stage_ + 1);
  ++stage_;
  alpha_ = 0.0;
}

void GeneratorImpl::set_alpha(double alpha) {
  check_alpha(alpha);
  alpha_ = alpha;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& latents) {
  if (latents.dim() != 2 || latents.size(1) != kGeneratorInputDim) {
    throw ShapeError("generator expects batch×" + std::to_string(kGeneratorInputDim) +
                     " latents");
  }
  auto x = options_.pixel_norm ? pixel_norm(latents) : latents;
  const int64_t c0 = options_.channels_at(0);
  auto h = lrelu(dense_(x)).view({x.size(0), c0, 4, 4});
  if (options_.pixel_norm) h = pixel_norm(h);
  h = lrelu(base_conv_(h));
  if (options_.pixel_norm) h = pixel_norm(h);

  for (int64_t s = 1; s < stage_; ++s) h = blocks_->ptr<GeneratorBlockImpl>(s - 1)->forward(h);

  if (stage_ == 0) return torch::tanh(to_rgb_->ptr<EqualizedConv2dImpl>(0)->forward(h));

  auto fresh = blocks_->ptr<GeneratorBlockImpl>(stage_ - 1)->forward(h);
  auto image = torch::tanh(to_rgb_->ptr<EqualizedConv2dImpl>(stage_)->forward(fresh));
  if (alpha_ >= 1.0) return image;
  auto previous = upsample2x(torch::tanh(to_rgb_->ptr<EqualizedConv2dImpl>(stage_ - 1)->forward(h)));
  return (1.0 - alpha_) * previous + alpha_ * image;
}

// ----------------------------------------------------------------------------
// Discriminator

DiscriminatorImpl::DiscriminatorImpl(NetworkOptions options, int64_t num_identities)
    : options_(options), num_identities_(num_identities) {
  if (num_identities_ < 2) throw ConfigError("discriminator needs at least 2 identities");
  const int64_t c0 = options_.channels_at(0);
  const bool eq = options_.equalized_lr;
  from_rgb_ = register_module("from_rgb", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  final_conv_ = register_module(
      "final_conv", EqualizedConv2d(c0 + (options_.minibatch_stddev ? 1 : 0), c0, 3, kHeGain, eq));
  final_dense_ = register_module("final_dense", EqualizedLinear(c0 * 16, c0, kHeGain, eq));
  adv_head_ = register_module("adv_head", EqualizedLinear(c0, 1, 1.0, eq));
  id_head_ = register_module("id_head", EqualizedLinear(c0, num_identities_, 1.0, eq));
  mi_head_ = register_module("mi_head", EqualizedLinear(c0, kLatentDim, 1.0, eq));
  add_stage(0);
}

void DiscriminatorImpl::add_stage(int64_t stage) {
  const auto dtype = final_conv_->weight.scalar_type();
  auto rgb = EqualizedConv2d(options_.image_channels, options_.channels_at(stage), 1, kHeGain,
                             options_.equalized_lr);
  rgb->to(dtype);
  from_rgb_->push_back(rgb);
  if (stage > 0) {
    auto block = std::make_shared<DiscriminatorBlockImpl>(options_.channels_at(stage),
                                                          options_.channels_at(stage - 1), options_);
    block->to(dtype);
    blocks_->push_back(block);
  }
}

void DiscriminatorImpl::grow() {
  if (stage_ + 1 > options_.max_stage) {
    throw ConfigError("cannot grow discriminator beyond max_stage " +
                      std::to_string(options_.max_stage));
  }
  add_stage(stage_ + 1);
  ++stage_;
  alpha_ = 0.0;
}

void DiscriminatorImpl::set_alpha(double alpha) {
  check_alpha(alpha);
  alpha_ = alpha;
}

torch::Tensor DiscriminatorImpl::trunk(const torch::Tensor& images) {
  const int64_t res = resolution();
  if (images.dim() != 4 || images.size(1) != options_.image_channels || images.size(2) != res ||
      images.size(3) != res) {
    throw ShapeError("discriminator at stage " + std::to_string(stage_) + " expects batch×" +
                     std::to_string(options_.image_channels) + "×" + std::to_string(res) + "×" +
                     std::to_string(res) + " images");
  }
  auto h = lrelu(from_rgb_->ptr<EqualizedConv2dImpl>(stage_)->forward(images));
  if (stage_ > 0) {
    h = blocks_->ptr<DiscriminatorBlockImpl>(stage_ - 1)->forward(h);
    if (alpha_ < 1.0) {
      auto previous =
          lrelu(from_rgb_->ptr<EqualizedConv2dImpl>(stage_ - 1)->forward(downsample2x(images)));
      h = (1.0 - alpha_) * previous + alpha_ * h;
    }
    for (int64_t s = stage_ - 1; s >= 1; --s) {
      h = blocks_->ptr<DiscriminatorBlockImpl>(s - 1)->forward(h);
    }
  }
  if (options_.minibatch_stddev) h = minibatch_stddev(h);
  h = lrelu(final_conv_(h));
  return lrelu(final_dense_(h.flatten(1)));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto features = trunk(images);
  return {adv_head_(features).squeeze(1), id_head_(features), mi_head_(features)};
}

// ----------------------------------------------------------------------------

Generator build_generator(int64_t stage, const NetworkOptions& options) {
  if (stage < 0 || stage > options.max_stage) {
    throw ConfigError("generator stage " + std::to_string(stage) + " outside [0, " +
                      std::to_string(options.max_stage) + "]");
  }
  Generator g(options);
  for (int64_t s = 0; s < stage; ++s) g->grow();
  g->set_alpha(1.0);
  return g;
}

Generator build_generator(int64_t stage, int64_t max_stage, int64_t channels_base) {
  NetworkOptions o;
  o.max_stage = max_stage;
  o.channels_base = channels_base;
  o.channels_min = std::min(o.channels_min, channels_base);
  return build_generator(stage, o);
}

Discriminator build_discriminator(int64_t stage, int64_t num_identities,
                                  const NetworkOptions& options) {
  if (stage < 0 || stage > options.max_stage) {
    throw ConfigError("discriminator stage " + std::to_string(stage) + " outside [0, " +
                      std::to_string(options.max_stage) + "]");
  }
  Discriminator d(options, num_identities);
  for (int64_t s = 0; s < stage; ++s) d->grow();
  d->set_alpha(1.0);
  return d;
}

GanModel GanModel::create(const NetworkOptions& options, int64_t num_identities, int64_t stage) {
  GanModel m;
  m.options = options;
  m.num_identities = num_identities;
  m.generator = build_generator(stage, options);
  m.discriminator = build_discriminator(stage, num_identities, options);
  EmbeddingOptions eo;
  eo.num_identities = num_identities;
  eo.hidden_width = options.latent_hidden_width;
  m.embedding = IdentityEmbedding(eo);
  m.latent_critic = LatentCritic(options.latent_hidden_width);
  return m;
}

void GanModel::set_alpha(double alpha) {
  generator->set_alpha(alpha);
  discriminator->set_alpha(alpha);
}

torch::Tensor GanModel::generate(const torch::Tensor& z_id, const torch::Tensor& z_nid) {
  if (z_id.dim() != 2 || z_nid.dim() != 2 || z_id.size(1) != kLatentDim ||
      z_nid.size(1) != kLatentDim || z_id.size(0) != z_nid.size(0)) {
    throw ShapeError("generate expects matching batch×64 z_id and z_nid");
  }
  return generator->forward(torch::cat({z_id, z_nid}, 1));
}

std::vector<std::pair<std::string, torch::Tensor>> GanModel::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto append = [&out](const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters()) {
      out.emplace_back(prefix + item.key(), item.value());
    }
  };
  append("G.", *generator);
  append("D.", *discriminator);
  append("E.", *embedding);
  append("Dz.", *latent_critic);
  return out;
}

void GanModel::to(torch::Dtype dtype) {
  generator->to(dtype);
  discriminator->to(dtype);
  embedding->to(dtype);
  latent_critic->to(dtype);
}

void GanModel::eval() {
  generator->eval();
  discriminator->eval();
  embedding->eval();
  latent_critic->eval();
}

void GanModel::train() {
  generator->train();
  discriminator->train();
  embedding->train();
  latent_critic->train();
}

void grow(GanModel& model, int64_t new_stage) {
  if (new_stage != model.stage() + 1) {
    throw ConfigError("grow must advance exactly one stage (from " +
                      std::to_string(model.stage()) + " to " + std::to_string(new_stage) + ")");
  }
  model.generator->grow();
  model.discriminator->grow();
}

}  // namespace idgan
