#include "idgan/identity_latent.hpp"

#include <string>

#include "idgan/errors.hpp"
#include "idgan/random.hpp"

namespace idgan {

IdentityEmbeddingImpl::IdentityEmbeddingImpl(EmbeddingOptions options) : options_(options) {
  if (options_.num_identities < 1) throw ConfigError("embedding needs at least one identity");
  if (options_.hidden_width < 1) throw ConfigError("embedding hidden width must be >= 1");
  table_ = register_module(
      "table", torch::nn::Embedding(options_.num_identities, options_.table_width));
  hidden_ = register_module("hidden",
                            torch::nn::Linear(options_.table_width, options_.hidden_width));
  heads_ = register_module("heads", torch::nn::Linear(options_.hidden_width, 2 * kLatentDim));

  // Start with sigma ≈ 1: small log_var weights and zero bias.
  torch::NoGradGuard no_grad;
  heads_->weight.narrow(0, kLatentDim, kLatentDim).mul_(0.1);
  heads_->bias.zero_();
}

std::pair<torch::Tensor, torch::Tensor> IdentityEmbeddingImpl::forward(
    const torch::Tensor& labels) {
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= options_.num_identities) {
      throw IndexError("identity label outside [0, " + std::to_string(options_.num_identities) +
                       ")");
    }
  }
  auto h = torch::leaky_relu(hidden_(table_(labels)), 0.2);
  auto out = heads_(h);
  return {out.narrow(1, 0, kLatentDim), out.narrow(1, kLatentDim, kLatentDim)};
}

LatentCriticImpl::LatentCriticImpl(int64_t hidden_width) {
  if (hidden_width < 1) throw ConfigError("latent critic hidden width must be >= 1");
  fc1_ = register_module("fc1", torch::nn::Linear(kLatentDim, hidden_width));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden_width, hidden_width));
  fc3_ = register_module("fc3", torch::nn::Linear(hidden_width, 1));
}

torch::Tensor LatentCriticImpl::forward(const torch::Tensor& z) {
  auto h = torch::leaky_relu(fc1_(z), 0.2);
  h = torch::leaky_relu(fc2_(h), 0.2);
  return fc3_(h).squeeze(1);
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& log_var,
                             const torch::Tensor& noise) {
  if (mu.sizes() != log_var.sizes() || mu.sizes() != noise.sizes()) {
    throw ShapeError("reparameterize: mu, log_var and noise must share a shape");
  }
  return mu + torch::exp(0.5 * log_var) * noise;
}

torch::Tensor sample_prior(int64_t batch, torch::Generator& generator) {
  if (batch < 1) throw ConfigError("sample_prior: batch must be >= 1");
  return torch::randn({batch, kLatentDim}, generator, torch::kFloat32);
}

torch::Tensor sample_prior(int64_t batch, std::uint64_t seed) {
  auto gen = make_generator(seed);
  return sample_prior(batch, gen);
}

LatentLosses latent_adversarial_loss(const Critic& critic, const torch::Tensor& embedded,
                                     const torch::Tensor& prior_samples,
                                     const torch::Tensor& interp_coeffs, double lambda_e) {
  if (embedded.sizes() != prior_samples.sizes()) {
    throw ShapeError("latent_adversarial_loss: embedded and prior batches differ");
  }
  auto fake_scores = critic(embedded);
  auto prior_scores = critic(prior_samples);
  if (!torch::isfinite(fake_scores).all().item<bool>() ||
      !torch::isfinite(prior_scores).all().item<bool>()) {
    throw NumericalError("non-finite latent critic score");
  }
  LatentLosses out;
  out.penalty = gradient_penalty(critic, embedded, prior_samples, interp_coeffs, lambda_e);
  out.critic = fake_scores.mean() - prior_scores.mean() + out.penalty;
  out.embedder = -fake_scores.mean();
  return out;
}

LatentLosses latent_adversarial_loss(IdentityEmbedding& embedding, LatentCritic& critic,
                                     const torch::Tensor& labels, const torch::Tensor& noise,
                                     const torch::Tensor& prior_samples,
                                     const torch::Tensor& interp_coeffs, double lambda_e) {
  auto [mu, log_var] = embedding->forward(labels);
  auto z = reparameterize(mu, log_var, noise);
  return latent_adversarial_loss([&](const torch::Tensor& v) { return critic->forward(v); }, z,
                                 prior_samples, interp_coeffs, lambda_e);
}

}  // namespace idgan
