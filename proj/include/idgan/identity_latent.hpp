#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>

#include "idgan/penalty.hpp"

namespace idgan {

/// Width of z_id and of z_nid. The generator consumes z_id ‖ z_nid (z_id first).
inline constexpr int64_t kLatentDim = 64;

struct EmbeddingOptions {
  int64_t num_identities = 2;
  int64_t table_width = 64;
  int64_t hidden_width = 128;
};

/// Stochastic identity embedding E: label → (mu, log_var), both 64-wide.
///
/// An embedding table followed by two fully-connected layers; the second
/// layer emits mu and log_var side by side. The map is deterministic; noise
/// only enters through reparameterize().
class IdentityEmbeddingImpl : public torch::nn::Module {
 public:
  explicit IdentityEmbeddingImpl(EmbeddingOptions options);

  /// Throws IndexError on labels outside [0, K).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& labels);

  int64_t num_identities() const { return options_.num_identities; }
  const EmbeddingOptions& options() const { return options_; }

 private:
  EmbeddingOptions options_;
  torch::nn::Embedding table_{nullptr};
  torch::nn::Linear hidden_{nullptr};
  torch::nn::Linear heads_{nullptr};
};
TORCH_MODULE(IdentityEmbedding);

/// Wasserstein critic on the 64-d identity latent: 64 → 128 → 128 → 1.
class LatentCriticImpl : public torch::nn::Module {
 public:
  explicit LatentCriticImpl(int64_t hidden_width = 128);

  /// Returns one unbounded score per row.
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
  torch::nn::Linear fc3_{nullptr};
};
TORCH_MODULE(LatentCritic);

/// z_id = mu + exp(log_var / 2) ⊙ noise. Throws ShapeError on mismatched shapes.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& log_var,
                             const torch::Tensor& noise);

/// i.i.d. N(0, I_64) rows, deterministic given the seed.
torch::Tensor sample_prior(int64_t batch, std::uint64_t seed);
torch::Tensor sample_prior(int64_t batch, torch::Generator& generator);

struct LatentLosses {
  torch::Tensor critic;    // mean D(E(y)) − mean D(z) + penalty
  torch::Tensor embedder;  // −mean D(E(y))
  torch::Tensor penalty;   // λ_e · mean (‖∇D(ỹ)‖ − 1)²
};

/// Latent-space WGAN-GP loss matching embedded labels to the Gaussian prior.
///
/// `embedded` are reparameterized samples E(y); the penalty interpolates
/// ỹ = t·E(y) + (1 − t)·z per row. Both losses keep their graphs, so callers
/// decide which side to step.
LatentLosses latent_adversarial_loss(const Critic& critic, const torch::Tensor& embedded,
                                     const torch::Tensor& prior_samples,
                                     const torch::Tensor& interp_coeffs, double lambda_e = 10.0);

/// Convenience overload: embeds `labels`, reparameterizes with `noise`, and
/// scores with the latent critic.
LatentLosses latent_adversarial_loss(IdentityEmbedding& embedding, LatentCritic& critic,
                                     const torch::Tensor& labels, const torch::Tensor& noise,
                                     const torch::Tensor& prior_samples,
                                     const torch::Tensor& interp_coeffs, double lambda_e = 10.0);

}  // namespace idgan
