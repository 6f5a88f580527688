#pragma once

#include <torch/torch.h>

#include <string>

#include "idgan/penalty.hpp"

namespace idgan {

struct LossWeights {
  double lambda_gp = 10.0;  // image-space gradient penalty
  double lambda_e = 10.0;   // latent-space gradient penalty
  double alpha = 1.0;       // identity classification
  double beta = 1.0;        // latent adversarial
  double gamma = 50.0;      // mutual information
  /// Critic score drift penalty (ε·mean D(x_real)²); folded into l_img on the
  /// discriminator side. Zero disables it.
  double drift = 1e-3;

  /// Throws ConfigError if any weight is negative or non-finite.
  void validate() const;
};

enum class LossSide { Discriminator, Generator };

std::string to_string(LossSide side);

/// Loss components in discriminator-side convention.
///
/// On the generator side l_img and l_e hold the generator-dependent score
/// terms (mean D(G(z)) and mean D_zid(E(y))); total_loss flips their sign.
struct LossReport {
  double l_img = 0;
  double l_c = 0;
  double l_e = 0;
  double l_mi = 0;
  double total = 0;
  LossSide side = LossSide::Discriminator;
};

struct ImageAdversarialLosses {
  torch::Tensor critic;     // mean D(fake) − mean D(real) + penalty
  torch::Tensor generator;  // −mean D(fake)
  torch::Tensor penalty;    // λ · mean (‖∇D(x̃)‖ − 1)²
};

/// Image-space WGAN-GP with x̃ = t·fake + (1 − t)·real per row. `critic` is
/// the adversarial head only. Throws ShapeError on mismatched batches and
/// NumericalError on non-finite penalty gradients.
ImageAdversarialLosses image_adversarial_loss(const Critic& critic, const torch::Tensor& real,
                                              const torch::Tensor& fake,
                                              const torch::Tensor& interp_coeffs,
                                              double lambda_gp = 10.0);

/// Mean negative log-softmax of the true class. Throws IndexError when a
/// label is outside [0, K).
torch::Tensor identity_classification_loss(const torch::Tensor& logits,
                                           const torch::Tensor& labels);

/// Mean over the batch of ‖c − prediction‖₂². Throws ShapeError when shapes differ.
torch::Tensor mutual_information_loss(const torch::Tensor& prediction, const torch::Tensor& c);

/// Discriminator side: l_img + α·l_c + β·l_e + γ·l_mi.
/// Generator side:     −l_img + α·l_c − β·l_e + γ·l_mi.
double total_loss(const LossReport& components, const LossWeights& weights, LossSide side);

torch::Tensor total_loss(const torch::Tensor& l_img, const torch::Tensor& l_c,
                         const torch::Tensor& l_e, const torch::Tensor& l_mi,
                         const LossWeights& weights, LossSide side);

}  // namespace idgan
