#include "idgan/losses.hpp"

#include <cmath>

#include "idgan/errors.hpp"

namespace idgan {

void LossWeights::validate() const {
  const std::pair<const char*, double> entries[] = {
      {"lambda_gp", lambda_gp}, {"lambda_e", lambda_e}, {"alpha", alpha},
      {"beta", beta},           {"gamma", gamma},       {"drift", drift}};
  for (const auto& [name, value] : entries) {
    if (!std::isfinite(value) || value < 0) {
      throw ConfigError(std::string("loss weight '") + name + "' must be finite and >= 0");
    }
  }
}

std::string to_string(LossSide side) {
  return side == LossSide::Discriminator ? "discriminator" : "generator";
}

ImageAdversarialLosses image_adversarial_loss(const Critic& critic, const torch::Tensor& real,
                                              const torch::Tensor& fake,
                                              const torch::Tensor& interp_coeffs,
                                              double lambda_gp) {
  if (real.sizes() != fake.sizes()) {
    throw ShapeError("image_adversarial_loss: real and fake batches differ in shape");
  }
  auto real_scores = critic(real);
  auto fake_scores = critic(fake);
  ImageAdversarialLosses out;
  out.penalty = gradient_penalty(critic, fake, real, interp_coeffs, lambda_gp);
  out.critic = fake_scores.mean() - real_scores.mean() + out.penalty;
  out.generator = -fake_scores.mean();
  return out;
}

torch::Tensor identity_classification_loss(const torch::Tensor& logits,
                                           const torch::Tensor& labels) {
  if (logits.dim() != 2 || labels.dim() != 1 || logits.size(0) != labels.size(0)) {
    throw ShapeError("identity_classification_loss: expected batch×K logits and batch labels");
  }
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= logits.size(1)) {
      throw IndexError("identity label outside [0, " + std::to_string(logits.size(1)) + ")");
    }
  }
  return torch::nn::functional::cross_entropy(logits, labels);
}

torch::Tensor mutual_information_loss(const torch::Tensor& prediction, const torch::Tensor& c) {
  if (prediction.sizes() != c.sizes() || prediction.dim() != 2) {
    throw ShapeError("mutual_information_loss: prediction and code must both be batch×dim");
  }
  return (c - prediction).pow(2).sum(1).mean();
}

double total_loss(const LossReport& components, const LossWeights& weights, LossSide side) {
  const double sign = side == LossSide::Discriminator ? 1.0 : -1.0;
  return sign * components.l_img + weights.alpha * components.l_c +
         sign * weights.beta * components.l_e + weights.gamma * components.l_mi;
}

torch::Tensor total_loss(const torch::Tensor& l_img, const torch::Tensor& l_c,
                         const torch::Tensor& l_e, const torch::Tensor& l_mi,
                         const LossWeights& weights, LossSide side) {
  const double sign = side == LossSide::Discriminator ? 1.0 : -1.0;
  return sign * l_img + weights.alpha * l_c + sign * weights.beta * l_e + weights.gamma * l_mi;
}

}  // namespace idgan
