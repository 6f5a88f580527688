#pragma once

#include <torch/torch.h>

#include <functional>

namespace idgan {

/// Any scalar-per-row critic: maps a batch to a batch of scores.
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Two-sided Wasserstein gradient penalty
///
///   weight · mean_i (‖∇ critic(x̃_i)‖₂ − 1)²,   x̃_i = t_i·a_i + (1 − t_i)·b_i
///
/// `a` and `b` are detached before interpolation; the returned scalar carries
/// a graph into the critic's parameters (double backprop). `t` holds one
/// coefficient per row. Throws NumericalError if the input gradient is not
/// finite.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& a,
                               const torch::Tensor& b, const torch::Tensor& t, double weight);

}  // namespace idgan
