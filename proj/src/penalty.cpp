#include "idgan/penalty.hpp"

#include "idgan/errors.hpp"

namespace idgan {

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& a,
                               const torch::Tensor& b, const torch::Tensor& t, double weight) {
  if (a.sizes() != b.sizes()) throw ShapeError("gradient_penalty: batches differ in shape");
  if (t.dim() != 1 || t.size(0) != a.size(0)) {
    throw ShapeError("gradient_penalty: one interpolation coefficient per row required");
  }
  std::vector<int64_t> bshape(a.dim(), 1);
  bshape[0] = a.size(0);
  auto coeff = t.to(a.dtype()).view(bshape);
  auto mixed = (coeff * a.detach() + (1 - coeff) * b.detach()).requires_grad_(true);
  auto scores = critic(mixed);
  auto grad = torch::autograd::grad({scores.sum()}, {mixed}, {}, /*retain_graph=*/true,
                                    /*create_graph=*/true)[0];
  if (!torch::isfinite(grad).all().item<bool>()) {
    throw NumericalError("non-finite gradient in gradient penalty");
  }
  auto norms = grad.flatten(1).norm(2, 1);
  return weight * (norms - 1).pow(2).mean();
}

}  // namespace idgan
