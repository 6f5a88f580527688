#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>

namespace idgan {

/// CPU generator with a fixed seed. Every stochastic draw in the library goes
/// through an explicit generator so results are reproducible from seeds.
torch::Generator make_generator(std::uint64_t seed);

/// SplitMix64 finalizer; derives independent sub-seeds from (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

/// FNV-1a of a tensor's contiguous CPU bytes, as 16 lowercase hex digits.
std::string tensor_hash(const torch::Tensor& tensor);

std::string to_hex(std::uint64_t value);

}  // namespace idgan
