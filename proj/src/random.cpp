#include "idgan/random.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstdio>

namespace idgan {

torch::Generator make_generator(std::uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string tensor_hash(const torch::Tensor& tensor) {
  auto flat = tensor.detach().to(torch::kCPU).contiguous();
  std::string_view bytes(static_cast<const char*>(flat.data_ptr()), flat.nbytes());
  return to_hex(fnv1a(bytes));
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace idgan
