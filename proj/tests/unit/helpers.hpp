#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "idgan/networks.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("idgan_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

inline idgan::NetworkOptions tiny_options(int64_t max_stage = 1, int64_t channels = 8) {
  idgan::NetworkOptions o;
  o.max_stage = max_stage;
  o.channels_base = channels;
  o.channels_min = channels;
  return o;
}

inline idgan::GanModel tiny_model(int64_t K = 3, int64_t stage = 1, int64_t max_stage = 1,
                                  uint64_t seed = 0) {
  torch::manual_seed(seed);
  auto m = idgan::GanModel::create(tiny_options(max_stage), K, stage);
  m.eval();
  return m;
}

/// Seeded generator for hand-rolled property tests.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(uint64_t seed) : rng(seed) {}
  int64_t integer(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
};

}  // namespace testing
