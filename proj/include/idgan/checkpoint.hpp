#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idgan/networks.hpp"

namespace idgan {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Everything needed to reproduce a training run's state.
struct Checkpoint {
  GanModel model;
  int64_t step = 0;
  std::uint64_t seed = 0;
  /// Adam moments and step counters, "opt.<net>.<param>.{exp_avg,exp_avg_sq,step}".
  NamedTensors optimizer_state;
  /// Sampler generator state.
  torch::Tensor rng_state;
  /// Hash of the architecture-defining settings (K, network options).
  std::uint64_t config_hash = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Hash of the settings a checkpoint's parameter layout depends on.
std::uint64_t architecture_hash(const NetworkOptions& options, int64_t num_identities);

/// Binary format: magic, version, JSON header, raw tensor bytes, FNV-1a
/// checksum over header and payload. Writes atomically via a temp file.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws CheckpointError on truncation, checksum or version mismatch, and when
/// `expected_identities` is given but differs from the checkpoint's K.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<int64_t> expected_identities = std::nullopt);

}  // namespace idgan
