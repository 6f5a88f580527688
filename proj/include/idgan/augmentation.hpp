#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idgan/data.hpp"
#include "idgan/networks.hpp"
#include "idgan/synthesis.hpp"

namespace idgan {

enum class AugmentationKind { Depth, Width };

std::string to_string(AugmentationKind kind);
AugmentationKind augmentation_kind_from(const std::string& name);

struct AugmentationPlan {
  AugmentationKind kind = AugmentationKind::Depth;
  /// Depth: images per real subject. Width: images per new subject.
  int64_t synthetic_per_subject = 500;
  /// Width only.
  int64_t num_new_subjects = 0;
  std::uint64_t seed = 0;

  static AugmentationPlan depth(int64_t per_subject, std::uint64_t seed = 0);
  static AugmentationPlan width(int64_t num_new, int64_t per_subject = 500,
                                std::uint64_t seed = 0);
  void validate() const;
};

/// Generated images with their labels and per-image provenance.
struct SyntheticPartition {
  torch::Tensor images;  // N×C×H×W, may be empty (N = 0)
  torch::Tensor labels;  // N
  std::vector<ManifestEntry> provenance;

  int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
};

/// Real images plus a synthetic partition. Depth keeps the real label space;
/// width appends new labels K..K+W−1.
struct AugmentedDataset {
  LabeledImageDataset real;
  SyntheticPartition synthetic;
  AugmentationKind kind = AugmentationKind::Depth;
  int64_t num_labels = 0;
  std::vector<std::string> label_names;

  /// Real and synthetic images merged into one dataset over num_labels subjects.
  LabeledImageDataset combined() const;
};

/// m synthetic images per real subject, identity fixed to mu(y). Throws
/// ConfigError when the model's label space differs from the dataset's, and
/// ShapeError when the generator resolution differs from the dataset's.
AugmentedDataset augment_depth(const LabeledImageDataset& dataset, GanModel& model, int64_t m,
                               std::uint64_t seed);

/// num_new identities drawn from the Gaussian prior, per_subject images each.
AugmentedDataset augment_width(const LabeledImageDataset& dataset, GanModel& model,
                               int64_t num_new, int64_t per_subject, std::uint64_t seed);

AugmentedDataset augment(const LabeledImageDataset& dataset, GanModel& model,
                         const AugmentationPlan& plan);

/// Writes the synthetic partition as `root/<label name>/<n>.png` plus
/// `manifest.jsonl` and `plan.json`. Paths in the manifest are relative to root.
void save_synthetic_partition(const AugmentedDataset& augmented, const std::filesystem::path& root);

/// Reads a partition written by save_synthetic_partition and pairs it with `real`.
AugmentedDataset load_augmented(const LabeledImageDataset& real,
                                const std::filesystem::path& synthetic_root);

struct Batch {
  torch::Tensor images;
  torch::Tensor labels;
  int64_t num_real = 0;
  int64_t num_synthetic = 0;
};

/// Endless stream of batches holding ⌈b/2⌉ real and ⌊b/2⌋ synthetic images.
///
/// Each partition is drawn without replacement from its own shuffled order,
/// reshuffled once exhausted. If one partition is empty the sampler warns and
/// draws every image uniformly from the other.
class BalancedBatchSampler {
 public:
  BalancedBatchSampler(torch::Tensor real_images, torch::Tensor real_labels,
                       torch::Tensor synthetic_images, torch::Tensor synthetic_labels,
                       int64_t batch_size, std::uint64_t seed);
  BalancedBatchSampler(const AugmentedDataset& augmented, int64_t batch_size, std::uint64_t seed);

  Batch next();

  /// Order in which real images were served so far (indices into the real partition).
  const std::vector<int64_t>& real_history() const { return real_history_; }

 private:
  struct Cursor {
    int64_t size = 0;
    std::vector<int64_t> order;
    size_t position = 0;
  };
  std::vector<int64_t> draw(Cursor& cursor, int64_t count);

  torch::Tensor real_images_, real_labels_, synthetic_images_, synthetic_labels_;
  int64_t batch_size_;
  torch::Generator gen_;
  Cursor real_, synthetic_;
  bool fallback_ = false;
  std::vector<int64_t> real_history_;
};

/// Shorthand for constructing a BalancedBatchSampler.
BalancedBatchSampler balanced_batches(const AugmentedDataset& augmented, int64_t batch_size,
                                      std::uint64_t seed);

}  // namespace idgan
