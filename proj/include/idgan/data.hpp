#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace idgan {

/// Side length of the images at a progressive stage: 4·2^stage.
constexpr int64_t stage_resolution(int64_t stage) { return int64_t{4} << stage; }

/// Images with integer identity labels.
///
/// Images are stored as one N×C×H×W float tensor with values in [-1, 1];
/// labels are an N-element int64 tensor with values in [0, K). Every subject
/// owns at least one image. Instances are immutable once constructed.
class LabeledImageDataset {
 public:
  LabeledImageDataset() = default;

  /// Validates the invariants and builds the subject index. Throws
  /// DatasetError on empty subjects, out-of-range labels or pixel values.
  static LabeledImageDataset from_tensors(torch::Tensor images, torch::Tensor labels,
                                          int64_t num_subjects,
                                          std::vector<std::string> subject_names = {});

  const torch::Tensor& images() const { return images_; }
  const torch::Tensor& labels() const { return labels_; }
  int64_t num_subjects() const { return num_subjects_; }
  int64_t size() const { return images_.defined() ? images_.size(0) : 0; }
  int64_t channels() const { return images_.size(1); }
  int64_t resolution() const { return images_.size(2); }
  const std::vector<std::string>& subject_names() const { return subject_names_; }
  const std::vector<int64_t>& images_of(int64_t subject) const { return index_.at(subject); }

  /// Dataset restricted to the given image indices; K and names are kept.
  /// Subjects left without images are allowed only when allow_empty is set.
  LabeledImageDataset select(const std::vector<int64_t>& indices, bool allow_empty = false) const;

 private:
  torch::Tensor images_;
  torch::Tensor labels_;
  int64_t num_subjects_ = 0;
  std::vector<std::string> subject_names_;
  std::vector<std::vector<int64_t>> index_;
};

enum class SpriteShape : int { Circle, Square, Triangle, Cross, Ring, Bar };

inline constexpr int kNumSpriteShapes = 6;
inline constexpr int kNumSpriteColors = 8;

struct SpriteIdentity {
  SpriteShape shape = SpriteShape::Circle;
  int color_index = 0;
  std::array<float, 3> color{};  // RGB in [-1, 1]

  friend bool operator==(const SpriteIdentity&, const SpriteIdentity&) = default;
};

struct SpriteNuisance {
  float dx = 0;          // translation, pixels
  float dy = 0;
  float angle = 0;       // rotation, radians
  float background = 0;  // gray level in [-1, 1]
};

/// Ground-truth factors behind a sprite dataset.
struct SpriteFactors {
  std::vector<SpriteIdentity> identity;  // per subject
  std::vector<SpriteNuisance> nuisance;  // per image
};

struct SpriteOptions {
  int64_t num_subjects = 20;
  int64_t images_per_subject = 50;
  int64_t resolution = 32;
  std::uint64_t seed = 0;
  /// Subjects are taken from a fixed enumeration of (shape, color) pairs
  /// starting at this position, so two datasets with disjoint offsets hold
  /// disjoint identities.
  int64_t identity_offset = 0;
};

/// Loads `root/<subject>/<image>.{png,jpg,jpeg}`. Labels follow the sorted
/// subject directory names. Undecodable files are skipped with a warning.
LabeledImageDataset load_image_folder(const std::filesystem::path& root, int64_t resolution);

/// Writes the dataset in the folder layout load_image_folder reads.
void save_image_folder(const LabeledImageDataset& dataset, const std::filesystem::path& root);

/// Procedural dataset where identity is a (shape, color) pair and nuisance is
/// translation, rotation and background shade. Deterministic given the seed.
std::pair<LabeledImageDataset, SpriteFactors> make_sprite_dataset(const SpriteOptions& options);

std::pair<LabeledImageDataset, SpriteFactors> make_sprite_dataset(int64_t num_subjects,
                                                                  int64_t images_per_subject,
                                                                  int64_t resolution,
                                                                  std::uint64_t seed);

/// Identity assigned to the subject at `position` of the fixed enumeration.
SpriteIdentity sprite_identity_at(int64_t position);

/// Average-pools images to 4·2^stage per side. Labels are unchanged.
LabeledImageDataset downscale_to_stage(const LabeledImageDataset& dataset, int64_t stage);

/// Tensor-level pooling used by downscale_to_stage and the trainer.
torch::Tensor downscale_images(const torch::Tensor& images, int64_t target_resolution);

}  // namespace idgan
