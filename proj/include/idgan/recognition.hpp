#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "idgan/augmentation.hpp"
#include "idgan/data.hpp"

namespace idgan {

struct RecognizerOptions {
  int64_t input_resolution = 32;
  int64_t base_width = 32;
  int64_t num_blocks = 3;
  int64_t feature_dim = 128;
};

/// Residual classifier: stem convolution, num_blocks residual blocks (the
/// first keeps resolution, later ones halve it and double the width), global
/// pooling, a feature layer, and a softmax classifier over the identities.
class RecognitionNetImpl : public torch::nn::Module {
 public:
  RecognitionNetImpl(const RecognizerOptions& options, int64_t num_classes);

  torch::Tensor forward(const torch::Tensor& images);   // logits
  torch::Tensor features(const torch::Tensor& images);  // penultimate, unnormalized

  int64_t num_classes() const { return num_classes_; }

 private:
  RecognizerOptions options_;
  int64_t num_classes_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Linear embed_{nullptr};
  torch::nn::BatchNorm1d embed_bn_{nullptr};
  torch::nn::Linear classifier_{nullptr};
};
TORCH_MODULE(RecognitionNet);

struct RecognizerConfig {
  RecognizerOptions network;
  int64_t epochs = 10;
  int64_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epochs without validation improvement before the learning rate drops 10×.
  int64_t patience = 3;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
};

struct EpochLog {
  int64_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double validation_accuracy = 0;
  double learning_rate = 0;
};

struct BatchComposition {
  int64_t num_real = 0;
  int64_t num_synthetic = 0;
};

struct RecognitionModel {
  RecognitionNet net{nullptr};
  RecognizerOptions options;
  std::vector<std::string> subject_names;
  std::vector<EpochLog> history;
  std::vector<BatchComposition> batches;
};

/// Trains on real images only. Throws ConfigError for single-identity datasets.
RecognitionModel train_recognizer(const LabeledImageDataset& dataset,
                                  const RecognizerConfig& config);

/// Trains on an augmented dataset with balanced real/synthetic batches. The
/// validation split is drawn from the real partition only.
RecognitionModel train_recognizer(const AugmentedDataset& augmented,
                                  const RecognizerConfig& config);

/// L2-normalized penultimate activations (evaluation mode).
torch::Tensor extract_features(RecognitionModel& model, const torch::Tensor& images);

/// Top-1 predictions (evaluation mode).
torch::Tensor predict(RecognitionModel& model, const torch::Tensor& images);

/// Fraction of images whose top-1 prediction equals the label.
double classification_accuracy(RecognitionModel& model, const torch::Tensor& images,
                               const torch::Tensor& labels);

void save_recognizer(const RecognitionModel& model, const std::filesystem::path& dir);
RecognitionModel load_recognizer(const std::filesystem::path& dir);

struct TarAtFar {
  double tar = 0;
  double threshold = 0;
};

/// Threshold is the smallest observed score s with fraction(impostor > s) ≤
/// far_target; tar is fraction(genuine > threshold). Throws ConfigError on
/// empty inputs or far_target outside (0, 1).
TarAtFar tar_at_far(std::span<const double> genuine, std::span<const double> impostor,
                    double far_target);

struct VerificationPair {
  std::filesystem::path a;
  std::filesystem::path b;
  bool genuine = false;
};

struct VerificationProtocol {
  std::vector<VerificationPair> pairs;
  double far_target = 0.01;
};

/// Parses `path_a path_b {genuine|impostor}` lines; `#` starts a comment and
/// relative paths resolve against the protocol file's directory. Throws
/// ConfigError naming the line number of the first malformed line.
VerificationProtocol read_protocol(const std::filesystem::path& path);
void write_protocol(const VerificationProtocol& protocol, const std::filesystem::path& path);

/// Random genuine and impostor pairs from a `root/<subject>/<image>` folder.
VerificationProtocol make_protocol(const std::filesystem::path& root, int64_t num_genuine,
                                   int64_t num_impostor, std::uint64_t seed);

struct VerificationReport {
  double tar = 0;
  double threshold = 0;
  double far_target = 0.01;
  int64_t genuine_pairs = 0;
  int64_t impostor_pairs = 0;
  std::vector<double> bin_edges;
  std::vector<int64_t> genuine_histogram;
  std::vector<int64_t> impostor_histogram;

  std::string to_json() const;
};

/// Cosine scores for every pair, TAR at the protocol's FAR and score
/// histograms. Throws ConfigError when the protocol shares subjects with the
/// model's training identities or lacks genuine or impostor pairs.
VerificationReport evaluate_verification(RecognitionModel& model,
                                         const VerificationProtocol& protocol);

}  // namespace idgan
