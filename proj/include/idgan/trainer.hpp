#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "idgan/checkpoint.hpp"
#include "idgan/data.hpp"
#include "idgan/losses.hpp"
#include "idgan/networks.hpp"

namespace idgan {

struct TrainConfig {
  NetworkOptions network;
  /// Images shown during each fade-in and during each stabilization period.
  int64_t images_per_phase = 20000;
  /// Batch size per stage; the last entry applies to all later stages.
  std::vector<int64_t> batch_sizes{32};
  double learning_rate = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  LossWeights weights;
  std::uint64_t seed = 0;
  /// Save a checkpoint every N steps (0: only the final one).
  int64_t checkpoint_every = 0;
  /// Directory for metrics.csv and checkpoints; empty keeps everything in memory.
  std::filesystem::path output_dir;
  /// Single-threaded kernels for bit-reproducible runs.
  bool deterministic = true;
  /// Abort after this many consecutive steps with a non-finite loss.
  int64_t max_nonfinite_steps = 50;
  /// Fresh Adam state for G and D whenever the networks grow.
  bool reset_optimizer_on_growth = true;
  /// Stop early after this many steps (0: run the full schedule).
  int64_t max_steps = 0;

  int64_t batch_size_at(int64_t stage) const;
  /// Throws ConfigError on invalid settings.
  void validate() const;
};

struct StageState {
  int64_t stage = 0;
  double alpha = 1.0;

  friend bool operator==(const StageState&, const StageState&) = default;
};

/// Progressive schedule. Stage 0 only stabilizes; every later stage first
/// fades in (alpha ramps linearly from 0) and then stabilizes at alpha = 1.
class StageSchedule {
 public:
  explicit StageSchedule(const TrainConfig& config);

  StageState at(int64_t step) const;
  int64_t total_steps() const { return total_steps_; }
  /// Steps in one fade-in or stabilization period at `stage`.
  int64_t half_phase_steps(int64_t stage) const;
  /// First step of `stage` (the start of its fade-in).
  int64_t stage_start(int64_t stage) const;

 private:
  int64_t max_stage_;
  std::vector<int64_t> half_steps_;
  std::vector<int64_t> starts_;
  int64_t total_steps_ = 0;
};

StageState stage_schedule(int64_t step, const TrainConfig& config);

/// Random inputs of one training step.
struct StepInputs {
  torch::Tensor real;    // B×C×H×W, already faded to the current alpha
  torch::Tensor labels;  // B
  torch::Tensor z_nid;   // B×64
  torch::Tensor noise;   // B×64, reparameterization noise for E(y)
  torch::Tensor prior;   // B×64, N(0, I) samples for the latent critic
  torch::Tensor t_img;   // B, image-space penalty coefficients
  torch::Tensor t_lat;   // B, latent-space penalty coefficients
};

struct Objective {
  torch::Tensor l_img, l_c, l_e, l_mi, total;
};

/// Discriminator-side total for D and D_zid; generated images carry no graph.
Objective discriminator_objective(GanModel& model, const StepInputs& inputs,
                                  const LossWeights& weights);

/// Generator-side total for G and E (uses labels, z_nid and noise only).
Objective generator_objective(GanModel& model, const StepInputs& inputs,
                              const LossWeights& weights);

/// One row of metrics.csv. Components are discriminator-side values.
struct MetricsRow {
  int64_t step = 0;
  int64_t stage = 0;
  double alpha = 1.0;
  double l_img = 0;
  double l_c = 0;
  double l_e = 0;
  double l_mi = 0;
  double total_d = 0;
  double total_g = 0;
};

inline constexpr const char* kMetricsHeader = "step,stage,alpha,l_img,l_c,l_e,l_mi,total_D,total_G";

void write_metrics_row(std::ostream& out, const MetricsRow& row);

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_step;
  /// Called with the model after the last step of every stage.
  std::function<void(GanModel&, int64_t stage)> on_stage_end;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

/// Runs the progressive schedule. Each step first updates D and D_zid on the
/// discriminator-side loss, then G and E on the generator-side loss.
///
/// Throws NumericalError after max_nonfinite_steps consecutive non-finite
/// steps and Error on allocation failure. When `resume` is given, training
/// continues from that checkpoint's step with its optimizer and sampler state.
TrainResult train(const LabeledImageDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks = {}, std::optional<Checkpoint> resume = std::nullopt);

}  // namespace idgan
