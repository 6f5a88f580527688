#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "idgan/cli.hpp"
#include "idgan/networks.hpp"

namespace idgan::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Settings for the toy disentanglement run.
struct ToySettings {
  int64_t num_subjects = 20;
  int64_t images_per_subject = 50;
  int64_t resolution = 32;
  int64_t images_per_phase = 40000;
  int64_t batch_size = 16;
  int64_t channels_base = 64;
  int64_t channels_min = 16;
  double gamma = 0.1;
  std::uint64_t seed = 1;
};

struct DisentanglementReport {
  double classifier_test_accuracy = 0;
  double existing_accuracy = 0;       // classifier(generate_existing(y)) == y
  double preservation = 0;            // identity kept across z_nid resamples
  double max_abs_mean = 0;            // pooled E(y) statistics
  double min_variance = 0;
  double max_variance = 0;
};

/// Trains a sprite-identity classifier on fresh renders of the toy identities,
/// then scores the generator against it and measures the pooled embedding.
DisentanglementReport evaluate_disentanglement(GanModel& model, const ToySettings& settings,
                                               const std::filesystem::path& work_dir);

/// Runs the selected criteria (all when `config` has no `criteria` key),
/// printing one PASS/FAIL line each. Returns 0 when every criterion passes.
int run_suite(const cli::RunConfig& config, std::ostream& out);

}  // namespace idgan::acceptance
