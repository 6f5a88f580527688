#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "idgan/networks.hpp"

namespace idgan {

/// Identity vector for an existing subject: mu(label), or a reparameterized
/// sample when `noise` (1×64) is given. Throws IndexError for labels outside [0, K).
torch::Tensor subject_embedding(GanModel& model, int64_t label,
                                const std::optional<torch::Tensor>& noise = std::nullopt);

/// Images of training subject `label`: G(z_id ‖ z_nid_i) with z_id = mu(label)
/// unless `noise` requests a sampled identity. Throws ConfigError for n = 0.
torch::Tensor generate_existing(GanModel& model, int64_t label, const torch::Tensor& z_nid_batch,
                                const std::optional<torch::Tensor>& noise = std::nullopt);

/// Images of a new subject with identity vector `z_id` (64 or 1×64) shared by
/// every row of `z_nid_batch`.
torch::Tensor generate_new(GanModel& model, const torch::Tensor& z_id,
                           const torch::Tensor& z_nid_batch);

/// steps×steps images in row-major order. Row i interpolates the identity
/// from a to b, column j the non-identity vector.
torch::Tensor interpolate_grid(GanModel& model, const torch::Tensor& z_id_a,
                               const torch::Tensor& z_id_b, const torch::Tensor& z_nid_a,
                               const torch::Tensor& z_nid_b, int64_t steps);

struct NearestSubject {
  int64_t label = -1;
  double distance = 0;
  std::vector<double> distances;  // per training label
};

/// Training subject whose mean embedding renders closest to the query identity,
/// averaging per-pixel MSE over images that share each probe z_nid.
NearestSubject nearest_training_subject(GanModel& model, const torch::Tensor& z_id_query,
                                        const torch::Tensor& z_nid_probes);

/// Row-major montage of N = rows·cols C×H×W images, as (C, rows·H, cols·W).
torch::Tensor tile_grid(const torch::Tensor& images, int64_t rows, int64_t cols);

/// Writes tile_grid(images, rows, cols) as one 8-bit PNG. Throws ConfigError
/// when rows·cols differs from the image count.
void render_grid(const torch::Tensor& images, int64_t rows, int64_t cols,
                 const std::filesystem::path& path);

/// Provenance of one generated image; serialized as one JSON line.
struct ManifestEntry {
  std::string path;
  std::string mode;  // existing | new | interpolate | depth | width
  int64_t label = -1;
  std::uint64_t seed = 0;
  std::string latent_hash;  // FNV-1a of z_id ‖ z_nid
  std::string origin = "synthetic";
};

std::string latent_hash(const torch::Tensor& z_id, const torch::Tensor& z_nid);

std::string to_json_line(const ManifestEntry& entry);
ManifestEntry manifest_entry_from_json(const std::string& line);

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace idgan
