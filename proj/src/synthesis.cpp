#include "idgan/synthesis.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

#include "idgan/errors.hpp"
#include "idgan/image_io.hpp"
#include "idgan/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace idgan {

namespace {

torch::Tensor as_row(const torch::Tensor& z, const char* what) {
  auto row = z.dim() == 1 ? z.unsqueeze(0) : z;
  if (row.dim() != 2 || row.size(0) != 1 || row.size(1) != kLatentDim) {
    throw ShapeError(std::string(what) + " must be a single 64-d vector");
  }
  return row;
}

void check_nid_batch(const torch::Tensor& z_nid) {
  if (z_nid.dim() != 2 || z_nid.size(1) != kLatentDim) {
    throw ShapeError("z_nid batch must be n×64");
  }
  if (z_nid.size(0) < 1) throw ConfigError("count must be >= 1");
}

torch::Tensor param_dtype_like(GanModel& model, const torch::Tensor& t) {
  return t.to(model.generator->parameters().front().scalar_type());
}

}  // namespace

torch::Tensor subject_embedding(GanModel& model, int64_t label,
                                const std::optional<torch::Tensor>& noise) {
  if (label < 0 || label >= model.num_identities) {
    throw IndexError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(model.num_identities) + ")");
  }
  torch::NoGradGuard no_grad;
  auto [mu, log_var] = model.embedding->forward(torch::tensor({label}, torch::kInt64));
  if (!noise) return mu;
  return reparameterize(mu, log_var, param_dtype_like(model, as_row(*noise, "noise")));
}

torch::Tensor generate_new(GanModel& model, const torch::Tensor& z_id,
                           const torch::Tensor& z_nid_batch) {
  check_nid_batch(z_nid_batch);
  auto id = as_row(z_id, "z_id");
  if (!torch::isfinite(id).all().item<bool>()) throw NumericalError("z_id must be finite");
  torch::NoGradGuard no_grad;
  const int64_t n = z_nid_batch.size(0);
  return model.generate(param_dtype_like(model, id).expand({n, kLatentDim}),
                        param_dtype_like(model, z_nid_batch));
}

torch::Tensor generate_existing(GanModel& model, int64_t label, const torch::Tensor& z_nid_batch,
                                const std::optional<torch::Tensor>& noise) {
  check_nid_batch(z_nid_batch);
  return generate_new(model, subject_embedding(model, label, noise), z_nid_batch);
}

torch::Tensor interpolate_grid(GanModel& model, const torch::Tensor& z_id_a,
                               const torch::Tensor& z_id_b, const torch::Tensor& z_nid_a,
                               const torch::Tensor& z_nid_b, int64_t steps) {
  if (steps < 2) throw ConfigError("interpolation needs steps >= 2");
  auto ia = as_row(z_id_a, "z_id_a");
  auto ib = as_row(z_id_b, "z_id_b");
  auto na = as_row(z_nid_a, "z_nid_a");
  auto nb = as_row(z_nid_b, "z_nid_b");
  std::vector<torch::Tensor> ids;
  std::vector<torch::Tensor> nids;
  for (int64_t i = 0; i < steps; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(steps - 1);
    for (int64_t j = 0; j < steps; ++j) {
      const double v = static_cast<double>(j) / static_cast<double>(steps - 1);
      ids.push_back((1.0 - u) * ia + u * ib);
      nids.push_back((1.0 - v) * na + v * nb);
    }
  }
  torch::NoGradGuard no_grad;
  // One forward pass per cell.
  std::vector<torch::Tensor> cells;
  for (size_t c = 0; c < ids.size(); ++c) {
    cells.push_back(
        model.generate(param_dtype_like(model, ids[c]), param_dtype_like(model, nids[c])));
  }
  return torch::cat(cells, 0);
}

NearestSubject nearest_training_subject(GanModel& model, const torch::Tensor& z_id_query,
                                        const torch::Tensor& z_nid_probes) {
  check_nid_batch(z_nid_probes);
  torch::NoGradGuard no_grad;
  auto query = generate_new(model, z_id_query, z_nid_probes);
  NearestSubject best;
  best.distance = std::numeric_limits<double>::infinity();
  for (int64_t y = 0; y < model.num_identities; ++y) {
    auto images = generate_new(model, subject_embedding(model, y), z_nid_probes);
    const double d = (query - images).pow(2).mean().item<double>();
    best.distances.push_back(d);
    if (d < best.distance) {
      best.distance = d;
      best.label = y;
    }
  }
  return best;
}

torch::Tensor tile_grid(const torch::Tensor& images, int64_t rows, int64_t cols) {
  if (images.dim() != 4) throw ShapeError("tile_grid expects N×C×H×W images");
  if (rows < 1 || cols < 1 || rows * cols != images.size(0)) {
    throw ConfigError("grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " does not match " + std::to_string(images.size(0)) + " images");
  }
  const int64_t c = images.size(1), h = images.size(2), w = images.size(3);
  return images.reshape({rows, cols, c, h, w})
      .permute({2, 0, 3, 1, 4})
      .reshape({c, rows * h, cols * w});
}

void render_grid(const torch::Tensor& images, int64_t rows, int64_t cols, const fs::path& path) {
  write_png(tile_grid(images, rows, cols), path);
}

std::string latent_hash(const torch::Tensor& z_id, const torch::Tensor& z_nid) {
  return tensor_hash(torch::cat({z_id.reshape({-1}).to(torch::kFloat32),
                                 z_nid.reshape({-1}).to(torch::kFloat32)}));
}

std::string to_json_line(const ManifestEntry& e) {
  json j{{"path", e.path},   {"label", e.label},           {"origin", e.origin},
         {"mode", e.mode},   {"seed", e.seed},             {"latent_hash", e.latent_hash}};
  return j.dump();
}

ManifestEntry manifest_entry_from_json(const std::string& line) {
  try {
    auto j = json::parse(line);
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    e.label = j.at("label").get<int64_t>();
    e.origin = j.value("origin", "synthetic");
    e.mode = j.value("mode", "");
    e.seed = j.value("seed", std::uint64_t{0});
    e.latent_hash = j.value("latent_hash", "");
    return e;
  } catch (const json::exception& ex) {
    throw DatasetError(std::string("malformed manifest line: ") + ex.what());
  }
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& e : entries) out << to_json_line(e) << "\n";
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    entries.push_back(manifest_entry_from_json(line));
  }
  return entries;
}

}  // namespace idgan
