#include "idgan/augmentation.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "idgan/errors.hpp"
#include "idgan/image_io.hpp"
#include "idgan/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace idgan {

namespace {

constexpr std::uint64_t kIdentityStream = 0x1d1d1d1dULL;
constexpr std::uint64_t kNuisanceStream = 0x2e2e2e2eULL;
constexpr int64_t kGenerationChunk = 128;

torch::Tensor nuisance_for(std::uint64_t image_seed) {
  auto gen = make_generator(image_seed);
  return torch::randn({1, kLatentDim}, gen);
}

void check_model(const LabeledImageDataset& dataset, GanModel& model) {
  if (model.generator->resolution() != dataset.resolution()) {
    throw ShapeError("generator resolution " + std::to_string(model.generator->resolution()) +
                     " differs from dataset resolution " + std::to_string(dataset.resolution()));
  }
}

// Renders `count` images sharing z_id, one z_nid per image seed.
void render_subject(GanModel& model, const torch::Tensor& z_id,
                    const std::vector<std::uint64_t>& seeds, int64_t label,
                    const std::string& mode, const std::string& dir_name,
                    std::vector<torch::Tensor>& images, std::vector<int64_t>& labels,
                    std::vector<ManifestEntry>& provenance) {
  std::vector<torch::Tensor> nids;
  for (auto s : seeds) nids.push_back(nuisance_for(s));
  for (size_t start = 0; start < nids.size(); start += kGenerationChunk) {
    const size_t end = std::min(nids.size(), start + kGenerationChunk);
    auto batch = torch::cat(std::vector<torch::Tensor>(nids.begin() + start, nids.begin() + end));
    images.push_back(generate_new(model, z_id, batch).to(torch::kFloat32).clamp(-1.0, 1.0));
  }
  for (size_t i = 0; i < seeds.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s/%05zu.png", dir_name.c_str(), i);
    ManifestEntry e;
    e.path = name;
    e.mode = mode;
    e.label = label;
    e.seed = seeds[i];
    e.latent_hash = latent_hash(z_id, nids[i]);
    provenance.push_back(std::move(e));
    labels.push_back(label);
  }
}

SyntheticPartition assemble(std::vector<torch::Tensor>& images, std::vector<int64_t>& labels,
                            std::vector<ManifestEntry>& provenance, const LabeledImageDataset& real) {
  SyntheticPartition p;
  if (images.empty()) {
    p.images = torch::empty({0, real.channels(), real.resolution(), real.resolution()});
    p.labels = torch::empty({0}, torch::kInt64);
  } else {
    p.images = torch::cat(images, 0);
    p.labels = torch::tensor(labels, torch::kInt64);
  }
  p.provenance = std::move(provenance);
  return p;
}

}  // namespace

std::string to_string(AugmentationKind kind) {
  return kind == AugmentationKind::Depth ? "depth" : "width";
}

AugmentationKind augmentation_kind_from(const std::string& name) {
  if (name == "depth") return AugmentationKind::Depth;
  if (name == "width") return AugmentationKind::Width;
  throw ConfigError("unknown augmentation kind '" + name + "' (expected depth or width)");
}

AugmentationPlan AugmentationPlan::depth(int64_t per_subject, std::uint64_t seed) {
  return {AugmentationKind::Depth, per_subject, 0, seed};
}

AugmentationPlan AugmentationPlan::width(int64_t num_new, int64_t per_subject,
                                         std::uint64_t seed) {
  return {AugmentationKind::Width, per_subject, num_new, seed};
}

void AugmentationPlan::validate() const {
  if (synthetic_per_subject < 0) throw ConfigError("synthetic_per_subject must be >= 0");
  if (num_new_subjects < 0) throw ConfigError("num_new_subjects must be >= 0");
  if (kind == AugmentationKind::Depth && num_new_subjects != 0) {
    throw ConfigError("depth plans do not add subjects");
  }
}

LabeledImageDataset AugmentedDataset::combined() const {
  if (synthetic.size() == 0) {
    return LabeledImageDataset::from_tensors(real.images(), real.labels(), num_labels,
                                             label_names);
  }
  return LabeledImageDataset::from_tensors(torch::cat({real.images(), synthetic.images}),
                                           torch::cat({real.labels(), synthetic.labels}),
                                           num_labels, label_names);
}

AugmentedDataset augment_depth(const LabeledImageDataset& dataset, GanModel& model, int64_t m,
                               std::uint64_t seed) {
  if (m < 0) throw ConfigError("images per subject must be >= 0");
  if (model.num_identities != dataset.num_subjects()) {
    throw ConfigError("checkpoint label space (K=" + std::to_string(model.num_identities) +
                      ") differs from dataset (K=" + std::to_string(dataset.num_subjects()) + ")");
  }
  check_model(dataset, model);
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  std::vector<ManifestEntry> provenance;
  if (m > 0) {
    for (int64_t y = 0; y < dataset.num_subjects(); ++y) {
      std::vector<std::uint64_t> seeds;
      for (int64_t i = 0; i < m; ++i) {
        seeds.push_back(derive_seed(derive_seed(seed, kNuisanceStream),
                                    static_cast<std::uint64_t>(y * m + i)));
      }
      render_subject(model, subject_embedding(model, y), seeds, y, "depth",
                     dataset.subject_names()[y], images, labels, provenance);
    }
  }
  AugmentedDataset out;
  out.real = dataset;
  out.kind = AugmentationKind::Depth;
  out.num_labels = dataset.num_subjects();
  out.label_names = dataset.subject_names();
  out.synthetic = assemble(images, labels, provenance, dataset);
  return out;
}

AugmentedDataset augment_width(const LabeledImageDataset& dataset, GanModel& model,
                               int64_t num_new, int64_t per_subject, std::uint64_t seed) {
  if (num_new < 0) throw ConfigError("num_new must be >= 0");
  if (per_subject < 0) throw ConfigError("per_subject must be >= 0");
  if (num_new > 0 && per_subject == 0) {
    throw ConfigError("width augmentation needs at least one image per new subject");
  }
  check_model(dataset, model);
  const int64_t k = dataset.num_subjects();
  AugmentedDataset out;
  out.real = dataset;
  out.kind = AugmentationKind::Width;
  out.num_labels = k + num_new;
  out.label_names = dataset.subject_names();

  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  std::vector<ManifestEntry> provenance;
  for (int64_t j = 0; j < num_new; ++j) {
    char name[32];
    std::snprintf(name, sizeof(name), "synthetic_%04lld", static_cast<long long>(j));
    out.label_names.emplace_back(name);
    auto z_id = sample_prior(1, derive_seed(derive_seed(seed, kIdentityStream),
                                            static_cast<std::uint64_t>(j)));
    std::vector<std::uint64_t> seeds;
    for (int64_t i = 0; i < per_subject; ++i) {
      seeds.push_back(derive_seed(derive_seed(seed, kNuisanceStream),
                                  static_cast<std::uint64_t>(j * per_subject + i)));
    }
    render_subject(model, z_id, seeds, k + j, "width", name, images, labels, provenance);
  }
  out.synthetic = assemble(images, labels, provenance, dataset);
  return out;
}

AugmentedDataset augment(const LabeledImageDataset& dataset, GanModel& model,
                         const AugmentationPlan& plan) {
  plan.validate();
  if (plan.kind == AugmentationKind::Depth) {
    return augment_depth(dataset, model, plan.synthetic_per_subject, plan.seed);
  }
  return augment_width(dataset, model, plan.num_new_subjects, plan.synthetic_per_subject,
                       plan.seed);
}

void save_synthetic_partition(const AugmentedDataset& aug, const fs::path& root) {
  fs::create_directories(root);
  for (int64_t i = 0; i < aug.synthetic.size(); ++i) {
    write_png(aug.synthetic.images[i], root / aug.synthetic.provenance[i].path);
  }
  write_manifest(aug.synthetic.provenance, root / "manifest.jsonl");
  json plan{{"kind", to_string(aug.kind)},
            {"num_real_subjects", aug.real.num_subjects()},
            {"num_labels", aug.num_labels},
            {"label_names", aug.label_names},
            {"num_synthetic", aug.synthetic.size()}};
  std::ofstream out(root / "plan.json", std::ios::trunc);
  out << plan.dump(2) << "\n";
}

AugmentedDataset load_augmented(const LabeledImageDataset& real, const fs::path& root) {
  std::ifstream in(root / "plan.json");
  if (!in) throw DatasetError("missing plan.json in " + root.string());
  json plan;
  try {
    in >> plan;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed plan.json: ") + e.what());
  }
  AugmentedDataset out;
  out.real = real;
  out.kind = augmentation_kind_from(plan.at("kind").get<std::string>());
  out.num_labels = plan.at("num_labels").get<int64_t>();
  out.label_names = plan.at("label_names").get<std::vector<std::string>>();
  if (plan.at("num_real_subjects").get<int64_t>() != real.num_subjects()) {
    throw DatasetError("synthetic partition was generated for a different real dataset");
  }

  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  std::vector<ManifestEntry> provenance = read_manifest(root / "manifest.jsonl");
  for (const auto& e : provenance) {
    const bool valid = out.kind == AugmentationKind::Depth
                           ? (e.label >= 0 && e.label < real.num_subjects())
                           : (e.label >= real.num_subjects() && e.label < out.num_labels);
    if (!valid) throw DatasetError("manifest label " + std::to_string(e.label) + " out of range");
    auto image = read_image(root / e.path, real.resolution());
    if (!image) throw DatasetError("cannot decode synthetic image " + e.path);
    images.push_back(image->unsqueeze(0));
    labels.push_back(e.label);
  }
  out.synthetic = assemble(images, labels, provenance, real);
  return out;
}

// ----------------------------------------------------------------------------

BalancedBatchSampler::BalancedBatchSampler(torch::Tensor real_images, torch::Tensor real_labels,
                                           torch::Tensor synthetic_images,
                                           torch::Tensor synthetic_labels, int64_t batch_size,
                                           std::uint64_t seed)
    : real_images_(std::move(real_images)),
      real_labels_(std::move(real_labels)),
      synthetic_images_(std::move(synthetic_images)),
      synthetic_labels_(std::move(synthetic_labels)),
      batch_size_(batch_size),
      gen_(make_generator(seed)) {
  if (batch_size_ < 2) throw ConfigError("balanced batches need batch_size >= 2");
  real_.size = real_labels_.defined() ? real_labels_.size(0) : 0;
  synthetic_.size = synthetic_labels_.defined() ? synthetic_labels_.size(0) : 0;
  if (real_.size == 0 && synthetic_.size == 0) throw DatasetError("both partitions are empty");
  if (real_.size == 0 || synthetic_.size == 0) {
    std::cerr << "warning: " << (real_.size == 0 ? "real" : "synthetic")
              << " partition is empty; falling back to uniform sampling\n";
    fallback_ = true;
  }
}

BalancedBatchSampler::BalancedBatchSampler(const AugmentedDataset& aug, int64_t batch_size,
                                           std::uint64_t seed)
    : BalancedBatchSampler(aug.real.images(), aug.real.labels(), aug.synthetic.images,
                           aug.synthetic.labels, batch_size, seed) {}

std::vector<int64_t> BalancedBatchSampler::draw(Cursor& c, int64_t count) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(count));
  while (static_cast<int64_t>(out.size()) < count) {
    if (c.position >= c.order.size()) {
      auto perm = torch::randperm(c.size, gen_, torch::kInt64);
      c.order.assign(perm.data_ptr<int64_t>(), perm.data_ptr<int64_t>() + c.size);
      c.position = 0;
    }
    out.push_back(c.order[c.position++]);
  }
  return out;
}

Batch BalancedBatchSampler::next() {
  int64_t n_real = (batch_size_ + 1) / 2;
  int64_t n_synth = batch_size_ / 2;
  if (fallback_) {
    n_real = real_.size > 0 ? batch_size_ : 0;
    n_synth = batch_size_ - n_real;
  }
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> labels;
  if (n_real > 0) {
    auto idx = draw(real_, n_real);
    real_history_.insert(real_history_.end(), idx.begin(), idx.end());
    auto t = torch::tensor(idx, torch::kInt64);
    images.push_back(real_images_.index_select(0, t));
    labels.push_back(real_labels_.index_select(0, t));
  }
  if (n_synth > 0) {
    auto t = torch::tensor(draw(synthetic_, n_synth), torch::kInt64);
    images.push_back(synthetic_images_.index_select(0, t));
    labels.push_back(synthetic_labels_.index_select(0, t));
  }
  return {torch::cat(images), torch::cat(labels), n_real, n_synth};
}

BalancedBatchSampler balanced_batches(const AugmentedDataset& augmented, int64_t batch_size,
                                      std::uint64_t seed) {
  return BalancedBatchSampler(augmented, batch_size, seed);
}

}  // namespace idgan
