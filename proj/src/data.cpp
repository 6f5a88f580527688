#include "idgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <random>

#include "idgan/errors.hpp"
#include "idgan/image_io.hpp"

namespace fs = std::filesystem;

namespace idgan {

LabeledImageDataset LabeledImageDataset::from_tensors(torch::Tensor images, torch::Tensor labels,
                                                      int64_t num_subjects,
                                                      std::vector<std::string> subject_names) {
  if (!images.defined() || images.dim() != 4) {
    throw DatasetError("images must be an N×C×H×W tensor");
  }
  if (!labels.defined() || labels.dim() != 1 || labels.size(0) != images.size(0)) {
    throw DatasetError("labels must be a vector with one entry per image");
  }
  if (images.size(2) != images.size(3)) throw DatasetError("images must be square");
  if (num_subjects < 1) throw DatasetError("dataset needs at least one subject");
  if (images.size(0) == 0) throw DatasetError("dataset has no images");

  LabeledImageDataset d;
  d.images_ = images.to(torch::kFloat32).contiguous();
  d.labels_ = labels.to(torch::kInt64).contiguous();
  d.num_subjects_ = num_subjects;

  if (d.images_.min().item<float>() < -1.0f || d.images_.max().item<float>() > 1.0f) {
    throw DatasetError("pixel values outside [-1, 1]");
  }
  if (subject_names.empty()) {
    for (int64_t k = 0; k < num_subjects; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "s%03lld", static_cast<long long>(k));
      subject_names.emplace_back(buf);
    }
  }
  if (static_cast<int64_t>(subject_names.size()) != num_subjects) {
    throw DatasetError("subject name count does not match K");
  }
  d.subject_names_ = std::move(subject_names);

  d.index_.assign(num_subjects, {});
  const auto* lab = d.labels_.data_ptr<int64_t>();
  for (int64_t i = 0; i < d.labels_.size(0); ++i) {
    if (lab[i] < 0 || lab[i] >= num_subjects) {
      throw DatasetError("label " + std::to_string(lab[i]) + " outside [0, " +
                         std::to_string(num_subjects) + ")");
    }
    d.index_[lab[i]].push_back(i);
  }
  for (int64_t k = 0; k < num_subjects; ++k) {
    if (d.index_[k].empty()) {
      throw DatasetError("subject '" + d.subject_names_[k] + "' has no images");
    }
  }
  return d;
}

LabeledImageDataset LabeledImageDataset::select(const std::vector<int64_t>& indices,
                                                bool allow_empty) const {
  auto idx = torch::tensor(indices, torch::kInt64);
  LabeledImageDataset d;
  d.images_ = images_.index_select(0, idx).contiguous();
  d.labels_ = labels_.index_select(0, idx).contiguous();
  d.num_subjects_ = num_subjects_;
  d.subject_names_ = subject_names_;
  d.index_.assign(num_subjects_, {});
  const auto* lab = d.labels_.data_ptr<int64_t>();
  for (int64_t i = 0; i < d.labels_.size(0); ++i) d.index_[lab[i]].push_back(i);
  if (!allow_empty) {
    for (int64_t k = 0; k < num_subjects_; ++k) {
      if (d.index_[k].empty()) {
        throw DatasetError("subject '" + subject_names_[k] + "' has no images after selection");
      }
    }
  }
  return d;
}

LabeledImageDataset load_image_folder(const fs::path& root, int64_t resolution) {
  if (resolution < 1) throw ConfigError("resolution must be positive");
  if (!fs::is_directory(root)) {
    throw DatasetError("dataset root is not a directory: " + root.string());
  }
  std::vector<fs::path> subjects;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subjects.push_back(entry.path());
  }
  if (subjects.empty()) throw DatasetError("no subjects found in " + root.string());
  std::sort(subjects.begin(), subjects.end());

  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  std::vector<std::string> names;
  for (size_t label = 0; label < subjects.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(subjects[label])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    int64_t loaded = 0;
    for (const auto& file : files) {
      auto image = read_image(file, resolution);
      if (!image) {
        std::cerr << "warning: skipping undecodable image " << file.string() << "\n";
        continue;
      }
      images.push_back(*image);
      labels.push_back(static_cast<int64_t>(label));
      ++loaded;
    }
    if (loaded == 0) {
      throw DatasetError("subject '" + subjects[label].filename().string() +
                         "' has no decodable images");
    }
    names.push_back(subjects[label].filename().string());
  }
  const auto num_subjects = static_cast<int64_t>(names.size());
  return LabeledImageDataset::from_tensors(torch::stack(images), torch::tensor(labels), num_subjects,
                                           std::move(names));
}

void save_image_folder(const LabeledImageDataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  for (int64_t k = 0; k < dataset.num_subjects(); ++k) {
    const auto dir = root / dataset.subject_names()[k];
    fs::create_directories(dir);
    const auto& members = dataset.images_of(k);
    for (size_t j = 0; j < members.size(); ++j) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu.png", j);
      write_png(dataset.images()[members[j]], dir / name);
    }
  }
}

namespace {

constexpr std::array<std::array<float, 3>, kNumSpriteColors> kPalette{{
    {1.00f, 0.15f, 0.15f},  // red
    {0.15f, 0.90f, 0.20f},  // green
    {0.20f, 0.35f, 1.00f},  // blue
    {1.00f, 0.90f, 0.10f},  // yellow
    {0.95f, 0.20f, 0.90f},  // magenta
    {0.10f, 0.90f, 0.95f},  // cyan
    {1.00f, 0.55f, 0.05f},  // orange
    {0.95f, 0.95f, 0.95f},  // white
}};

// Shape membership in sprite-local coordinates scaled to the sprite radius.
bool inside(SpriteShape shape, float u, float v) {
  const float au = std::abs(u);
  const float av = std::abs(v);
  switch (shape) {
    case SpriteShape::Circle:
      return u * u + v * v <= 1.0f;
    case SpriteShape::Square:
      return au <= 0.78f && av <= 0.78f;
    case SpriteShape::Triangle:
      return v >= -0.5f && v <= 1.0f - std::sqrt(3.0f) * au;
    case SpriteShape::Cross:
      return (au <= 0.28f && av <= 0.95f) || (av <= 0.28f && au <= 0.95f);
    case SpriteShape::Ring: {
      const float r2 = u * u + v * v;
      return r2 <= 1.0f && r2 >= 0.36f;
    }
    case SpriteShape::Bar:
      return au <= 1.0f && av <= 0.38f;
  }
  return false;
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

SpriteIdentity sprite_identity_at(int64_t position) {
  const int64_t space = int64_t{kNumSpriteShapes} * kNumSpriteColors;
  const int64_t p = ((position % space) + space) % space;
  const int64_t shape = p % kNumSpriteShapes;
  const int64_t row = p / kNumSpriteShapes;
  SpriteIdentity id;
  id.shape = static_cast<SpriteShape>(shape);
  id.color_index = static_cast<int>((row + shape) % kNumSpriteColors);
  for (int c = 0; c < 3; ++c) id.color[c] = kPalette[id.color_index][c] * 2.0f - 1.0f;
  return id;
}

std::pair<LabeledImageDataset, SpriteFactors> make_sprite_dataset(const SpriteOptions& o) {
  if (o.num_subjects < 2) throw ConfigError("sprite dataset needs at least 2 subjects");
  if (o.images_per_subject < 1) throw ConfigError("images_per_subject must be >= 1");
  if (o.resolution < 4 || !is_power_of_two(o.resolution)) {
    throw ConfigError("sprite resolution must be a power of 2 >= 4, got " +
                      std::to_string(o.resolution));
  }
  if (o.identity_offset < 0) throw ConfigError("identity_offset must be >= 0");

  SpriteFactors factors;
  std::vector<std::string> names;
  for (int64_t k = 0; k < o.num_subjects; ++k) {
    factors.identity.push_back(sprite_identity_at(o.identity_offset + k));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%03lld", static_cast<long long>(o.identity_offset + k));
    names.emplace_back(buf);
  }

  const int64_t res = o.resolution;
  const int64_t n = o.num_subjects * o.images_per_subject;
  const float radius = 0.3f * static_cast<float>(res);
  const float max_shift = 0.15f * static_cast<float>(res);
  constexpr int kSuper = 4;

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> shift(-max_shift, max_shift);
  std::uniform_real_distribution<float> angle(0.0f, 2.0f * std::numbers::pi_v<float>);
  std::uniform_real_distribution<float> shade(-0.9f, -0.3f);

  std::vector<float> pixels(static_cast<size_t>(n * 3 * res * res));
  std::vector<int64_t> labels(static_cast<size_t>(n));
  factors.nuisance.resize(static_cast<size_t>(n));

  for (int64_t i = 0; i < n; ++i) {
    const int64_t subject = i / o.images_per_subject;
    labels[i] = subject;
    SpriteNuisance& nz = factors.nuisance[i];
    nz.dx = shift(rng);
    nz.dy = shift(rng);
    nz.angle = angle(rng);
    nz.background = shade(rng);
    const SpriteIdentity& id = factors.identity[subject];
    const float cx = 0.5f * static_cast<float>(res) + nz.dx;
    const float cy = 0.5f * static_cast<float>(res) + nz.dy;
    const float ca = std::cos(nz.angle);
    const float sa = std::sin(nz.angle);
    float* img = pixels.data() + i * 3 * res * res;
    for (int64_t y = 0; y < res; ++y) {
      for (int64_t x = 0; x < res; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const float px = static_cast<float>(x) + (static_cast<float>(sx) + 0.5f) / kSuper - cx;
            const float py = static_cast<float>(y) + (static_cast<float>(sy) + 0.5f) / kSuper - cy;
            const float u = (ca * px + sa * py) / radius;
            const float v = (-sa * px + ca * py) / radius;
            hits += inside(id.shape, u, -v) ? 1 : 0;
          }
        }
        const float cover = static_cast<float>(hits) / (kSuper * kSuper);
        for (int c = 0; c < 3; ++c) {
          img[(c * res + y) * res + x] = nz.background * (1.0f - cover) + id.color[c] * cover;
        }
      }
    }
  }

  auto images = torch::from_blob(pixels.data(), {n, 3, res, res}, torch::kFloat32).clone();
  auto dataset = LabeledImageDataset::from_tensors(images, torch::tensor(labels), o.num_subjects,
                                                   std::move(names));
  return {std::move(dataset), std::move(factors)};
}

std::pair<LabeledImageDataset, SpriteFactors> make_sprite_dataset(int64_t num_subjects,
                                                                  int64_t images_per_subject,
                                                                  int64_t resolution,
                                                                  std::uint64_t seed) {
  SpriteOptions o;
  o.num_subjects = num_subjects;
  o.images_per_subject = images_per_subject;
  o.resolution = resolution;
  o.seed = seed;
  return make_sprite_dataset(o);
}

torch::Tensor downscale_images(const torch::Tensor& images, int64_t target_resolution) {
  const int64_t native = images.size(-1);
  if (target_resolution > native) {
    throw DatasetError("stage resolution " + std::to_string(target_resolution) +
                       " exceeds native resolution " + std::to_string(native));
  }
  if (native % target_resolution != 0) {
    throw DatasetError("native resolution is not a multiple of the stage resolution");
  }
  const int64_t factor = native / target_resolution;
  if (factor == 1) return images;
  return torch::avg_pool2d(images, {factor, factor});
}

LabeledImageDataset downscale_to_stage(const LabeledImageDataset& dataset, int64_t stage) {
  if (stage < 0) throw ConfigError("stage must be >= 0");
  if (stage > 30) throw DatasetError("stage out of range");
  auto pooled = downscale_images(dataset.images(), stage_resolution(stage));
  return LabeledImageDataset::from_tensors(pooled, dataset.labels(), dataset.num_subjects(),
                                           dataset.subject_names());
}

}  // namespace idgan
