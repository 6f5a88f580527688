#include "idgan/recognition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "idgan/errors.hpp"
#include "idgan/image_io.hpp"
#include "idgan/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace idgan {

namespace {

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in, int64_t out, int64_t stride) {
    namespace nn = torch::nn;
    conv1_ = register_module(
        "conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    bn1_ = register_module("bn1", nn::BatchNorm2d(out));
    conv2_ = register_module(
        "conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).stride(1).padding(1).bias(false)));
    bn2_ = register_module("bn2", nn::BatchNorm2d(out));
    if (in != out || stride != 1) {
      shortcut_ = register_module(
          "shortcut", nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)));
      shortcut_bn_ = register_module("shortcut_bn", nn::BatchNorm2d(out));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1_(conv1_(x)));
    h = bn2_(conv2_(h));
    auto skip = shortcut_ ? shortcut_bn_(shortcut_(x)) : x;
    return torch::relu(h + skip);
  }

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, shortcut_bn_{nullptr};
};

struct Split {
  std::vector<int64_t> train;
  std::vector<int64_t> validation;
};

// Holds out round(fraction·n) images per identity (at least one when n ≥ 2).
Split split_per_identity(const LabeledImageDataset& d, double fraction, std::uint64_t seed) {
  auto gen = make_generator(derive_seed(seed, 7));
  Split s;
  for (int64_t k = 0; k < d.num_subjects(); ++k) {
    const auto& members = d.images_of(k);
    const auto n = static_cast<int64_t>(members.size());
    int64_t held = n >= 2 ? std::max<int64_t>(1, std::llround(fraction * n)) : 0;
    if (fraction <= 0) held = 0;
    held = std::min(held, n - 1);
    auto perm = torch::randperm(n, gen, torch::kInt64);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t idx = members[perm[i].item<int64_t>()];
      (i < held ? s.validation : s.train).push_back(idx);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

torch::Tensor gather(const torch::Tensor& t, const std::vector<int64_t>& idx) {
  return t.index_select(0, torch::tensor(idx, torch::kInt64));
}

double evaluate_accuracy(RecognitionNet& net, const torch::Tensor& images,
                         const torch::Tensor& labels) {
  if (labels.size(0) == 0) return 0.0;
  torch::NoGradGuard no_grad;
  net->eval();
  int64_t correct = 0;
  for (int64_t start = 0; start < images.size(0); start += 256) {
    const int64_t len = std::min<int64_t>(256, images.size(0) - start);
    auto pred = net->forward(images.narrow(0, start, len)).argmax(1);
    correct += pred.eq(labels.narrow(0, start, len)).sum().item<int64_t>();
  }
  net->train();
  return static_cast<double>(correct) / static_cast<double>(labels.size(0));
}

// Shared loop: `next_batch` yields (images, labels, composition) triples.
template <typename NextBatch>
RecognitionModel run_training(const RecognizerConfig& c, int64_t num_classes,
                              std::vector<std::string> names, int64_t batches_per_epoch,
                              const torch::Tensor& val_images, const torch::Tensor& val_labels,
                              NextBatch next_batch) {
  if (c.deterministic) torch::set_num_threads(1);
  torch::manual_seed(derive_seed(c.seed, 3));
  RecognitionModel model;
  model.options = c.network;
  model.subject_names = std::move(names);
  model.net = RecognitionNet(c.network, num_classes);
  model.net->train();

  torch::optim::SGD sgd(model.net->parameters(), torch::optim::SGDOptions(c.learning_rate)
                                                     .momentum(c.momentum)
                                                     .weight_decay(c.weight_decay));
  double lr = c.learning_rate;
  double best_val = -1.0;
  int64_t stale = 0;
  for (int64_t epoch = 0; epoch < c.epochs; ++epoch) {
    double loss_sum = 0;
    int64_t correct = 0, seen = 0;
    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      torch::Tensor images, labels;
      BatchComposition composition;
      std::tie(images, labels, composition) = next_batch();
      model.batches.push_back(composition);
      sgd.zero_grad();
      auto logits = model.net->forward(images);
      auto loss = torch::nn::functional::cross_entropy(logits, labels);
      loss.backward();
      sgd.step();
      loss_sum += loss.item<double>() * static_cast<double>(labels.size(0));
      correct += logits.argmax(1).eq(labels).sum().item<int64_t>();
      seen += labels.size(0);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(seen, 1));
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(seen, 1));
    log.validation_accuracy = evaluate_accuracy(model.net, val_images, val_labels);
    log.learning_rate = lr;
    model.history.push_back(log);

    if (log.validation_accuracy > best_val) {
      best_val = log.validation_accuracy;
      stale = 0;
    } else if (++stale >= c.patience) {
      lr /= 10.0;
      for (auto& group : sgd.param_groups()) group.options().set_lr(lr);
      stale = 0;
    }
  }
  model.net->eval();
  return model;
}

}  // namespace

RecognitionNetImpl::RecognitionNetImpl(const RecognizerOptions& o, int64_t num_classes)
    : options_(o), num_classes_(num_classes) {
  namespace nn = torch::nn;
  if (num_classes < 2) throw ConfigError("recognizer needs at least 2 identities");
  if (o.num_blocks < 1) throw ConfigError("recognizer needs at least one residual block");
  stem_ = register_module(
      "stem", nn::Conv2d(nn::Conv2dOptions(3, o.base_width, 3).padding(1).bias(false)));
  stem_bn_ = register_module("stem_bn", nn::BatchNorm2d(o.base_width));
  blocks_ = register_module("blocks", nn::ModuleList());
  int64_t width = o.base_width;
  for (int64_t i = 0; i < o.num_blocks; ++i) {
    const int64_t out = i == 0 ? width : width * 2;
    blocks_->push_back(std::make_shared<ResidualBlockImpl>(width, out, i == 0 ? 1 : 2));
    width = out;
  }
  embed_ = register_module("embed", nn::Linear(width, o.feature_dim));
  embed_bn_ = register_module("embed_bn", nn::BatchNorm1d(o.feature_dim));
  classifier_ = register_module("classifier", nn::Linear(o.feature_dim, num_classes));
}

torch::Tensor RecognitionNetImpl::features(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != options_.input_resolution ||
      images.size(3) != options_.input_resolution) {
    throw ShapeError("recognizer expects batch×3×" + std::to_string(options_.input_resolution) +
                     "×" + std::to_string(options_.input_resolution) + " images");
  }
  auto h = torch::relu(stem_bn_(stem_(images)));
  for (size_t i = 0; i < blocks_->size(); ++i) h = blocks_->ptr<ResidualBlockImpl>(i)->forward(h);
  h = h.mean({2, 3});
  return embed_bn_(embed_(h));
}

torch::Tensor RecognitionNetImpl::forward(const torch::Tensor& images) {
  return classifier_(torch::relu(features(images)));
}

void RecognizerConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (validation_fraction < 0 || validation_fraction >= 1) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
}

RecognitionModel train_recognizer(const LabeledImageDataset& dataset,
                                  const RecognizerConfig& config) {
  config.validate();
  if (dataset.num_subjects() < 2) throw ConfigError("recognizer needs at least 2 identities");
  auto split = split_per_identity(dataset, config.validation_fraction, config.seed);
  auto train_images = gather(dataset.images(), split.train);
  auto train_labels = gather(dataset.labels(), split.train);
  const int64_t n = train_images.size(0);
  const int64_t batches = (n + config.batch_size - 1) / config.batch_size;

  auto gen = make_generator(derive_seed(config.seed, 11));
  torch::Tensor order;
  int64_t cursor = n;
  auto next = [&]() {
    if (cursor >= n) {
      order = torch::randperm(n, gen, torch::kInt64);
      cursor = 0;
    }
    const int64_t len = std::min(config.batch_size, n - cursor);
    auto idx = order.narrow(0, cursor, len);
    cursor += len;
    return std::make_tuple(train_images.index_select(0, idx), train_labels.index_select(0, idx),
                           BatchComposition{len, 0});
  };
  return run_training(config, dataset.num_subjects(), dataset.subject_names(), batches,
                      gather(dataset.images(), split.validation),
                      gather(dataset.labels(), split.validation), next);
}

RecognitionModel train_recognizer(const AugmentedDataset& aug, const RecognizerConfig& config) {
  config.validate();
  if (aug.num_labels < 2) throw ConfigError("recognizer needs at least 2 identities");
  auto split = split_per_identity(aug.real, config.validation_fraction, config.seed);
  auto real_images = gather(aug.real.images(), split.train);
  auto real_labels = gather(aug.real.labels(), split.train);
  BalancedBatchSampler sampler(real_images, real_labels, aug.synthetic.images,
                               aug.synthetic.labels, config.batch_size,
                               derive_seed(config.seed, 13));
  const int64_t real_per_batch = (config.batch_size + 1) / 2;
  const int64_t batches = (real_images.size(0) + real_per_batch - 1) / real_per_batch;
  auto next = [&]() {
    auto b = sampler.next();
    return std::make_tuple(b.images, b.labels, BatchComposition{b.num_real, b.num_synthetic});
  };
  return run_training(config, aug.num_labels, aug.label_names, batches,
                      gather(aug.real.images(), split.validation),
                      gather(aug.real.labels(), split.validation), next);
}

torch::Tensor extract_features(RecognitionModel& model, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  model.net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < images.size(0); start += 256) {
    const int64_t len = std::min<int64_t>(256, images.size(0) - start);
    out.push_back(model.net->features(images.narrow(0, start, len)));
  }
  auto f = torch::cat(out);
  return f / f.norm(2, 1, /*keepdim=*/true).clamp_min(1e-12);
}

torch::Tensor predict(RecognitionModel& model, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  model.net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < images.size(0); start += 256) {
    const int64_t len = std::min<int64_t>(256, images.size(0) - start);
    out.push_back(model.net->forward(images.narrow(0, start, len)).argmax(1));
  }
  return torch::cat(out);
}

double classification_accuracy(RecognitionModel& model, const torch::Tensor& images,
                               const torch::Tensor& labels) {
  if (labels.size(0) == 0) throw ConfigError("accuracy of an empty set is undefined");
  return predict(model, images).eq(labels).to(torch::kFloat64).mean().item<double>();
}

void save_recognizer(const RecognitionModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  torch::save(model.net, (dir / "model.pt").string());
  json meta{{"subject_names", model.subject_names},
            {"input_resolution", model.options.input_resolution},
            {"base_width", model.options.base_width},
            {"num_blocks", model.options.num_blocks},
            {"feature_dim", model.options.feature_dim}};
  json history = json::array();
  for (const auto& h : model.history) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"train_accuracy", h.train_accuracy},
                       {"validation_accuracy", h.validation_accuracy},
                       {"learning_rate", h.learning_rate}});
  }
  meta["history"] = history;
  std::ofstream out(dir / "recognizer.json", std::ios::trunc);
  out << meta.dump(2) << "\n";
}

RecognitionModel load_recognizer(const fs::path& dir) {
  std::ifstream in(dir / "recognizer.json");
  if (!in) throw Error("missing recognizer.json in " + dir.string());
  RecognitionModel model;
  try {
    json meta;
    in >> meta;
    model.subject_names = meta.at("subject_names").get<std::vector<std::string>>();
    model.options.input_resolution = meta.at("input_resolution").get<int64_t>();
    model.options.base_width = meta.at("base_width").get<int64_t>();
    model.options.num_blocks = meta.at("num_blocks").get<int64_t>();
    model.options.feature_dim = meta.at("feature_dim").get<int64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed recognizer.json: ") + e.what());
  }
  model.net = RecognitionNet(model.options, static_cast<int64_t>(model.subject_names.size()));
  torch::load(model.net, (dir / "model.pt").string());
  model.net->eval();
  return model;
}

// ----------------------------------------------------------------------------
// Verification

TarAtFar tar_at_far(std::span<const double> genuine, std::span<const double> impostor,
                    double far_target) {
  if (genuine.empty() || impostor.empty()) {
    throw ConfigError("tar_at_far needs non-empty genuine and impostor score lists");
  }
  if (!(far_target > 0.0 && far_target < 1.0)) {
    throw ConfigError("far_target must lie in (0, 1)");
  }
  std::vector<double> gen(genuine.begin(), genuine.end());
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> candidates(gen);
  candidates.insert(candidates.end(), imp.begin(), imp.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const auto above = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
  };
  const double n_imp = static_cast<double>(imp.size());
  // fraction(impostor > t) is nonincreasing in t; the largest score always qualifies.
  auto it = std::partition_point(candidates.begin(), candidates.end(), [&](double t) {
    return !(above(imp, t) <= far_target * n_imp);
  });
  TarAtFar r;
  r.threshold = *it;
  r.tar = above(gen, r.threshold) / static_cast<double>(gen.size());
  return r;
}

VerificationProtocol read_protocol(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open protocol file " + path.string());
  VerificationProtocol protocol;
  const fs::path base = path.parent_path();
  std::string line;
  int64_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string a, b, kind, extra;
    if (!(fields >> a)) continue;
    if (!(fields >> b >> kind) || (fields >> extra) || (kind != "genuine" && kind != "impostor")) {
      throw ConfigError("malformed protocol line " + std::to_string(number) + " in " +
                        path.string() + ": expected 'path_a path_b {genuine|impostor}'");
    }
    VerificationPair pair;
    pair.a = fs::path(a).is_absolute() ? fs::path(a) : base / a;
    pair.b = fs::path(b).is_absolute() ? fs::path(b) : base / b;
    pair.genuine = kind == "genuine";
    protocol.pairs.push_back(std::move(pair));
  }
  if (protocol.pairs.empty()) throw ConfigError("protocol file has no pairs: " + path.string());
  return protocol;
}

void write_protocol(const VerificationProtocol& protocol, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write protocol " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    auto r = fs::absolute(p).lexically_relative(base);
    return r.empty() ? fs::absolute(p) : r;
  };
  for (const auto& pair : protocol.pairs) {
    out << rel(pair.a).string() << " " << rel(pair.b).string() << " "
        << (pair.genuine ? "genuine" : "impostor") << "\n";
  }
}

VerificationProtocol make_protocol(const fs::path& root, int64_t num_genuine,
                                   int64_t num_impostor, std::uint64_t seed) {
  std::vector<std::vector<fs::path>> subjects;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (!files.empty()) subjects.push_back(std::move(files));
  }
  if (subjects.size() < 2) throw DatasetError("protocol needs at least 2 subjects");
  std::vector<size_t> multi;
  for (size_t i = 0; i < subjects.size(); ++i) {
    if (subjects[i].size() >= 2) multi.push_back(i);
  }
  if (num_genuine > 0 && multi.empty()) {
    throw DatasetError("genuine pairs need a subject with at least 2 images");
  }
  auto gen = make_generator(seed);
  auto pick = [&](int64_t n) { return torch::randint(n, {1}, gen, torch::kInt64).item<int64_t>(); };
  VerificationProtocol protocol;
  for (int64_t i = 0; i < num_genuine; ++i) {
    const auto& files = subjects[multi[pick(static_cast<int64_t>(multi.size()))]];
    const int64_t a = pick(static_cast<int64_t>(files.size()));
    int64_t b = pick(static_cast<int64_t>(files.size()) - 1);
    if (b >= a) ++b;
    protocol.pairs.push_back({files[a], files[b], true});
  }
  for (int64_t i = 0; i < num_impostor; ++i) {
    const int64_t sa = pick(static_cast<int64_t>(subjects.size()));
    int64_t sb = pick(static_cast<int64_t>(subjects.size()) - 1);
    if (sb >= sa) ++sb;
    const auto& fa = subjects[sa];
    const auto& fb = subjects[sb];
    protocol.pairs.push_back({fa[pick(static_cast<int64_t>(fa.size()))],
                              fb[pick(static_cast<int64_t>(fb.size()))], false});
  }
  return protocol;
}

std::string VerificationReport::to_json() const {
  json j{{"tar", tar},
         {"threshold", threshold},
         {"far_target", far_target},
         {"genuine_pairs", genuine_pairs},
         {"impostor_pairs", impostor_pairs},
         {"bin_edges", bin_edges},
         {"genuine_histogram", genuine_histogram},
         {"impostor_histogram", impostor_histogram}};
  return j.dump(2);
}

VerificationReport evaluate_verification(RecognitionModel& model,
                                         const VerificationProtocol& protocol) {
  std::set<std::string> training(model.subject_names.begin(), model.subject_names.end());
  int64_t n_gen = 0, n_imp = 0;
  std::map<fs::path, int64_t> slot;
  for (const auto& pair : protocol.pairs) {
    for (const auto* p : {&pair.a, &pair.b}) {
      const auto subject = p->parent_path().filename().string();
      if (training.count(subject)) {
        throw ConfigError("protocol subject '" + subject +
                          "' overlaps the recognizer's training identities");
      }
      slot.emplace(*p, 0);
    }
    (pair.genuine ? n_gen : n_imp) += 1;
  }
  if (n_imp == 0) throw ConfigError("protocol has no impostor pairs");
  if (n_gen == 0) throw ConfigError("protocol has no genuine pairs");

  std::vector<torch::Tensor> images;
  for (auto& [path, index] : slot) {
    auto image = read_image(path, model.options.input_resolution);
    if (!image) throw DatasetError("cannot decode protocol image " + path.string());
    index = static_cast<int64_t>(images.size());
    images.push_back(*image);
  }
  auto features = extract_features(model, torch::stack(images)).to(torch::kFloat64);

  std::vector<double> genuine, impostor;
  for (const auto& pair : protocol.pairs) {
    const double score = features[slot.at(pair.a)].dot(features[slot.at(pair.b)]).item<double>();
    (pair.genuine ? genuine : impostor).push_back(score);
  }
  auto r = tar_at_far(genuine, impostor, protocol.far_target);

  VerificationReport report;
  report.tar = r.tar;
  report.threshold = r.threshold;
  report.far_target = protocol.far_target;
  report.genuine_pairs = n_gen;
  report.impostor_pairs = n_imp;
  constexpr int kBins = 20;
  for (int i = 0; i <= kBins; ++i) report.bin_edges.push_back(-1.0 + 2.0 * i / kBins);
  report.genuine_histogram.assign(kBins, 0);
  report.impostor_histogram.assign(kBins, 0);
  auto bin = [](double s) {
    return std::clamp(static_cast<int>(std::floor((s + 1.0) / 2.0 * kBins)), 0, kBins - 1);
  };
  for (double s : genuine) ++report.genuine_histogram[bin(s)];
  for (double s : impostor) ++report.impostor_histogram[bin(s)];
  return report;
}

}  // namespace idgan
