#include <algorithm>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "idgan/augmentation.hpp"
#include "idgan/checkpoint.hpp"
#include "idgan/cli.hpp"
#include "idgan/data.hpp"
#include "idgan/errors.hpp"
#include "idgan/image_io.hpp"
#include "idgan/random.hpp"
#include "idgan/recognition.hpp"
#include "idgan/synthesis.hpp"
#include "idgan/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace idgan::cli {

namespace {

int64_t stage_for_resolution(int64_t resolution) {
  for (int64_t s = 0; s <= 10; ++s) {
    if (stage_resolution(s) == resolution) return s;
  }
  throw ConfigError("config key 'resolution' must be 4·2^k, got " + std::to_string(resolution));
}

fs::path prepare_output(const RunConfig& config) {
  auto out = config.output_dir();
  fs::create_directories(out);
  config.write_snapshot(out);
  return out;
}

void render_stage_grid(GanModel& model, int64_t stage, int64_t subjects, int64_t samples,
                       std::uint64_t seed, const fs::path& dir) {
  subjects = std::min(subjects, model.num_identities);
  auto z_nid = sample_prior(samples, derive_seed(seed, 0x6772));
  std::vector<torch::Tensor> rows;
  for (int64_t y = 0; y < subjects; ++y) rows.push_back(generate_existing(model, y, z_nid));
  render_grid(torch::cat(rows), subjects, samples,
              dir / ("samples_stage" + std::to_string(stage) + ".png"));
}

}  // namespace

int cmd_train_gan(const RunConfig& config) {
  auto dataset_path = config.path("dataset");
  const int64_t resolution = config.integer("resolution", 32);
  TrainConfig tc;
  tc.network.max_stage = stage_for_resolution(resolution);
  tc.network.channels_base = config.integer("channels_base", tc.network.channels_base);
  tc.network.channels_min = config.integer("channels_min", tc.network.channels_min);
  tc.network.latent_hidden_width =
      config.integer("latent_hidden_width", tc.network.latent_hidden_width);
  tc.images_per_phase = config.integer("images_per_phase", tc.images_per_phase);
  tc.batch_sizes = config.integers("batch_size", tc.batch_sizes);
  tc.learning_rate = config.real("lr", tc.learning_rate);
  tc.beta1 = config.real("beta1", tc.beta1);
  tc.beta2 = config.real("beta2", tc.beta2);
  tc.weights.lambda_gp = config.real("lambda_gp", tc.weights.lambda_gp);
  tc.weights.lambda_e = config.real("lambda_e", tc.weights.lambda_e);
  tc.weights.alpha = config.real("alpha", tc.weights.alpha);
  tc.weights.beta = config.real("beta", tc.weights.beta);
  tc.weights.gamma = config.real("gamma", tc.weights.gamma);
  tc.weights.drift = config.real("drift", tc.weights.drift);
  tc.checkpoint_every = config.integer("checkpoint_every", 0);
  tc.max_steps = config.integer("max_steps", 0);
  tc.max_nonfinite_steps = config.integer("max_nonfinite_steps", tc.max_nonfinite_steps);
  tc.deterministic = config.flag("deterministic", true);
  tc.seed = config.seed();
  tc.validate();
  const int64_t grid_subjects = config.integer("grid_subjects", 8);
  const int64_t grid_samples = config.integer("grid_samples", 8);

  auto dataset = load_image_folder(dataset_path, resolution);
  std::optional<Checkpoint> resume;
  if (config.has("resume")) resume = load_checkpoint(config.path("resume"), dataset.num_subjects());

  auto out = prepare_output(config);
  tc.output_dir = out;
  TrainHooks hooks;
  hooks.on_stage_end = [&](GanModel& model, int64_t stage) {
    model.eval();
    render_stage_grid(model, stage, grid_subjects, grid_samples, tc.seed, out);
    model.train();
  };
  auto result = train(dataset, tc, hooks, std::move(resume));
  std::cout << "trained " << result.checkpoint.step << " steps; checkpoint "
            << (out / "final.idg").string() << "\n";
  return 0;
}

int cmd_generate(const RunConfig& config) {
  auto ckpt = load_checkpoint(config.path("checkpoint"));
  auto& model = ckpt.model;
  model.eval();
  const auto mode = config.str("mode");
  const auto seed = config.seed();
  if (mode != "existing" && mode != "new" && mode != "interpolate") {
    throw ConfigError("config key 'mode' must be existing, new or interpolate, got '" + mode + "'");
  }
  auto out = prepare_output(config);
  auto gen = make_generator(derive_seed(seed, 0x9e4e));
  std::vector<ManifestEntry> manifest;
  torch::Tensor images;
  int64_t rows = 1, cols = 0;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> latents;

  if (mode == "interpolate") {
    const int64_t steps = config.integer("steps", 5);
    if (steps < 2) throw ConfigError("config key 'steps' must be >= 2");
    torch::Tensor ia, ib;
    if (config.has("label")) {
      ia = subject_embedding(model, config.integer("label"));
      ib = subject_embedding(model, config.integer("label_b", (config.integer("label") + 1) %
                                                               model.num_identities));
    } else {
      ia = sample_prior(1, gen);
      ib = sample_prior(1, gen);
    }
    auto na = sample_prior(1, gen);
    auto nb = sample_prior(1, gen);
    images = interpolate_grid(model, ia, ib, na, nb, steps);
    rows = cols = steps;
    for (int64_t i = 0; i < steps; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(steps - 1);
      for (int64_t j = 0; j < steps; ++j) {
        const double v = static_cast<double>(j) / static_cast<double>(steps - 1);
        latents.emplace_back((1 - u) * ia + u * ib, (1 - v) * na + v * nb);
      }
    }
  } else {
    const int64_t n = config.integer("n", 8);
    if (n < 1) throw ConfigError("config key 'n' must be >= 1");
    cols = n;
    torch::Tensor z_id;
    if (mode == "existing") {
      z_id = subject_embedding(model, config.integer("label"));
    } else {
      z_id = sample_prior(1, gen);
    }
    auto z_nid = sample_prior(n, gen);
    images = generate_new(model, z_id, z_nid);
    for (int64_t i = 0; i < n; ++i) latents.emplace_back(z_id, z_nid[i]);
  }

  render_grid(images, rows, cols, out / "grid.png");
  fs::create_directories(out / "images");
  for (int64_t i = 0; i < images.size(0); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(i));
    write_png(images[i], out / "images" / name);
    ManifestEntry e;
    e.path = (fs::path("images") / name).string();
    e.mode = mode;
    e.label = mode == "existing" ? config.integer("label") : -1;
    e.seed = seed;
    e.latent_hash = latent_hash(latents[i].first, latents[i].second);
    manifest.push_back(e);
  }
  write_manifest(manifest, out / "manifest.jsonl");
  std::cout << "wrote " << rows << "x" << cols << " grid to " << (out / "grid.png").string() << "\n";
  return 0;
}

int cmd_augment(const RunConfig& config) {
  if (!config.has("kind")) throw ConfigError("missing required config key 'kind' (depth or width)");
  const auto kind = augmentation_kind_from(config.str("kind"));
  auto ckpt = load_checkpoint(config.path("checkpoint"));
  auto& model = ckpt.model;
  model.eval();
  auto real = load_image_folder(config.path("dataset"), model.options.final_resolution());
  AugmentationPlan plan =
      kind == AugmentationKind::Depth
          ? AugmentationPlan::depth(config.integer("m"), config.seed())
          : AugmentationPlan::width(config.integer("num_new"), config.integer("per_subject"),
                                    config.seed());
  plan.validate();
  auto out = prepare_output(config);
  auto augmented = augment(real, model, plan);
  save_synthetic_partition(augmented, out);
  std::cout << "wrote " << augmented.synthetic.size() << " synthetic images to " << out.string()
            << "\n";
  return 0;
}

int cmd_train_recognizer(const RunConfig& config) {
  RecognizerConfig rc;
  rc.network.input_resolution = config.integer("input_resolution", rc.network.input_resolution);
  rc.network.base_width = config.integer("base_width", rc.network.base_width);
  rc.network.num_blocks = config.integer("num_blocks", rc.network.num_blocks);
  rc.network.feature_dim = config.integer("feature_dim", rc.network.feature_dim);
  rc.epochs = config.integer("epochs", rc.epochs);
  rc.batch_size = config.integer("batch_size", rc.batch_size);
  rc.learning_rate = config.real("lr", rc.learning_rate);
  rc.momentum = config.real("momentum", rc.momentum);
  rc.weight_decay = config.real("weight_decay", rc.weight_decay);
  rc.patience = config.integer("patience", rc.patience);
  rc.validation_fraction = config.real("validation_fraction", rc.validation_fraction);
  rc.seed = config.seed();
  rc.deterministic = config.flag("deterministic", true);
  rc.validate();

  auto real = load_image_folder(config.path("dataset"), rc.network.input_resolution);
  auto out = prepare_output(config);
  RecognitionModel model;
  if (config.has("synthetic")) {
    auto augmented = load_augmented(real, config.path("synthetic"));
    model = train_recognizer(augmented, rc);
  } else {
    model = train_recognizer(real, rc);
  }
  save_recognizer(model, out);

  std::ofstream history(out / "history.csv", std::ios::trunc);
  history << "epoch,train_loss,train_accuracy,validation_accuracy,learning_rate\n";
  for (const auto& h : model.history) {
    history << h.epoch << "," << h.train_loss << "," << h.train_accuracy << ","
            << h.validation_accuracy << "," << h.learning_rate << "\n";
  }
  std::ofstream batches(out / "batches.csv", std::ios::trunc);
  batches << "batch,num_real,num_synthetic\n";
  for (size_t i = 0; i < model.batches.size(); ++i) {
    batches << i << "," << model.batches[i].num_real << "," << model.batches[i].num_synthetic
            << "\n";
  }
  const auto& last = model.history.back();
  std::cout << "validation accuracy " << last.validation_accuracy << " after " << model.history.size()
            << " epochs\n";
  return 0;
}

int cmd_evaluate(const RunConfig& config) {
  auto model = load_recognizer(config.path("recognizer"));
  auto protocol = read_protocol(config.path("protocol"));
  protocol.far_target = config.real("far", 0.01);
  auto report = evaluate_verification(model, protocol);
  auto out = prepare_output(config);
  std::ofstream(out / "report.json", std::ios::trunc) << report.to_json() << "\n";
  std::cout << "TAR@FAR=" << report.far_target << ": " << report.tar << "\n";
  return 0;
}

int cmd_make_sprites(const RunConfig& config) {
  SpriteOptions o;
  o.num_subjects = config.integer("subjects", o.num_subjects);
  o.images_per_subject = config.integer("per_subject", o.images_per_subject);
  o.resolution = config.integer("resolution", o.resolution);
  o.identity_offset = config.integer("identity_offset", 0);
  o.seed = config.seed();
  auto [dataset, factors] = make_sprite_dataset(o);
  auto out = config.output_dir();
  save_image_folder(dataset, out);
  std::cout << "wrote " << dataset.size() << " sprites of " << dataset.num_subjects()
            << " subjects to " << out.string() << "\n";
  return 0;
}

int cmd_make_protocol(const RunConfig& config) {
  auto protocol = make_protocol(config.path("dataset"), config.integer("genuine", 500),
                                config.integer("impostor", 500), config.seed());
  auto out = config.output_dir();
  write_protocol(protocol, out);
  std::cout << "wrote " << protocol.pairs.size() << " pairs to " << out.string() << "\n";
  return 0;
}

int run_command(const RunConfig& config) {
  try {
    const auto& c = config.command();
    if (c == "train-gan") return cmd_train_gan(config);
    if (c == "generate") return cmd_generate(config);
    if (c == "augment") return cmd_augment(config);
    if (c == "train-recognizer") return cmd_train_recognizer(config);
    if (c == "evaluate") return cmd_evaluate(config);
    if (c == "make-sprites") return cmd_make_sprites(config);
    if (c == "make-protocol") return cmd_make_protocol(config);
    throw ConfigError("unknown command '" + c + "'");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace idgan::cli
