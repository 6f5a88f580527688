#include "idgan/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <new>
#include <ostream>

#include "idgan/errors.hpp"
#include "idgan/random.hpp"

namespace fs = std::filesystem;

namespace idgan {

int64_t TrainConfig::batch_size_at(int64_t stage) const {
  if (batch_sizes.empty()) throw ConfigError("batch_sizes must not be empty");
  const auto i = std::min<size_t>(static_cast<size_t>(std::max<int64_t>(stage, 0)),
                                  batch_sizes.size() - 1);
  return batch_sizes[i];
}

void TrainConfig::validate() const {
  if (network.max_stage < 0) throw ConfigError("max_stage must be >= 0");
  if (network.channels_base < 1 || network.channels_min < 1) {
    throw ConfigError("channel counts must be positive");
  }
  if (images_per_phase <= 0) throw ConfigError("images_per_phase must be > 0");
  if (batch_sizes.empty()) throw ConfigError("batch_sizes must not be empty");
  for (auto b : batch_sizes) {
    if (b < 2) throw ConfigError("batch size must be >= 2 for the gradient penalty");
  }
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (max_nonfinite_steps < 1) throw ConfigError("max_nonfinite_steps must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  weights.validate();
}

// ----------------------------------------------------------------------------
// Schedule

StageSchedule::StageSchedule(const TrainConfig& config) : max_stage_(config.network.max_stage) {
  int64_t start = 0;
  for (int64_t s = 0; s <= max_stage_; ++s) {
    const int64_t b = config.batch_size_at(s);
    const int64_t half = (config.images_per_phase + b - 1) / b;
    half_steps_.push_back(half);
    starts_.push_back(start);
    start += s == 0 ? half : 2 * half;
  }
  total_steps_ = start;
}

int64_t StageSchedule::half_phase_steps(int64_t stage) const { return half_steps_.at(stage); }

int64_t StageSchedule::stage_start(int64_t stage) const { return starts_.at(stage); }

StageState StageSchedule::at(int64_t step) const {
  if (step >= total_steps_) return {max_stage_, 1.0};
  int64_t stage = 0;
  while (stage < max_stage_ && starts_[stage + 1] <= step) ++stage;
  if (stage == 0) return {0, 1.0};
  const int64_t offset = step - starts_[stage];
  const int64_t half = half_steps_[stage];
  if (offset >= half) return {stage, 1.0};
  return {stage, static_cast<double>(offset) / static_cast<double>(half)};
}

StageState stage_schedule(int64_t step, const TrainConfig& config) {
  if (step < 0) throw ConfigError("step must be >= 0");
  return StageSchedule(config).at(step);
}

Objective discriminator_objective(GanModel& model, const StepInputs& in, const LossWeights& w) {
  torch::Tensor z_id, fake;
  {
    torch::NoGradGuard no_grad;
    auto [mu, log_var] = model.embedding->forward(in.labels);
    z_id = reparameterize(mu, log_var, in.noise);
    fake = model.generate(z_id, in.z_nid);
  }
  auto& disc = model.discriminator;
  auto& zcrit = model.latent_critic;
  auto out_real = disc->forward(in.real);
  auto out_fake = disc->forward(fake);
  auto penalty = gradient_penalty([&](const torch::Tensor& x) { return disc->score(x); }, fake,
                                  in.real, in.t_img, w.lambda_gp);
  Objective o;
  o.l_img = out_fake.adv.mean() - out_real.adv.mean() + penalty;
  if (w.drift > 0) o.l_img = o.l_img + w.drift * out_real.adv.pow(2).mean();
  o.l_c = identity_classification_loss(out_real.id_logits, in.labels) +
          identity_classification_loss(out_fake.id_logits, in.labels);
  o.l_mi = mutual_information_loss(out_fake.mi, in.z_nid);
  o.l_e = latent_adversarial_loss([&](const torch::Tensor& v) { return zcrit->forward(v); }, z_id,
                                  in.prior, in.t_lat, w.lambda_e)
              .critic;
  o.total = total_loss(o.l_img, o.l_c, o.l_e, o.l_mi, w, LossSide::Discriminator);
  return o;
}

Objective generator_objective(GanModel& model, const StepInputs& in, const LossWeights& w) {
  auto [mu, log_var] = model.embedding->forward(in.labels);
  auto z_id = reparameterize(mu, log_var, in.noise);
  auto fake = model.generate(z_id, in.z_nid);
  auto out = model.discriminator->forward(fake);
  Objective o;
  o.l_img = out.adv.mean();
  o.l_c = identity_classification_loss(out.id_logits, in.labels);
  o.l_mi = mutual_information_loss(out.mi, in.z_nid);
  o.l_e = model.latent_critic->forward(z_id).mean();
  o.total = total_loss(o.l_img, o.l_c, o.l_e, o.l_mi, w, LossSide::Generator);
  return o;
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%" PRId64 ",%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                r.step, r.stage, r.alpha, r.l_img, r.l_c, r.l_e, r.l_mi, r.total_d, r.total_g);
  out << buf;
}

// ----------------------------------------------------------------------------
// Training

namespace {

using torch::optim::Adam;
using torch::optim::AdamOptions;
using torch::optim::AdamParamState;

struct NetOptimizer {
  std::string prefix;
  std::shared_ptr<torch::nn::Module> module;
  std::unique_ptr<Adam> adam;
};

std::unique_ptr<Adam> make_adam(torch::nn::Module& module, const TrainConfig& c) {
  AdamOptions opts(c.learning_rate);
  opts.betas({c.beta1, c.beta2});
  opts.eps(c.adam_eps);
  return std::make_unique<Adam>(module.parameters(), opts);
}

void export_adam(const NetOptimizer& net, NamedTensors& out) {
  auto& state = net.adam->state();
  for (const auto& item : net.module->named_parameters()) {
    auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const AdamParamState&>(*it->second);
    const std::string base = "opt." + net.prefix + item.key();
    out.emplace_back(base + ".exp_avg", s.exp_avg().clone());
    out.emplace_back(base + ".exp_avg_sq", s.exp_avg_sq().clone());
    out.emplace_back(base + ".step", torch::tensor(s.step(), torch::kInt64));
  }
}

void import_adam(NetOptimizer& net, const std::map<std::string, torch::Tensor>& saved) {
  auto& state = net.adam->state();
  for (const auto& item : net.module->named_parameters()) {
    const std::string base = "opt." + net.prefix + item.key();
    auto avg = saved.find(base + ".exp_avg");
    auto sq = saved.find(base + ".exp_avg_sq");
    auto step = saved.find(base + ".step");
    if (avg == saved.end() || sq == saved.end() || step == saved.end()) continue;
    auto s = std::make_unique<AdamParamState>();
    s->step(step->second.item<int64_t>());
    s->exp_avg(avg->second.clone());
    s->exp_avg_sq(sq->second.clone());
    state[item.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.requires_grad_(flag);
}

bool finite(const torch::Tensor& t) { return std::isfinite(t.item<double>()); }

torch::Tensor fade_lowres(const torch::Tensor& images) {
  auto low = torch::avg_pool2d(images, {2, 2});
  return torch::upsample_nearest2d(low, {images.size(2), images.size(3)});
}

class Trainer {
 public:
  Trainer(const LabeledImageDataset& dataset, const TrainConfig& config, const TrainHooks& hooks)
      : dataset_(dataset), config_(config), hooks_(hooks), schedule_(config) {}

  TrainResult run(std::optional<Checkpoint> resume);

 private:
  void start_stage(int64_t stage);
  void grow_to(int64_t stage);
  void build_optimizers(bool only_growing);
  MetricsRow step(int64_t step, StageState state);
  Checkpoint snapshot(int64_t step) const;
  void save(const Checkpoint& ck, const std::string& name) const;

  const LabeledImageDataset& dataset_;
  const TrainConfig& config_;
  const TrainHooks& hooks_;
  StageSchedule schedule_;
  GanModel model_;
  torch::Generator gen_;
  NetOptimizer g_opt_, d_opt_, e_opt_, dz_opt_;
  torch::Tensor stage_images_;
  torch::Tensor stage_lowres_;
  int64_t nonfinite_run_ = 0;
};

void Trainer::build_optimizers(bool only_growing) {
  g_opt_ = {"G.", model_.generator.ptr(), make_adam(*model_.generator, config_)};
  d_opt_ = {"D.", model_.discriminator.ptr(), make_adam(*model_.discriminator, config_)};
  if (!only_growing) {
    e_opt_ = {"E.", model_.embedding.ptr(), make_adam(*model_.embedding, config_)};
    dz_opt_ = {"Dz.", model_.latent_critic.ptr(), make_adam(*model_.latent_critic, config_)};
  }
}

void Trainer::start_stage(int64_t stage) {
  stage_images_ = downscale_images(dataset_.images(), stage_resolution(stage));
  stage_lowres_ = stage > 0 ? fade_lowres(stage_images_) : torch::Tensor();
}

void Trainer::grow_to(int64_t stage) {
  while (model_.stage() < stage) {
    if (hooks_.on_stage_end) hooks_.on_stage_end(model_, model_.stage());
    const int64_t next = model_.stage() + 1;
    // New blocks draw their initial weights from a stage-specific seed so a
    // resumed run grows exactly like an uninterrupted one.
    torch::manual_seed(derive_seed(config_.seed, 1000 + static_cast<std::uint64_t>(next)));
    grow(model_, next);
    if (config_.reset_optimizer_on_growth) {
      build_optimizers(/*only_growing=*/true);
    } else {
      NamedTensors saved;
      export_adam(g_opt_, saved);
      export_adam(d_opt_, saved);
      build_optimizers(true);
      std::map<std::string, torch::Tensor> lookup(saved.begin(), saved.end());
      import_adam(g_opt_, lookup);
      import_adam(d_opt_, lookup);
    }
    start_stage(next);
  }
}

MetricsRow Trainer::step(int64_t step, StageState state) {
  const int64_t batch = config_.batch_size_at(state.stage);
  const auto& w = config_.weights;
  model_.set_alpha(state.alpha);

  auto idx = torch::randint(stage_images_.size(0), {batch}, gen_, torch::kInt64);
  auto real = stage_images_.index_select(0, idx);
  if (state.stage > 0 && state.alpha < 1.0) {
    auto low = stage_lowres_.index_select(0, idx);
    real = low + state.alpha * (real - low);
  }
  auto labels = dataset_.labels().index_select(0, idx);
  auto z_nid = torch::randn({batch, kLatentDim}, gen_);
  auto noise = torch::randn({batch, kLatentDim}, gen_);
  auto prior = torch::randn({batch, kLatentDim}, gen_);
  auto t_img = torch::rand({batch}, gen_);
  auto t_lat = torch::rand({batch}, gen_);
  auto z_nid_g = torch::randn({batch, kLatentDim}, gen_);
  auto noise_g = torch::randn({batch, kLatentDim}, gen_);

  MetricsRow row;
  row.step = step;
  row.stage = state.stage;
  row.alpha = state.alpha;
  bool step_finite = true;

  // (1) discriminator side: D and D_zid.
  try {
    auto d = discriminator_objective(model_, {real, labels, z_nid, noise, prior, t_img, t_lat}, w);
    d_opt_.adam->zero_grad();
    dz_opt_.adam->zero_grad();
    if (finite(d.total)) {
      d.total.backward();
      d_opt_.adam->step();
      dz_opt_.adam->step();
    } else {
      step_finite = false;
    }
    row.l_img = d.l_img.item<double>();
    row.l_c = d.l_c.item<double>();
    row.l_e = d.l_e.item<double>();
    row.l_mi = d.l_mi.item<double>();
    row.total_d = d.total.item<double>();
  } catch (const NumericalError&) {
    step_finite = false;
    row.total_d = std::nan("");
  }

  // (2) generator side: G and E, with both critics frozen.
  set_requires_grad(*model_.discriminator, false);
  set_requires_grad(*model_.latent_critic, false);
  {
    auto g = generator_objective(model_, {real, labels, z_nid_g, noise_g, prior, t_img, t_lat}, w);
    g_opt_.adam->zero_grad();
    e_opt_.adam->zero_grad();
    if (finite(g.total)) {
      g.total.backward();
      g_opt_.adam->step();
      e_opt_.adam->step();
    } else {
      step_finite = false;
    }
    row.total_g = g.total.item<double>();
  }
  set_requires_grad(*model_.discriminator, true);
  set_requires_grad(*model_.latent_critic, true);

  if (step_finite) {
    nonfinite_run_ = 0;
  } else if (++nonfinite_run_ >= config_.max_nonfinite_steps) {
    char msg[256];
    std::snprintf(msg, sizeof(msg),
                  "training aborted: %" PRId64
                  " consecutive non-finite steps (last step %" PRId64 ", stage %" PRId64
                  ", alpha %.4f, total_D %g, total_G %g)",
                  nonfinite_run_, step, state.stage, state.alpha, row.total_d, row.total_g);
    throw NumericalError(msg);
  }
  return row;
}

Checkpoint Trainer::snapshot(int64_t step) const {
  Checkpoint ck;
  ck.model = model_;
  ck.step = step;
  ck.seed = config_.seed;
  export_adam(g_opt_, ck.optimizer_state);
  export_adam(d_opt_, ck.optimizer_state);
  export_adam(e_opt_, ck.optimizer_state);
  export_adam(dz_opt_, ck.optimizer_state);
  ck.rng_state = gen_.get_state();
  ck.config_hash = architecture_hash(model_.options, model_.num_identities);
  return ck;
}

void Trainer::save(const Checkpoint& ck, const std::string& name) const {
  if (config_.output_dir.empty()) return;
  save_checkpoint(ck, config_.output_dir / name);
}

TrainResult Trainer::run(std::optional<Checkpoint> resume) {
  const int64_t k = dataset_.num_subjects();
  if (k < 2) throw ConfigError("GAN training needs at least 2 identities");
  if (dataset_.resolution() < config_.network.final_resolution()) {
    throw ConfigError("dataset resolution " + std::to_string(dataset_.resolution()) +
                      " is below the final stage resolution " +
                      std::to_string(config_.network.final_resolution()));
  }
  if (config_.deterministic) torch::set_num_threads(1);

  gen_ = make_generator(derive_seed(config_.seed, 1));
  int64_t first_step = 0;
  if (resume) {
    if (resume->model.num_identities != k) {
      throw CheckpointError("resume checkpoint has K=" +
                            std::to_string(resume->model.num_identities) + ", dataset has K=" +
                            std::to_string(k));
    }
    if (architecture_hash(resume->model.options, k) != architecture_hash(config_.network, k)) {
      throw CheckpointError("resume checkpoint architecture differs from the configuration");
    }
    model_ = resume->model;
    first_step = resume->step;
    if (resume->rng_state.defined()) gen_.set_state(resume->rng_state);
    build_optimizers(false);
    std::map<std::string, torch::Tensor> lookup(resume->optimizer_state.begin(),
                                                resume->optimizer_state.end());
    for (auto* net : {&g_opt_, &d_opt_, &e_opt_, &dz_opt_}) import_adam(*net, lookup);
  } else {
    torch::manual_seed(config_.seed);
    model_ = GanModel::create(config_.network, k, 0);
    build_optimizers(false);
  }
  model_.train();
  start_stage(model_.stage());

  int64_t end_step = schedule_.total_steps();
  if (config_.max_steps > 0) end_step = std::min(end_step, config_.max_steps);

  std::ofstream metrics_file;
  if (!config_.output_dir.empty()) {
    fs::create_directories(config_.output_dir);
    const auto path = config_.output_dir / "metrics.csv";
    const bool append = resume && fs::exists(path);
    metrics_file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!metrics_file) throw Error("cannot open " + path.string());
    if (!append) metrics_file << kMetricsHeader << "\n";
  }

  TrainResult result;
  try {
    for (int64_t s = first_step; s < end_step; ++s) {
      const auto state = schedule_.at(s);
      grow_to(state.stage);
      auto row = step(s, state);
      result.metrics.push_back(row);
      if (metrics_file.is_open()) {
        write_metrics_row(metrics_file, row);
        metrics_file.flush();
      }
      if (hooks_.on_step) hooks_.on_step(row);
      if (config_.checkpoint_every > 0 && (s + 1) % config_.checkpoint_every == 0) {
        save(snapshot(s + 1), "checkpoint_latest.idg");
      }
    }
  } catch (const std::bad_alloc&) {
    throw Error("out of memory during training");
  } catch (const c10::Error& e) {
    const std::string what = e.what_without_backtrace();
    if (what.find("alloc") != std::string::npos) throw Error("out of memory: " + what);
    throw Error("tensor library error during training: " + what);
  }
  model_.set_alpha(schedule_.at(std::max<int64_t>(end_step - 1, 0)).alpha);
  if (hooks_.on_stage_end) hooks_.on_stage_end(model_, model_.stage());

  result.checkpoint = snapshot(end_step);
  save(result.checkpoint, "final.idg");
  return result;
}

}  // namespace

TrainResult train(const LabeledImageDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks, std::optional<Checkpoint> resume) {
  config.validate();
  Trainer trainer(dataset, config, hooks);
  return trainer.run(std::move(resume));
}

}  // namespace idgan
