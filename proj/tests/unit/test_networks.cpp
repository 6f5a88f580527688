#include <doctest.h>

#include "helpers.hpp"
#include "idgan/errors.hpp"
#include "idgan/networks.hpp"

using namespace idgan;

namespace {

std::map<std::string, torch::Tensor> snapshot(torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m.named_parameters()) out[p.key()] = p.value().detach().clone();
  return out;
}

}  // namespace

TEST_CASE("generator: resolution and layer count per stage") {
  torch::NoGradGuard no_grad;
  NetworkOptions o;
  o.max_stage = 5;
  o.channels_base = 16;
  o.channels_min = 4;
  for (int64_t s = 0; s <= 5; ++s) {
    auto g = build_generator(s, o);
    CHECK(g->resolution() == (4 << s));
    CHECK(g->num_layers() == 1 + 2 * s);
    auto img = g->forward(torch::randn({2, kGeneratorInputDim}));
    CHECK(img.sizes() == torch::IntArrayRef{2, 3, 4 << s, 4 << s});
  }
  CHECK(build_generator(5, o)->num_layers() == 11);
  CHECK(build_generator(3, 3)->resolution() == 32);
  CHECK_THROWS_AS(build_generator(4, 3), ConfigError);
  CHECK_THROWS_AS(build_generator(-1, 3), ConfigError);
}

TEST_CASE("desk channel schedule") {
  NetworkOptions o;
  CHECK(o.channels_at(0) == 64);
  CHECK(o.channels_at(1) == 64);
  CHECK(o.channels_at(2) == 32);
  CHECK(o.channels_at(3) == 16);
  CHECK(o.channels_at(5) == 16);
}

TEST_CASE("generator output stays in [-1, 1] for extreme latents") {
  torch::NoGradGuard no_grad;
  auto g = build_generator(2, testing::tiny_options(2));
  testing::Gen gen(1);
  for (int trial = 0; trial < 10; ++trial) {
    const double scale = std::pow(10.0, gen.integer(-2, 4));
    auto img = g->forward(torch::randn({3, kGeneratorInputDim}) * scale);
    CHECK(img.abs().max().item<float>() <= 1.0f);
    g->set_alpha(gen.real(0, 1));
    img = g->forward(torch::randn({3, kGeneratorInputDim}) * scale);
    CHECK(img.abs().max().item<float>() <= 1.0f);
    g->set_alpha(1.0);
  }
}

TEST_CASE("discriminator: head shapes, unbounded score, shape errors") {
  torch::NoGradGuard no_grad;
  NetworkOptions o = testing::tiny_options(3);
  auto d = build_discriminator(3, 20, o);
  d->eval();
  auto x = torch::rand({8, 3, 32, 32}) * 2 - 1;
  auto out = d->forward(x);
  CHECK(out.adv.sizes() == torch::IntArrayRef{8});
  CHECK(out.id_logits.sizes() == torch::IntArrayRef{8, 20});
  CHECK(out.mi.sizes() == torch::IntArrayRef{8, 64});
  auto again = d->forward(x);
  CHECK(torch::equal(out.adv, again.adv));
  CHECK(torch::equal(out.mi, again.mi));
  CHECK(d->forward(x * 50).adv.abs().max().item<double>() > 1.0);
  CHECK_THROWS_AS(d->forward(torch::zeros({2, 3, 16, 16})), ShapeError);
  CHECK_THROWS_AS(build_discriminator(0, 1, o), ConfigError);
}

TEST_CASE("every head sends gradient into the shared trunk") {
  auto d = build_discriminator(1, 5, testing::tiny_options(1));
  auto x = torch::randn({4, 3, 8, 8});
  auto trunk_params = [&] {
    std::vector<torch::Tensor> v;
    for (const auto& p : d->named_parameters()) {
      if (p.key().find("head") == std::string::npos) v.push_back(p.value());
    }
    return v;
  }();
  REQUIRE_FALSE(trunk_params.empty());
  for (int head = 0; head < 3; ++head) {
    d->zero_grad();
    auto out = d->forward(x);
    auto y = head == 0 ? out.adv.sum() : head == 1 ? out.id_logits.pow(2).sum() : out.mi.pow(2).sum();
    y.backward();
    double norm = 0;
    for (auto& p : trunk_params) {
      if (p.grad().defined()) norm += p.grad().norm().item<double>();
    }
    CHECK(norm > 0);
  }
}

TEST_CASE("grow preserves old parameters and enforces consecutive stages") {
  auto m = testing::tiny_model(3, 0, 2);
  auto g_before = snapshot(*m.generator);
  auto d_before = snapshot(*m.discriminator);
  grow(m, 1);
  CHECK(m.stage() == 1);
  CHECK(m.alpha() == 0.0);
  auto g_after = snapshot(*m.generator);
  auto d_after = snapshot(*m.discriminator);
  for (const auto& [k, v] : g_before) {
    REQUIRE(g_after.count(k));
    CHECK(torch::equal(v, g_after[k]));
  }
  for (const auto& [k, v] : d_before) {
    REQUIRE(d_after.count(k));
    CHECK(torch::equal(v, d_after[k]));
  }
  CHECK(g_after.size() > g_before.size());
  CHECK_THROWS_AS(grow(m, 3), ConfigError);
  grow(m, 2);
  CHECK_THROWS_AS(grow(m, 3), ConfigError);  // beyond max_stage
}

TEST_CASE("fade-in: alpha 0 reproduces upsampled previous stage") {
  torch::NoGradGuard no_grad;
  auto m = testing::tiny_model(3, 0, 1);
  auto z = torch::randn({2, kGeneratorInputDim});
  auto before = m.generator->forward(z);
  grow(m, 1);
  m.set_alpha(0.0);
  auto after = m.generator->forward(z);
  auto up = torch::upsample_nearest2d(before, {8, 8});
  CHECK(torch::allclose(after, up, 1e-6, 1e-6));
}

TEST_CASE("fade-in blend is linear in alpha") {
  torch::NoGradGuard no_grad;
  auto m = testing::tiny_model(3, 1, 1);
  auto z = torch::randn({3, kGeneratorInputDim});
  m.set_alpha(0.0);
  auto g0 = m.generator->forward(z);
  m.set_alpha(1.0);
  auto g1 = m.generator->forward(z);
  CHECK_FALSE(torch::allclose(g0, g1));
  for (double a : {0.0, 0.25, 0.5, 1.0}) {
    m.set_alpha(a);
    CHECK(torch::allclose(m.generator->forward(z), (1 - a) * g0 + a * g1, 1e-5, 1e-6));
  }
  CHECK_THROWS_AS(m.set_alpha(1.5), ConfigError);
}

TEST_CASE("stabilizer primitives") {
  auto x = torch::randn({2, 8, 3, 3}) * 5;
  auto n = pixel_norm(x);
  CHECK(torch::allclose(n.pow(2).mean(1), torch::ones({2, 3, 3}), 1e-4, 1e-4));
  auto s = minibatch_stddev(x);
  CHECK(s.sizes() == torch::IntArrayRef{2, 9, 3, 3});
  const double expect = x.std(0, false).mean().item<double>();
  CHECK(s[0][8][0][0].item<double>() == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("GanModel: z_id first in the generator input") {
  torch::NoGradGuard no_grad;
  auto m = testing::tiny_model(3, 0, 0);
  auto a = torch::randn({2, 64});
  auto b = torch::randn({2, 64});
  auto via_model = m.generate(a, b);
  auto direct = m.generator->forward(torch::cat({a, b}, 1));
  CHECK(torch::equal(via_model, direct));
  CHECK_THROWS_AS(m.generate(a, torch::randn({3, 64})), ShapeError);
}
