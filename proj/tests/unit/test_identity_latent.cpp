#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "idgan/errors.hpp"
#include "idgan/identity_latent.hpp"
#include "idgan/random.hpp"

using namespace idgan;

TEST_CASE("embedding: deterministic per label, 64-wide, finite at init") {
  torch::manual_seed(0);
  IdentityEmbedding e(EmbeddingOptions{5});
  auto [mu, lv] = e->forward(torch::tensor({0, 1, 0, 3, 3}, torch::kInt64));
  CHECK(mu.sizes() == torch::IntArrayRef{5, 64});
  CHECK(lv.sizes() == torch::IntArrayRef{5, 64});
  CHECK(torch::equal(mu[0], mu[2]));
  CHECK(torch::equal(lv[3], lv[4]));
  CHECK(torch::isfinite(lv).all().item<bool>());
  // Initial sigma close to 1.
  CHECK(lv.abs().max().item<double>() < 1.0);

  auto [mu2, lv2] = e->forward(torch::tensor({3}, torch::kInt64));
  // A single-row batch takes a different BLAS path, so compare with a tolerance.
  CHECK(torch::allclose(mu2[0], mu[3], 1e-6, 1e-6));
  CHECK(torch::allclose(lv2[0], lv[3], 1e-6, 1e-6));
}

TEST_CASE("embedding: out-of-range labels throw") {
  IdentityEmbedding e(EmbeddingOptions{3});
  CHECK_THROWS_AS(e->forward(torch::tensor({3}, torch::kInt64)), IndexError);
  CHECK_THROWS_AS(e->forward(torch::tensor({-1}, torch::kInt64)), IndexError);
}

TEST_CASE("reparameterize: special cases") {
  auto gen = make_generator(1);
  auto mu = torch::randn({4, 64}, gen);
  auto noise = torch::randn({4, 64}, gen);
  auto z = reparameterize(mu, torch::full({4, 64}, -INFINITY), noise);
  CHECK(torch::equal(z, mu));
  CHECK(torch::equal(reparameterize(torch::zeros({4, 64}), torch::zeros({4, 64}), noise), noise));
  CHECK_THROWS_AS(reparameterize(mu, torch::zeros({4, 63}), noise), ShapeError);
}

TEST_CASE("reparameterize: Monte-Carlo moments at mu 1, sigma 2") {
  const int64_t n = 100000;
  auto gen = make_generator(2);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto z = reparameterize(torch::ones({n, 1}, opts), torch::full({n, 1}, std::log(4.0), opts),
                          torch::randn({n, 1}, gen, opts));
  const double se_mean = 2.0 / std::sqrt(double(n));
  const double se_var = 4.0 * std::sqrt(2.0 / double(n - 1));
  CHECK(std::abs(z.mean().item<double>() - 1.0) < 5 * se_mean);
  CHECK(std::abs(z.var().item<double>() - 4.0) < 5 * se_var);
}

TEST_CASE("reparameterize: dz/dmu is the identity (finite differences)") {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto gen = make_generator(3);
  auto mu = torch::randn({1, 64}, gen, opts);
  auto lv = torch::randn({1, 64}, gen, opts);
  auto noise = torch::randn({1, 64}, gen, opts);
  const double h = 1e-6;
  for (int64_t j : {0, 17, 63}) {
    auto up = mu.clone();
    auto down = mu.clone();
    up[0][j] += h;
    down[0][j] -= h;
    auto col = (reparameterize(up, lv, noise) - reparameterize(down, lv, noise)) / (2 * h);
    auto expect = torch::zeros({1, 64}, opts);
    expect[0][j] = 1.0;
    CHECK(torch::allclose(col, expect, 1e-8, 1e-8));
  }
}

TEST_CASE("sample_prior: deterministic and standard normal") {
  CHECK(torch::equal(sample_prior(4, 0), sample_prior(4, 0)));
  CHECK_FALSE(torch::equal(sample_prior(4, 0), sample_prior(4, 1)));
  auto z = sample_prior(100000, 9).to(torch::kFloat64);
  const double n = 100000;
  auto mean = z.mean(0);
  auto var = z.var(0);
  CHECK(mean.abs().max().item<double>() < 5.0 / std::sqrt(n));
  CHECK((var - 1.0).abs().max().item<double>() < 5.0 * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("latent critic: unbounded scalar per row") {
  torch::manual_seed(4);
  LatentCritic c;
  auto out = c->forward(torch::randn({7, 64}) * 50);
  CHECK(out.sizes() == torch::IntArrayRef{7});
  CHECK(out.abs().max().item<double>() > 1.0);
}

TEST_CASE("latent penalty: unit and slope-2 linear critics") {
  auto gen = make_generator(5);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto embedded = torch::randn({8, 64}, gen, opts);
  auto prior = torch::randn({8, 64}, gen, opts);
  auto t = torch::rand({8}, gen, opts);
  auto w = torch::randn({64}, gen, opts);
  w = w / w.norm();
  auto unit = [&](const torch::Tensor& v) { return v.matmul(w); };
  auto slope2 = [&](const torch::Tensor& v) { return 2 * v.select(1, 0); };
  auto r1 = latent_adversarial_loss(unit, embedded, prior, t, 10.0);
  auto r2 = latent_adversarial_loss(slope2, embedded, prior, t, 10.0);
  CHECK(std::abs(r1.penalty.item<double>()) < 1e-6);
  CHECK(r2.penalty.item<double>() == doctest::Approx(10.0).epsilon(1e-12));
  // critic = mean D(E) − mean D(prior) + penalty; embedder = −mean D(E).
  const double expect = unit(embedded).mean().item<double>() - unit(prior).mean().item<double>();
  CHECK(r1.critic.item<double>() == doctest::Approx(expect).epsilon(1e-9));
  CHECK(r1.embedder.item<double>() == doctest::Approx(-unit(embedded).mean().item<double>()));
}

TEST_CASE("latent embedder loss: table gradients match finite differences (3 labels)") {
  torch::manual_seed(6);
  IdentityEmbedding e(EmbeddingOptions{3});
  LatentCritic c;
  e->to(torch::kFloat64);
  c->to(torch::kFloat64);
  auto gen = make_generator(6);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto labels = torch::tensor({0, 1, 2, 1}, torch::kInt64);
  auto noise = torch::randn({4, 64}, gen, opts);
  auto prior = torch::randn({4, 64}, gen, opts);
  auto t = torch::rand({4}, gen, opts);
  auto loss = [&] { return latent_adversarial_loss(e, c, labels, noise, prior, t, 10.0).embedder; };

  torch::Tensor table;
  for (auto& p : e->named_parameters()) {
    if (p.key().find("table") != std::string::npos) table = p.value();
  }
  REQUIRE(table.defined());
  table.mutable_grad() = torch::Tensor();
  loss().backward();
  auto analytic = table.grad().clone();
  double* data = table.data_ptr<double>();
  double worst = 0;
  const double h = 1e-6;
  for (int64_t i = 0; i < table.numel(); ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double up = loss().item<double>();
    data[i] = saved - h;
    const double down = loss().item<double>();
    data[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic.reshape({-1})[i].item<double>();
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-7}));
  }
  CHECK(worst < 1e-3);
}
