#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "idgan/augmentation.hpp"
#include "idgan/data.hpp"
#include "idgan/errors.hpp"

using namespace idgan;
using testing::TempDir;

namespace {

LabeledImageDataset sprites(int64_t k = 3, int64_t per = 4) {
  return make_sprite_dataset(k, per, 8, 2).first;
}

torch::Tensor labels_range(int64_t n, int64_t k) {
  return torch::arange(n, torch::kInt64).remainder(k);
}

}  // namespace

TEST_CASE("depth: m images per subject, label space unchanged, input untouched") {
  auto m = testing::tiny_model(3);
  auto real = sprites();
  auto before = real.images().clone();
  auto a = augment_depth(real, m, 5, 11);
  CHECK(a.synthetic.size() == 15);
  CHECK(a.num_labels == 3);
  CHECK(a.synthetic.labels.bincount().equal(torch::full({3}, 5, torch::kInt64)));
  CHECK(a.synthetic.images.sizes() == torch::IntArrayRef{15, 3, 8, 8});
  CHECK(torch::equal(real.images(), before));
  CHECK(a.combined().size() == real.size() + 15);
  CHECK(a.synthetic.provenance.front().mode == "depth");

  auto none = augment_depth(real, m, 0, 11);
  CHECK(none.synthetic.size() == 0);
  CHECK(none.combined().size() == real.size());
  CHECK_THROWS_AS(augment_depth(real, m, -1, 11), ConfigError);
  auto other = testing::tiny_model(4);
  CHECK_THROWS_AS(augment_depth(real, other, 2, 11), ConfigError);
}

TEST_CASE("depth: deterministic for a fixed seed, different otherwise") {
  auto m = testing::tiny_model(3);
  auto real = sprites();
  auto a = augment_depth(real, m, 3, 5);
  auto b = augment_depth(real, m, 3, 5);
  auto c = augment_depth(real, m, 3, 6);
  CHECK(torch::equal(a.synthetic.images, b.synthetic.images));
  CHECK_FALSE(torch::equal(a.synthetic.images, c.synthetic.images));
  for (size_t i = 0; i < a.synthetic.provenance.size(); ++i) {
    CHECK(a.synthetic.provenance[i].latent_hash == b.synthetic.provenance[i].latent_hash);
  }
}

TEST_CASE("width: new labels K..K+W-1 with per_subject images each") {
  auto m = testing::tiny_model(3);
  auto real = sprites();
  auto a = augment_width(real, m, 4, 6, 9);
  CHECK(a.num_labels == 7);
  CHECK(a.label_names.size() == 7);
  CHECK(a.synthetic.size() == 24);
  CHECK(a.synthetic.labels.min().item<int64_t>() == 3);
  CHECK(a.synthetic.labels.max().item<int64_t>() == 6);
  CHECK(a.synthetic.labels.bincount().slice(0, 3).equal(torch::full({4}, 6, torch::kInt64)));
  std::set<std::string> names(a.label_names.begin(), a.label_names.end());
  CHECK(names.size() == 7);
  auto zero = augment_width(real, m, 0, 6, 9);
  CHECK(zero.synthetic.size() == 0);
  CHECK(zero.num_labels == 3);
  CHECK_THROWS_AS(augment_width(real, m, 2, 0, 9), ConfigError);
}

TEST_CASE("plan: validation and kind names") {
  CHECK(augmentation_kind_from("depth") == AugmentationKind::Depth);
  CHECK(augmentation_kind_from("width") == AugmentationKind::Width);
  CHECK_THROWS_AS(augmentation_kind_from("height"), ConfigError);
  auto p = AugmentationPlan::depth(3);
  p.num_new_subjects = 2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK_NOTHROW(AugmentationPlan::width(2, 3).validate());
}

TEST_CASE("partition: save and load round trip") {
  TempDir dir("partition");
  auto m = testing::tiny_model(3);
  auto real = sprites();
  auto a = augment_width(real, m, 2, 3, 4);
  save_synthetic_partition(a, dir.path());
  CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
  CHECK(std::filesystem::exists(dir / "plan.json"));
  auto back = load_augmented(real, dir.path());
  CHECK(back.num_labels == 5);
  CHECK(torch::equal(back.synthetic.labels, a.synthetic.labels));
  // PNG quantization bounds the difference.
  CHECK((back.synthetic.images - a.synthetic.images).abs().max().item<float>() <= 1.0f / 127.0f + 1e-6f);
  CHECK_THROWS_AS(load_augmented(real, dir / "missing"), DatasetError);
}

TEST_CASE("balanced batches: even and odd sizes split exactly") {
  auto real_x = torch::zeros({40, 3, 4, 4});
  auto synth_x = torch::ones({40, 3, 4, 4});
  for (int64_t b : {32, 33, 2, 3}) {
    BalancedBatchSampler s(real_x, labels_range(40, 4), synth_x, labels_range(40, 4), b, 1);
    for (int i = 0; i < 10; ++i) {
      auto batch = s.next();
      CHECK(batch.images.size(0) == b);
      CHECK(batch.num_real == (b + 1) / 2);
      CHECK(batch.num_synthetic == b / 2);
      // Real images are zeros, synthetic ones.
      CHECK(batch.images.sum().item<double>() == doctest::Approx(48.0 * (b / 2)));
    }
  }
  CHECK_THROWS_AS(BalancedBatchSampler(real_x, labels_range(40, 4), synth_x, labels_range(40, 4), 1, 1),
                  ConfigError);
}

TEST_CASE("balanced batches: one pass over the real partition without replacement") {
  testing::Gen g(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = g.integer(5, 60), b = g.integer(2, 12);
    auto x = torch::zeros({n, 3, 2, 2});
    BalancedBatchSampler s(x, labels_range(n, 3), torch::zeros({7, 3, 2, 2}), labels_range(7, 3), b,
                           static_cast<std::uint64_t>(trial));
    const int64_t per = (b + 1) / 2;
    while (static_cast<int64_t>(s.real_history().size()) < n) s.next();
    std::set<int64_t> seen(s.real_history().begin(), s.real_history().begin() + n);
    CHECK(static_cast<int64_t>(seen.size()) == n);
    CHECK(*seen.rbegin() == n - 1);
    CHECK(static_cast<int64_t>(s.real_history().size()) < n + per);
  }
}

TEST_CASE("balanced batches: empty partition falls back to the other") {
  auto x = torch::zeros({10, 3, 2, 2});
  BalancedBatchSampler s(x, labels_range(10, 2), torch::empty({0, 3, 2, 2}),
                         torch::empty({0}, torch::kInt64), 6, 3);
  auto batch = s.next();
  CHECK(batch.images.size(0) == 6);
  CHECK(batch.num_real == 6);
  CHECK(batch.num_synthetic == 0);
  CHECK_THROWS_AS(BalancedBatchSampler(torch::empty({0, 3, 2, 2}), torch::empty({0}, torch::kInt64),
                                       torch::empty({0, 3, 2, 2}), torch::empty({0}, torch::kInt64), 4, 1),
                  DatasetError);
}

TEST_CASE("balanced batches: same seed gives same stream") {
  auto m = testing::tiny_model(3);
  auto a = augment_depth(sprites(), m, 4, 1);
  auto s1 = balanced_batches(a, 8, 42);
  auto s2 = balanced_batches(a, 8, 42);
  for (int i = 0; i < 5; ++i) {
    auto x = s1.next(), y = s2.next();
    CHECK(torch::equal(x.images, y.images));
    CHECK(torch::equal(x.labels, y.labels));
  }
}
