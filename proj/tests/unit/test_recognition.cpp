#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "idgan/data.hpp"
#include "idgan/errors.hpp"
#include "idgan/recognition.hpp"

using namespace idgan;
using testing::TempDir;

namespace {

// Sweep every observed score as a threshold, keep the smallest admissible one.
TarAtFar sweep(const std::vector<double>& gen, const std::vector<double>& imp, double far) {
  std::vector<double> candidates(gen);
  candidates.insert(candidates.end(), imp.begin(), imp.end());
  bool found = false;
  TarAtFar best;
  for (double t : candidates) {
    double above = 0;
    for (double s : imp) above += s > t;
    if (above / static_cast<double>(imp.size()) > far) continue;
    if (found && t >= best.threshold) continue;
    found = true;
    best.threshold = t;
  }
  double acc = 0;
  for (double s : gen) acc += s > best.threshold;
  best.tar = acc / static_cast<double>(gen.size());
  return best;
}

RecognizerConfig small_config() {
  RecognizerConfig c;
  c.network.input_resolution = 16;
  c.network.base_width = 8;
  c.network.num_blocks = 2;
  c.network.feature_dim = 16;
  c.epochs = 5;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.seed = 2;
  return c;
}

}  // namespace

TEST_CASE("tar_at_far: worked example") {
  std::vector<double> g{0.9, 0.7, 0.4}, i{0.8, 0.3, 0.2, 0.1};
  auto r = tar_at_far(g, i, 0.25);
  CHECK(r.threshold == 0.3);
  CHECK(r.tar == 1.0);
}

TEST_CASE("tar_at_far: separable lists give full acceptance at tiny far") {
  std::vector<double> g{0.6, 0.7, 0.9}, i{-0.2, 0.1, 0.5};
  auto r = tar_at_far(g, i, 1e-9);
  CHECK(r.threshold == 0.5);
  CHECK(r.tar == 1.0);
}

TEST_CASE("tar_at_far: identical lists accept no more than far allows") {
  testing::Gen gen(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s(gen.integer(1, 50));
    for (auto& v : s) v = gen.real(-1, 1);
    const double far = gen.real(0.01, 0.99);
    CHECK(tar_at_far(s, s, far).tar <= far);
  }
}

TEST_CASE("tar_at_far: errors") {
  std::vector<double> one{0.5}, none;
  CHECK_THROWS_AS(tar_at_far(none, one, 0.1), ConfigError);
  CHECK_THROWS_AS(tar_at_far(one, none, 0.1), ConfigError);
  CHECK_THROWS_AS(tar_at_far(one, one, 0.0), ConfigError);
  CHECK_THROWS_AS(tar_at_far(one, one, 1.0), ConfigError);
}

TEST_CASE("tar_at_far: matches a brute-force sweep, is monotone and order-invariant") {
  testing::Gen gen(12);
  std::mt19937_64 shuffler(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(gen.integer(1, 100)), i(gen.integer(1, 100));
    const bool ties = trial % 3 == 0;
    auto draw = [&] { return ties ? gen.integer(-4, 4) / 4.0 : gen.real(-1, 1); };
    for (auto& v : g) v = draw();
    for (auto& v : i) v = draw();
    const double far = gen.real(0.001, 0.9);
    auto got = tar_at_far(g, i, far);
    auto want = sweep(g, i, far);
    CHECK(got.threshold == want.threshold);
    CHECK(got.tar == want.tar);
    CHECK(tar_at_far(g, i, std::min(0.999, far * 1.5)).tar >= got.tar);
    std::shuffle(g.begin(), g.end(), shuffler);
    std::shuffle(i.begin(), i.end(), shuffler);
    auto again = tar_at_far(g, i, far);
    CHECK(again.tar == got.tar);
    CHECK(again.threshold == got.threshold);
  }
}

TEST_CASE("recognizer: learns sprites above chance, features are unit vectors") {
  auto data = make_sprite_dataset(6, 12, 16, 3).first;
  auto model = train_recognizer(data, small_config());
  CHECK(model.history.size() == 5);
  CHECK(model.history.back().train_accuracy > 1.0 / 6.0);
  CHECK(model.subject_names == data.subject_names());

  auto f = extract_features(model, data.images().slice(0, 0, 10));
  CHECK(f.sizes() == torch::IntArrayRef{10, 16});
  CHECK((f.norm(2, 1) - 1).abs().max().item<double>() < 1e-6);
  auto again = extract_features(model, data.images().slice(0, 0, 10));
  CHECK(torch::equal(f, again));
  CHECK((f * again).sum(1).sub(1).abs().max().item<double>() < 1e-6);

  TempDir dir("recognizer");
  save_recognizer(model, dir.path());
  auto back = load_recognizer(dir.path());
  CHECK(back.subject_names == model.subject_names);
  CHECK(torch::allclose(extract_features(back, data.images().slice(0, 0, 10)), f, 1e-6, 1e-6));
  CHECK_THROWS_AS(load_recognizer(dir / "missing"), Error);
}

TEST_CASE("recognizer: single identity and bad configs rejected") {
  auto one = LabeledImageDataset::from_tensors(torch::zeros({4, 3, 16, 16}),
                                               torch::zeros({4}, torch::kInt64), 1);
  CHECK_THROWS_AS(train_recognizer(one, small_config()), ConfigError);
  auto c = small_config();
  c.validation_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("protocol: parsing, comments, line-numbered errors") {
  TempDir dir("protocol");
  {
    std::ofstream out(dir / "p.txt");
    out << "# header\n"
        << "a/1.png a/2.png genuine\n"
        << "\n"
        << "a/1.png b/1.png impostor  # trailing\n";
  }
  auto p = read_protocol(dir / "p.txt");
  REQUIRE(p.pairs.size() == 2);
  CHECK(p.pairs[0].genuine);
  CHECK_FALSE(p.pairs[1].genuine);
  CHECK(p.pairs[1].b == dir / "b/1.png");

  {
    std::ofstream out(dir / "bad.txt");
    out << "a/1.png a/2.png genuine\n"
        << "a/1.png a/2.png maybe\n";
  }
  CHECK_THROWS_WITH_AS(read_protocol(dir / "bad.txt"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_AS(read_protocol(dir / "absent.txt"), Error);

  write_protocol(p, dir / "copy.txt");
  auto q = read_protocol(dir / "copy.txt");
  REQUIRE(q.pairs.size() == 2);
  CHECK(q.pairs[0].a == p.pairs[0].a);
  CHECK(q.pairs[1].genuine == p.pairs[1].genuine);
}

TEST_CASE("evaluate_verification: overlap, missing pair kinds, order invariance") {
  TempDir dir("verify");
  auto train_set = make_sprite_dataset(4, 10, 16, 3).first;
  auto model = train_recognizer(train_set, small_config());

  SpriteOptions o;
  o.num_subjects = 3;
  o.images_per_subject = 5;
  o.resolution = 16;
  o.seed = 9;
  o.identity_offset = 50;
  save_image_folder(make_sprite_dataset(o).first, dir / "probe");
  auto protocol = make_protocol(dir / "probe", 12, 12, 1);
  auto report = evaluate_verification(model, protocol);
  CHECK(report.genuine_pairs == 12);
  CHECK(report.impostor_pairs == 12);
  CHECK(report.tar >= 0.0);
  CHECK(report.tar <= 1.0);
  CHECK(report.bin_edges.size() == report.genuine_histogram.size() + 1);

  auto shuffled = protocol;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.pairs.begin(), shuffled.pairs.end(), rng);
  auto r2 = evaluate_verification(model, shuffled);
  CHECK(r2.tar == report.tar);
  CHECK(r2.threshold == report.threshold);

  auto only_genuine = protocol;
  std::erase_if(only_genuine.pairs, [](const VerificationPair& p) { return !p.genuine; });
  CHECK_THROWS_AS(evaluate_verification(model, only_genuine), ConfigError);

  save_image_folder(train_set, dir / "train");
  auto overlapping = make_protocol(dir / "train", 4, 4, 1);
  CHECK_THROWS_WITH_AS(evaluate_verification(model, overlapping), doctest::Contains("overlap"),
                       ConfigError);
}
