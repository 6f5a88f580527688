#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "helpers.hpp"
#include "idgan/cli.hpp"
#include "idgan/errors.hpp"

using namespace idgan;
using namespace idgan::cli;
using testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tiny dataset plus a checkpoint trained on it, shared by the command tests.
struct Fixture {
  TempDir dir{"cli"};
  std::filesystem::path data = dir / "data";
  std::filesystem::path run = dir / "run";

  Fixture() {
    REQUIRE(run_command(make_config("make-sprites", std::nullopt,
                                    {"subjects=3", "per_subject=4", "resolution=8",
                                     "output=" + data.string()})) == 0);
    REQUIRE(run_command(make_config("train-gan", std::nullopt,
                                    {"dataset=" + data.string(), "resolution=8",
                                     "images_per_phase=16", "batch_size=4", "channels_base=8",
                                     "channels_min=8", "grid_subjects=2", "grid_samples=2",
                                     "seed=5", "output=" + run.string()})) == 0);
  }
};

}  // namespace

TEST_CASE("RunConfig: file values, overrides, comments") {
  TempDir dir("cfg");
  {
    std::ofstream out(dir / "a.cfg");
    out << "# toy\n"
        << "resolution = 16\n"
        << "lr=0.002   # inline\n"
        << "\n";
  }
  auto c = make_config("train-gan", dir / "a.cfg", {"resolution=32", "seed=9"});
  CHECK(c.integer("resolution") == 32);
  CHECK(c.real("lr", 0) == 0.002);
  CHECK(c.seed() == 9);
  CHECK(c.integer("batch_size", 16) == 16);
  CHECK(c.integers("grid_samples", {1, 2}) == std::vector<int64_t>{1, 2});
  CHECK_THROWS_WITH_AS(c.str("dataset"), doctest::Contains("dataset"), ConfigError);
  CHECK_THROWS_WITH_AS(make_config("train-gan", std::nullopt, {"bogus=1"}),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_AS(make_config("train-gan", std::nullopt, {"no-equals"}), ConfigError);
  {
    std::ofstream out(dir / "bad.cfg");
    out << "resolution = 16\n"
        << "garbage line\n";
  }
  CHECK_THROWS_WITH_AS(make_config("train-gan", dir / "bad.cfg", {}), doctest::Contains("2"),
                       ConfigError);
  CHECK_THROWS_AS(c.integer("lr"), ConfigError);
}

TEST_CASE("RunConfig: output root and snapshot") {
  TempDir dir("root");
  ::setenv(kOutputRootEnv, dir.path().c_str(), 1);
  auto c = make_config("generate", std::nullopt, {"output=runs/x", "mode=new"});
  CHECK(c.output_dir() == dir / "runs/x");
  auto abs = make_config("generate", std::nullopt, {"output=/tmp/abs"});
  CHECK(abs.output_dir() == std::filesystem::path("/tmp/abs"));
  ::unsetenv(kOutputRootEnv);

  c.write_snapshot(dir.path());
  auto text = slurp(dir / "config.resolved.cfg");
  CHECK(text.find("mode = new") != std::string::npos);
  auto again = make_config("generate", dir / "config.resolved.cfg", {});
  CHECK(again.values() == c.values());
}

TEST_CASE("commands: missing dataset key and unknown command map to exit 2") {
  TempDir dir("exit");
  CHECK(run_command(make_config("train-gan", std::nullopt, {"output=" + dir.path().string()})) == 2);
  CHECK(run_command(make_config("train-gan", std::nullopt,
                                {"dataset=" + (dir / "nope").string(),
                                 "output=" + dir.path().string()})) == 2);
  CHECK(run_command(RunConfig("fly", {})) == 2);
}

TEST_CASE("commands: train, generate, augment end to end") {
  Fixture f;
  CHECK(std::filesystem::exists(f.run / "final.idg"));
  CHECK(std::filesystem::exists(f.run / "metrics.csv"));
  CHECK(std::filesystem::exists(f.run / "config.resolved.cfg"));
  CHECK(std::filesystem::exists(f.run / "samples_stage1.png"));
  const auto ckpt = (f.run / "final.idg").string();

  auto gen = [&](const std::string& out, std::vector<std::string> extra) {
    extra.push_back("checkpoint=" + ckpt);
    extra.push_back("output=" + (f.dir / out).string());
    return run_command(make_config("generate", std::nullopt, extra));
  };
  REQUIRE(gen("existing", {"mode=existing", "label=0", "n=8"}) == 0);
  auto grid = cv::imread((f.dir / "existing/grid.png").string());
  CHECK(grid.rows == 8);
  CHECK(grid.cols == 64);
  REQUIRE(gen("interp", {"mode=interpolate", "steps=5"}) == 0);
  grid = cv::imread((f.dir / "interp/grid.png").string());
  CHECK(grid.rows == 40);
  CHECK(grid.cols == 40);
  REQUIRE(gen("new_a", {"mode=new", "n=4", "seed=3"}) == 0);
  REQUIRE(gen("new_b", {"mode=new", "n=4", "seed=3"}) == 0);
  CHECK(slurp(f.dir / "new_a/manifest.jsonl") == slurp(f.dir / "new_b/manifest.jsonl"));
  CHECK(gen("bad", {"mode=sideways"}) == 2);

  auto aug = [&](const std::string& out, std::vector<std::string> extra) {
    extra.push_back("checkpoint=" + ckpt);
    extra.push_back("dataset=" + f.data.string());
    extra.push_back("output=" + (f.dir / out).string());
    return run_command(make_config("augment", std::nullopt, extra));
  };
  CHECK(aug("nokind", {"m=2"}) == 2);
  REQUIRE(aug("depth_a", {"kind=depth", "m=2", "seed=1"}) == 0);
  REQUIRE(aug("depth_b", {"kind=depth", "m=2", "seed=1"}) == 0);
  CHECK(slurp(f.dir / "depth_a/manifest.jsonl") == slurp(f.dir / "depth_b/manifest.jsonl"));
  REQUIRE(aug("width", {"kind=width", "num_new=2", "per_subject=3"}) == 0);
  int pngs = 0;
  for (auto& e : std::filesystem::recursive_directory_iterator(f.dir / "width")) {
    pngs += e.path().extension() == ".png";
  }
  CHECK(pngs == 6);
}

TEST_CASE("commands: evaluate rejects empty and malformed protocols") {
  TempDir dir("evalcli");
  REQUIRE(run_command(make_config("make-sprites", std::nullopt,
                                  {"subjects=3", "per_subject=6", "resolution=16",
                                   "output=" + (dir / "data").string()})) == 0);
  REQUIRE(run_command(make_config("train-recognizer", std::nullopt,
                                  {"dataset=" + (dir / "data").string(), "epochs=1",
                                   "batch_size=8", "input_resolution=16", "base_width=4",
                                   "num_blocks=1", "feature_dim=8",
                                   "output=" + (dir / "rec").string()})) == 0);
  REQUIRE(run_command(make_config("make-sprites", std::nullopt,
                                  {"subjects=2", "per_subject=3", "resolution=16",
                                   "identity_offset=40", "output=" + (dir / "probe").string()})) == 0);
  REQUIRE(run_command(make_config("make-protocol", std::nullopt,
                                  {"dataset=" + (dir / "probe").string(), "genuine=4",
                                   "impostor=4", "output=" + (dir / "protocol.txt").string()})) == 0);
  std::ofstream(dir / "empty.txt") << "# nothing\n";
  std::ofstream(dir / "bad.txt") << "x.png y.png genuine\nx.png\n";
  auto eval = [&](const std::filesystem::path& protocol, const std::string& out) {
    return run_command(make_config("evaluate", std::nullopt,
                                   {"recognizer=" + (dir / "rec").string(),
                                    "protocol=" + protocol.string(),
                                    "output=" + (dir / out).string()}));
  };
  CHECK(eval(dir / "empty.txt", "e1") != 0);
  CHECK(eval(dir / "bad.txt", "e2") != 0);
  REQUIRE(eval(dir / "protocol.txt", "ok") == 0);
  auto report = slurp(dir / "ok/report.json");
  CHECK(report.find("\"tar\"") != std::string::npos);
}
