#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "idgan/cli.hpp"
#include "idgan/errors.hpp"

namespace fs = std::filesystem;

namespace idgan::cli {

namespace {

std::string trim(const std::string& s) {
  auto begin = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto end = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
  return begin < end.base() ? std::string(begin, end.base()) : std::string();
}

const std::set<std::string> kCommon{"seed", "output", "deterministic"};

std::set<std::string> with_common(std::set<std::string> keys) {
  keys.insert(kCommon.begin(), kCommon.end());
  return keys;
}

}  // namespace

const std::set<std::string>& allowed_keys(const std::string& command) {
  static const std::map<std::string, std::set<std::string>> table{
      {"train-gan",
       with_common({"dataset", "resolution", "images_per_phase", "batch_size", "lr", "beta1",
                    "beta2", "lambda_gp", "lambda_e", "alpha", "beta", "gamma", "drift",
                    "channels_base", "channels_min", "latent_hidden_width", "checkpoint_every",
                    "max_steps", "resume", "max_nonfinite_steps", "grid_subjects",
                    "grid_samples"})},
      {"generate",
       with_common({"checkpoint", "mode", "label", "n", "steps", "label_b"})},
      {"augment",
       with_common({"checkpoint", "dataset", "kind", "m", "num_new", "per_subject"})},
      {"train-recognizer",
       with_common({"dataset", "synthetic", "epochs", "batch_size", "lr", "momentum",
                    "weight_decay", "patience", "validation_fraction", "input_resolution",
                    "base_width", "num_blocks", "feature_dim"})},
      {"evaluate", with_common({"recognizer", "protocol", "far"})},
      {"make-sprites",
       with_common({"subjects", "per_subject", "resolution", "identity_offset"})},
      {"make-protocol", with_common({"dataset", "genuine", "impostor"})},
      {"accept", with_common({"criteria", "toy_images_per_phase", "toy_gamma"})},
  };
  auto it = table.find(command);
  if (it == table.end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

RunConfig::RunConfig(std::string command, std::set<std::string> allowed)
    : command_(std::move(command)), allowed_(std::move(allowed)) {}

void RunConfig::check_key(const std::string& key) const {
  if (!allowed_.empty() && !allowed_.count(key)) {
    throw ConfigError("unknown config key '" + key + "' for command " + command_);
  }
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(number) + ": empty key");
    check_key(key);
    values_[key] = value;
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  check_key(key);
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) {
    throw ConfigError("missing required config key '" + key + "'");
  }
  return it->second;
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t RunConfig::integer(const std::string& key) const {
  const auto text = str(key);
  try {
    size_t used = 0;
    auto v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + text + "'");
  }
}

int64_t RunConfig::integer(const std::string& key, int64_t fallback) const {
  return has(key) ? integer(key) : fallback;
}

double RunConfig::real(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto text = str(key);
  try {
    size_t used = 0;
    auto v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + text + "'");
  }
}

bool RunConfig::flag(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto v = str(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
  const auto v = integer("seed", 0);
  if (v < 0) throw ConfigError("config key 'seed' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

std::vector<int64_t> RunConfig::integers(const std::string& key,
                                         std::vector<int64_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int64_t> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects comma-separated integers");
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

fs::path RunConfig::path(const std::string& key) const {
  fs::path p = str(key);
  if (!fs::exists(p)) throw ConfigError("path for config key '" + key + "' does not exist: " + p.string());
  return p;
}

fs::path RunConfig::output_dir() const {
  fs::path out = str("output");
  if (out.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = fs::path(root) / out;
  }
  return out;
}

void RunConfig::write_snapshot(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.resolved.cfg", std::ios::trunc);
  if (!out) throw Error("cannot write config snapshot in " + dir.string());
  out << "# " << command_ << "\n";
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
}

RunConfig make_config(const std::string& command, const std::optional<fs::path>& file,
                      const std::vector<std::string>& assignments) {
  RunConfig config(command, allowed_keys(command));
  if (file) config.load_file(*file);
  for (const auto& a : assignments) config.set_assignment(a);
  return config;
}

}  // namespace idgan::cli
