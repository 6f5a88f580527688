#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace idgan::cli {

inline constexpr const char* kOutputRootEnv = "IDGAN_OUTPUT_ROOT";

/// Flat key=value settings for one command, read from a config file and
/// overridden by `--set key=value` flags.
class RunConfig {
 public:
  RunConfig() = default;
  RunConfig(std::string command, std::set<std::string> allowed);

  /// Parses `key = value` lines; `#` starts a comment. Throws ConfigError on
  /// malformed lines and unknown keys (naming file, line and key).
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// `key=value` form used by --set.
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& command() const { return command_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Typed getters. Required ones throw ConfigError naming the key.
  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  int64_t integer(const std::string& key) const;
  int64_t integer(const std::string& key, int64_t fallback) const;
  double real(const std::string& key, double fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::uint64_t seed() const;
  std::vector<int64_t> integers(const std::string& key, std::vector<int64_t> fallback) const;
  std::filesystem::path path(const std::string& key) const;

  /// `output` resolved against $IDGAN_OUTPUT_ROOT when it is relative.
  std::filesystem::path output_dir() const;

  /// Writes every resolved key to `dir/config.resolved.cfg`, sorted.
  void write_snapshot(const std::filesystem::path& dir) const;

 private:
  void check_key(const std::string& key) const;

  std::string command_;
  std::set<std::string> allowed_;
  std::map<std::string, std::string> values_;
};

/// Keys each subcommand accepts.
const std::set<std::string>& allowed_keys(const std::string& command);

int cmd_train_gan(const RunConfig& config);
int cmd_generate(const RunConfig& config);
int cmd_augment(const RunConfig& config);
int cmd_train_recognizer(const RunConfig& config);
int cmd_evaluate(const RunConfig& config);
int cmd_make_sprites(const RunConfig& config);
int cmd_make_protocol(const RunConfig& config);

/// Dispatches by command name; maps ConfigError to 2 and other failures to 1.
int run_command(const RunConfig& config);

/// Builds a RunConfig the way the executable does: file first, then overrides.
RunConfig make_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& assignments);

}  // namespace idgan::cli
