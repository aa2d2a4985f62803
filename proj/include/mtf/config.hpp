#pragma once

// Flat `key = value` run configuration. Every key has a typed default; unknown
// keys and duplicate keys are rejected. Any key may be overridden through the
// environment as MTF_<KEY> (upper case).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mtf/env.hpp"
#include "mtf/trainer.hpp"

namespace mtf {

inline constexpr std::string_view kToolVersion = "mtf 0.1.0";

/// Schema violations: unknown key, bad type, invariant broken.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The config file could not be opened or read.
struct ConfigFileError : ConfigError {
  using ConfigError::ConfigError;
};

struct RunConfig {
  WorldConfig world;
  PtmConfig ptm;
  std::size_t compare_batches = 30;
  std::size_t compare_sessions_per_batch = 200;

  const TrainConfig& train() const { return ptm.train; }
  TrainConfig& train() { return ptm.train; }

  void validate() const;
  /// One `key = value` line per key, in schema order.
  std::string serialize() const;
};

/// Names of every accepted key, in schema order.
std::vector<std::string> config_keys();

/// Parses config text; `origin` names the source in diagnostics.
RunConfig parse_config(std::string_view text, std::string_view origin = "<string>");

/// Applies MTF_<KEY> environment overrides.
void apply_env_overrides(RunConfig& config);

/// "default" yields the built-in defaults; otherwise the file at `path`.
/// Environment overrides are applied and the result validated.
RunConfig load_config(const std::string& path);

}  // namespace mtf
