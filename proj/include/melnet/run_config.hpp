#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "melnet/architecture.hpp"
#include "melnet/train.hpp"

namespace melnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A training run as described by a JSON document. See docs/config.md for
/// the schema. Relative paths resolve against the document's directory.
struct RunConfig {
  ArchSpec spec;
  TrainingConfig training;
  std::vector<std::string> class_names;
  std::filesystem::path train_manifest;
  std::optional<std::filesystem::path> val_manifest;
  std::filesystem::path output_dir;
};

/// Parses and validates a config document. Unknown keys, wrong types and
/// missing or unreadable input files raise ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace melnet
