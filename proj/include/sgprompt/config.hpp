#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sgprompt/pretrain.hpp"
#include "sgprompt/prompt.hpp"
#include "sgprompt/task.hpp"

namespace sgprompt {

/// One downstream setting: task level with its shot count.
struct Setting {
  TaskLevel level = TaskLevel::Node;
  std::size_t k = 1;

  bool operator==(const Setting&) const = default;
};

struct ExperimentConfig {
  std::string dataset = "ENZYMES";
  std::filesystem::path data_dir = "data";
  PretrainConfig pretrain;
  std::vector<PromptMode> prompt_modes{PromptMode::Single};
  std::vector<Setting> settings{{TaskLevel::Node, 1}};
  std::size_t num_tasks = 10;
  std::size_t query_per_class = 10;
  TuneConfig tune;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

/// Flat key=value text, one pair per line, '#' starts a comment. Duplicate
/// keys and lines without '=' are errors.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_key_values(const std::filesystem::path& path);

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Applies key/value pairs on top of `base`. Unknown keys raise one
/// ConfigError listing all of them; bad values name their key.
ExperimentConfig apply_key_values(ExperimentConfig base, const KeyValues& kv);

/// The effective configuration as key=value lines, in config_keys() order.
std::string describe(const ExperimentConfig& cfg);

}  // namespace sgprompt
