#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rvuda/error.hpp"
#include "rvuda/experiment.hpp"

namespace rvuda {

struct RunConfig {
  ExperimentConfig experiment;
  std::filesystem::path out_dir = "run";
  // Empty checkpoint means <out_dir>/model.ckpt.
  std::filesystem::path checkpoint;
  // Optional on-disk datasets (.bin + .label pairs); empty means synthesize.
  std::filesystem::path source_dir;
  std::filesystem::path target_dir;
  std::filesystem::path eval_dir;
  // Input for the project command; empty means the synthesized eval scenes.
  std::filesystem::path project_input;
  std::vector<uint64_t> ablate_seeds{1, 2, 3, 4, 5};
  bool ablate_include_naive = false;
  int ablate_threads = 1;
  int viz_scene = 0;

  std::filesystem::path checkpoint_path() const;
  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Applies `key = value` lines (with `#` comments) on top of `cfg`.
void apply_config_text(RunConfig& cfg, std::string_view text);
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Defaults, then the file (if any), then overrides in order.
RunConfig parse_config(const std::filesystem::path* path, const Overrides& overrides = {});

/// `key = value` lines for every key; parses back to the same config.
void write_config(std::ostream& out, const RunConfig& cfg);

/// Scene description in the same line format (sensor, ground, objects).
void write_scene_spec(std::ostream& out, const SceneSpec& spec);
SceneSpec parse_scene_spec(std::string_view text);

}  // namespace rvuda
