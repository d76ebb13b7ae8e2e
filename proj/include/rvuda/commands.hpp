#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "rvuda/config.hpp"

namespace rvuda {

/// Scans of a directory: every `*.bin` in name order, with the matching
/// `.label` attached when present (required if `labeled`).
std::vector<PointCloud> load_scan_dir(const std::filesystem::path& dir, bool labeled);

/// Source/target/eval datasets from the configured directories, or
/// synthesized from the configured sensors when none are given.
ExperimentData load_experiment_data(const RunConfig& cfg);

/// Model trained by cmd_train, restored from its checkpoint.
UdaModel<float> load_trained_model(const RunConfig& cfg);

/// Evaluation settings consistent with the training configuration.
EvalConfig eval_config(const RunConfig& cfg);

// Each command writes its artifacts under cfg.out_dir, reports progress on
// `out` and returns the process exit status. Failures throw rvuda::Error.
int cmd_synth(const RunConfig& cfg, std::ostream& out);
int cmd_project(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_ablate(const RunConfig& cfg, std::ostream& out);
int cmd_viz(const RunConfig& cfg, std::ostream& out);

}  // namespace rvuda
