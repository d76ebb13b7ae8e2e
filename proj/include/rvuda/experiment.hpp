#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rvuda/uda_pipeline.hpp"

namespace rvuda {

/// Sensor description; the layout part of SceneSpec is filled per scene.
struct SensorSpec {
  int beam_count = 64;
  int azimuth_steps = 2048;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  double max_range = 60.0;
  double range_jitter_sigma = 0.0;

  SceneSpec scene(const SceneLayout& layout, uint64_t seed) const;
};

struct DataConfig {
  SensorSpec source{64, 2048, 3.0, -25.0, 60.0, 0.0};
  SensorSpec target{32, 1024, 10.0, -30.0, 60.0, 0.0};
  int train_scenes = 32;
  int eval_scenes = 8;
  uint64_t layout_seed = 7;
  LayoutOptions layout;
};

/// Source and target training sets share layouts (same streets seen by both
/// sensors); the target evaluation set uses held-out layouts.
struct ExperimentData {
  Dataset source_train;
  Dataset target_train;
  Dataset target_eval;
};

/// Scene i of split `split` (0 train, 1 eval) as seen by `sensor`.
SceneSpec experiment_scene(const DataConfig& cfg, const SensorSpec& sensor, int split, int index);

ExperimentData build_experiment_data(const DataConfig& cfg, const ProjectionConfig& proj, int32_t ignore_label);

struct AblationVariant {
  std::string name;
  bool rvic = true;
  bool umt = true;
  bool ga = true;
};

/// The three incremental rows: RVIC, RVIC+UMT, RVIC+UMT+GA.
std::vector<AblationVariant> standard_ablation();
/// Source-only training with every adaptation module off.
AblationVariant naive_variant();

struct AblationRow {
  AblationVariant variant;
  std::vector<double> miou;  // one entry per seed
  double mean = 0.0;
  PipelineCounters counters;  // summed over seeds
  uint64_t ga_invocations = 0;
};

struct ExperimentConfig {
  DataConfig data;
  ProjectionConfig proj;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

/// Trains and evaluates one model for `variant` with the given seed.
double run_variant(const ExperimentConfig& cfg, const ExperimentData& data, const AblationVariant& variant,
                   uint64_t seed, AblationRow* row = nullptr, std::ostream* log = nullptr);

/// Trains every variant for every seed from identical data and seeds. Runs
/// are independent, so up to `threads` of them train concurrently; results
/// and log lines do not depend on the thread count.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const ExperimentData& data,
                                      std::span<const AblationVariant> variants, std::span<const uint64_t> seeds,
                                      std::ostream* log = nullptr, int threads = 1);

void write_ablation_table(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace rvuda
