#include "rvuda/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iomanip>
#include <thread>

namespace rvuda {

SceneSpec SensorSpec::scene(const SceneLayout& layout, uint64_t seed) const {
  SceneSpec spec;
  spec.beam_count = beam_count;
  spec.azimuth_steps = azimuth_steps;
  spec.fov_up_deg = fov_up_deg;
  spec.fov_down_deg = fov_down_deg;
  spec.max_range = max_range;
  spec.range_jitter_sigma = range_jitter_sigma;
  spec.seed = seed;
  spec.layout = layout;
  return spec;
}

SceneSpec experiment_scene(const DataConfig& cfg, const SensorSpec& sensor, int split, int index) {
  const uint64_t layout_seed = cfg.layout_seed * 1000003ull + static_cast<uint64_t>(split) * 100000ull + index;
  const uint64_t scan_seed = layout_seed ^ (static_cast<uint64_t>(sensor.beam_count) << 40);
  return sensor.scene(random_layout(layout_seed, cfg.layout), scan_seed);
}

ExperimentData build_experiment_data(const DataConfig& cfg, const ProjectionConfig& proj, int32_t ignore_label) {
  std::vector<PointCloud> source, target, eval;
  for (int i = 0; i < cfg.train_scenes; ++i) {
    source.push_back(synth_scene(experiment_scene(cfg, cfg.source, 0, i)));
    target.push_back(synth_scene(experiment_scene(cfg, cfg.target, 0, i)));
  }
  for (int i = 0; i < cfg.eval_scenes; ++i) eval.push_back(synth_scene(experiment_scene(cfg, cfg.target, 1, i)));
  return {make_dataset(std::move(source), proj, ignore_label), make_dataset(std::move(target), proj, ignore_label),
          make_dataset(std::move(eval), proj, ignore_label)};
}

std::vector<AblationVariant> standard_ablation() {
  return {{"RVIC", true, false, false}, {"RVIC+UMT", true, true, false}, {"RVIC+UMT+GA", true, true, true}};
}

AblationVariant naive_variant() { return {"Naive", false, false, false}; }

double run_variant(const ExperimentConfig& cfg, const ExperimentData& data, const AblationVariant& variant,
                   uint64_t seed, AblationRow* row, std::ostream* log) {
  TrainConfig train = cfg.train;
  train.enable_rvic = variant.rvic;
  train.enable_umt = variant.umt;
  train.enable_ga = variant.ga;
  train.seed = seed;
  ModelConfig model = cfg.model;
  model.seed = seed;
  TrainResult result = train_model(model, train, data.source_train, data.target_train, log);
  EvalConfig eval = cfg.eval;
  eval.ga_enabled = variant.ga;
  eval.ignore_class = train.ignore_class;
  eval.normalization = train.normalization;
  const double miou = evaluate_target(result.model, data.target_eval, eval).miou(eval.absent_policy);
  if (row) {
    row->counters.rvic_splits += result.counters.rvic_splits;
    row->counters.densify_calls += result.counters.densify_calls;
    row->counters.mask_transfers += result.counters.mask_transfers;
    row->counters.skipped_supervised += result.counters.skipped_supervised;
    row->ga_invocations += result.model.ga_invocations();
  }
  return miou;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const ExperimentData& data,
                                      std::span<const AblationVariant> variants, std::span<const uint64_t> seeds,
                                      std::ostream* log, int threads) {
  const size_t jobs = variants.size() * seeds.size();
  std::vector<AblationRow> per_job(jobs);
  std::vector<double> miou(jobs, 0.0);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t j = next++; j < jobs; j = next++) {
      try {
        miou[j] = run_variant(cfg, data, variants[j / seeds.size()], seeds[j % seeds.size()], &per_job[j]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const size_t workers = std::min<size_t>(jobs, static_cast<size_t>(std::max(1, threads)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<AblationRow> rows;
  for (size_t v = 0; v < variants.size(); ++v) {
    AblationRow row;
    row.variant = variants[v];
    for (size_t s = 0; s < seeds.size(); ++s) {
      const size_t j = v * seeds.size() + s;
      row.miou.push_back(miou[j]);
      row.counters.rvic_splits += per_job[j].counters.rvic_splits;
      row.counters.densify_calls += per_job[j].counters.densify_calls;
      row.counters.mask_transfers += per_job[j].counters.mask_transfers;
      row.counters.skipped_supervised += per_job[j].counters.skipped_supervised;
      row.ga_invocations += per_job[j].ga_invocations;
      if (log) {
        *log << row.variant.name << " seed " << seeds[s] << " miou " << std::fixed << std::setprecision(2)
             << miou[j] << '\n';
        log->unsetf(std::ios::fixed);
      }
    }
    double sum = 0.0;
    for (double m : row.miou) sum += m;
    row.mean = row.miou.empty() ? 0.0 : sum / static_cast<double>(row.miou.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(std::ostream& out, std::span<const AblationRow> rows) {
  out << std::left << std::setw(16) << "Method" << "mIoU\n";
  for (const AblationRow& row : rows) {
    out << std::left << std::setw(16) << row.variant.name << std::fixed << std::setprecision(2) << row.mean << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace rvuda
