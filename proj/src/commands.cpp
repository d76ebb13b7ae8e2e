#include "rvuda/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rvuda {

namespace fs = std::filesystem;

namespace {

// Copies everything written to two stream buffers.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int ch) override {
    if (ch == traits_type::eof()) return traits_type::not_eof(ch);
    const auto c = traits_type::to_char_type(ch);
    if (a_->sputc(c) == traits_type::eof() || b_->sputc(c) == traits_type::eof()) return traits_type::eof();
    return ch;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    if (a_->sputn(s, n) != n || b_->sputn(s, n) != n) return 0;
    return n;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  return out;
}

std::string scan_name(size_t index) {
  std::string s = std::to_string(index);
  return s.size() < 6 ? std::string(6 - s.size(), '0') + s : s;
}

std::string fixed2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::vector<PointCloud> synthesize(const DataConfig& data, const SensorSpec& sensor, int split, int count) {
  std::vector<PointCloud> clouds;
  for (int i = 0; i < count; ++i) clouds.push_back(synth_scene(experiment_scene(data, sensor, split, i)));
  return clouds;
}

void write_scan_set(const fs::path& dir, const DataConfig& data, const SensorSpec& sensor, int split, int count) {
  make_dirs(dir);
  for (int i = 0; i < count; ++i) {
    const SceneSpec spec = experiment_scene(data, sensor, split, i);
    const PointCloud cloud = synth_scene(spec);
    const std::string stem = scan_name(static_cast<size_t>(i));
    save_point_cloud(cloud, dir / (stem + ".bin"));
    save_labels(cloud, dir / (stem + ".label"));
    auto out = open_text(dir / (stem + ".scene"));
    write_scene_spec(out, spec);
  }
}

RangeView project_view(const PointCloud& cloud, const RunConfig& cfg) {
  return project(cloud, cfg.experiment.proj, cfg.experiment.train.ignore_class);
}

std::vector<int32_t> predict_pixels(const UdaModel<float>& model, const RangeView& rv, const EvalConfig& eval) {
  ad::NoGradGuard no_grad;
  const RangeView* views[] = {&rv};
  const RvBatch batch = make_batch(views, eval.normalization, eval.ignore_class);
  return argmax_labels(model.forward_seg(batch.images, eval.ga_enabled), 0);
}

std::vector<double> as_field(std::span<const int32_t> labels) { return {labels.begin(), labels.end()}; }

}  // namespace

std::vector<PointCloud> load_scan_dir(const fs::path& dir, bool labeled) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(Errc::io, "not a directory: " + dir.string());
  std::vector<fs::path> bins;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".bin") bins.push_back(entry.path());
  std::sort(bins.begin(), bins.end());
  if (bins.empty()) throw Error(Errc::empty_input, "no .bin scans in " + dir.string());
  std::vector<PointCloud> clouds;
  for (const fs::path& bin : bins) {
    PointCloud cloud = load_point_cloud(bin);
    fs::path label = bin;
    label.replace_extension(".label");
    if (fs::exists(label)) cloud = load_labels(label, std::move(cloud));
    else if (labeled) throw Error(Errc::missing_required, "missing labels " + label.string());
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

ExperimentData load_experiment_data(const RunConfig& cfg) {
  const ExperimentConfig& ex = cfg.experiment;
  if (cfg.source_dir.empty()) return build_experiment_data(ex.data, ex.proj, ex.train.ignore_class);
  const int32_t ignore = ex.train.ignore_class;
  return {make_dataset(load_scan_dir(cfg.source_dir, true), ex.proj, ignore),
          make_dataset(load_scan_dir(cfg.target_dir, false), ex.proj, ignore),
          make_dataset(load_scan_dir(cfg.eval_dir, true), ex.proj, ignore)};
}

UdaModel<float> load_trained_model(const RunConfig& cfg) {
  const fs::path path = cfg.checkpoint_path();
  if (!fs::exists(path)) throw Error(Errc::io, "checkpoint not found: " + path.string() + " (run train first)");
  auto model = UdaModel<float>::init(cfg.experiment.model);
  load_checkpoint(model, path);
  return model;
}

EvalConfig eval_config(const RunConfig& cfg) {
  EvalConfig eval = cfg.experiment.eval;
  eval.ga_enabled = cfg.experiment.train.enable_ga;
  eval.ignore_class = cfg.experiment.train.ignore_class;
  eval.normalization = cfg.experiment.train.normalization;
  return eval;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const DataConfig& data = cfg.experiment.data;
  const fs::path root = cfg.out_dir / "data";
  write_scan_set(root / "source", data, data.source, 0, data.train_scenes);
  write_scan_set(root / "target", data, data.target, 0, data.train_scenes);
  write_scan_set(root / "eval", data, data.target, 1, data.eval_scenes);
  out << "wrote " << data.train_scenes << " source, " << data.train_scenes << " target and " << data.eval_scenes
      << " eval scans to " << root.string() << "\n";
  return 0;
}

int cmd_project(const RunConfig& cfg, std::ostream& out) {
  std::vector<PointCloud> clouds;
  if (cfg.project_input.empty()) {
    const DataConfig& data = cfg.experiment.data;
    clouds = synthesize(data, data.target, 1, data.eval_scenes);
  } else {
    clouds = load_scan_dir(cfg.project_input, false);
  }
  const fs::path dir = cfg.out_dir / "projected";
  make_dirs(dir);
  for (size_t i = 0; i < clouds.size(); ++i) {
    const RangeView rv = project_view(clouds[i], cfg);
    const std::string stem = scan_name(i);
    save_range_view(rv, dir / (stem + ".rv"));
    std::vector<double> range(rv.pixels());
    for (int r = 0; r < rv.h; ++r)
      for (int c = 0; c < rv.w; ++c) range[static_cast<size_t>(r) * rv.w + c] = rv.range(r, c);
    render_ppm(range, rv.h, rv.w, PaletteMode::scalar, dir / (stem + "_range.ppm"), rv.mask);
    if (rv.label_image)
      render_ppm(as_field(*rv.label_image), rv.h, rv.w, PaletteMode::label, dir / (stem + "_label.ppm"), rv.mask);
  }
  out << "projected " << clouds.size() << " scans to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  make_dirs(cfg.out_dir);
  {
    auto resolved = open_text(cfg.out_dir / "config.txt");
    write_config(resolved, cfg);
  }
  auto log_file = open_text(cfg.out_dir / "train.log");
  TeeBuf tee(out.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);

  const ExperimentData data = load_experiment_data(cfg);
  const ExperimentConfig& ex = cfg.experiment;
  TrainResult result = train_model(ex.model, ex.train, data.source_train, data.target_train, &log);
  save_checkpoint(result.model, result.optimizer.step_count(), cfg.checkpoint_path());

  const EvalConfig eval = eval_config(cfg);
  const ConfusionMatrix cm = evaluate_target(result.model, data.target_eval, eval);
  const auto& c = result.counters;
  log << "counters rvic_splits " << c.rvic_splits << " densify_calls " << c.densify_calls << " mask_transfers "
      << c.mask_transfers << " skipped_supervised " << c.skipped_supervised << "\n";
  log << "checkpoint " << cfg.checkpoint_path().string() << "\n";
  log << "final miou " << fixed2(cm.miou(eval.absent_policy)) << "\n";
  log.flush();
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const UdaModel<float> model = load_trained_model(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  const EvalConfig eval = eval_config(cfg);
  const ConfusionMatrix cm = evaluate_target(model, data.target_eval, eval);
  make_dirs(cfg.out_dir);
  {
    auto csv = open_text(cfg.out_dir / "iou.csv");
    write_iou_csv(csv, cm, eval.absent_policy);
  }
  write_iou_table(out, cm, eval.absent_policy);
  out << "final miou " << fixed2(cm.miou(eval.absent_policy)) << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  make_dirs(cfg.out_dir);
  auto log_file = open_text(cfg.out_dir / "ablation.log");
  TeeBuf tee(out.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);

  const ExperimentData data = load_experiment_data(cfg);
  std::vector<AblationVariant> variants;
  if (cfg.ablate_include_naive) variants.push_back(naive_variant());
  for (const auto& v : standard_ablation()) variants.push_back(v);
  const auto rows = run_ablation(cfg.experiment, data, variants, cfg.ablate_seeds, &log, cfg.ablate_threads);

  {
    auto table = open_text(cfg.out_dir / "ablation.txt");
    write_ablation_table(table, rows);
  }
  {
    auto csv = open_text(cfg.out_dir / "ablation.csv");
    csv << "variant,seed,miou\n";
    for (const auto& row : rows)
      for (size_t s = 0; s < row.miou.size(); ++s)
        csv << row.variant.name << ',' << cfg.ablate_seeds[s] << ',' << fixed2(row.miou[s]) << '\n';
  }
  write_ablation_table(log, rows);
  log.flush();
  return 0;
}

int cmd_viz(const RunConfig& cfg, std::ostream& out) {
  const UdaModel<float> model = load_trained_model(cfg);
  std::vector<PointCloud> clouds;
  if (cfg.eval_dir.empty()) {
    const DataConfig& data = cfg.experiment.data;
    if (cfg.viz_scene >= data.eval_scenes)
      throw Error(Errc::invalid_argument, "viz.scene " + std::to_string(cfg.viz_scene) + " exceeds data.eval_scenes");
    clouds.push_back(synth_scene(experiment_scene(data, data.target, 1, cfg.viz_scene)));
  } else {
    clouds = load_scan_dir(cfg.eval_dir, true);
    if (static_cast<size_t>(cfg.viz_scene) >= clouds.size())
      throw Error(Errc::invalid_argument, "viz.scene out of range for " + cfg.eval_dir.string());
    clouds = {std::move(clouds[static_cast<size_t>(cfg.viz_scene)])};
  }
  const RangeView rv = project_view(clouds.front(), cfg);
  const EvalConfig eval = eval_config(cfg);
  const auto pred = predict_pixels(model, rv, eval);

  const RgbImage gt_img = render_field(as_field(*rv.label_image), rv.h, rv.w, PaletteMode::label, rv.mask);
  const RgbImage pred_img = render_field(as_field(pred), rv.h, rv.w, PaletteMode::label, rv.mask);
  // Ground truth on the left, prediction on the right, white separator.
  constexpr int kGap = 4;
  RgbImage both;
  both.width = 2 * rv.w + kGap;
  both.height = rv.h;
  both.rgb.assign(static_cast<size_t>(both.width) * both.height * 3, 255);
  for (int r = 0; r < rv.h; ++r) {
    const size_t src = static_cast<size_t>(r) * rv.w * 3;
    const size_t dst = static_cast<size_t>(r) * both.width * 3;
    std::copy_n(gt_img.rgb.begin() + src, rv.w * 3, both.rgb.begin() + dst);
    std::copy_n(pred_img.rgb.begin() + src, rv.w * 3, both.rgb.begin() + dst + (rv.w + kGap) * 3);
  }
  make_dirs(cfg.out_dir);
  const fs::path path = cfg.out_dir / ("viz_" + scan_name(static_cast<size_t>(cfg.viz_scene)) + ".ppm");
  write_ppm(both, path);
  out << "wrote " << path.string() << " (left: ground truth, right: prediction)\n";
  return 0;
}

}  // namespace rvuda
