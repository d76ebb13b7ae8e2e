#include "rvuda/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rvuda {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view what, std::string_view value) {
  throw Error(Errc::unparsable_value, "cannot parse '" + std::string(value) + "' as " + std::string(what));
}

template <class N>
N parse_number(std::string_view s, const char* what) {
  s = trim(s);
  N v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) bad_value(what, s);
  return v;
}

int parse_int(std::string_view s) { return parse_number<int>(s, "integer"); }
uint64_t parse_u64(std::string_view s) { return parse_number<uint64_t>(s, "unsigned integer"); }
int64_t parse_i64(std::string_view s) { return parse_number<int64_t>(s, "integer"); }
double parse_double(std::string_view s) { return parse_number<double>(s, "number"); }

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value("boolean", s);
}

template <class F>
auto parse_list(std::string_view s, F&& item) {
  std::vector<decltype(item(s))> out;
  s = trim(s);
  if (s.empty()) return out;
  size_t start = 0;
  while (true) {
    const size_t comma = s.find(',', start);
    out.push_back(item(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[512];
  const double a = std::abs(v);
  const bool plain = a == 0.0 || (a >= 1e-4 && a < 1e9);
  auto [ptr, ec] = plain ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                         : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class N>
std::string fmt(N v) requires std::is_integral_v<N> {
  return std::to_string(v);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <class V>
std::string fmt_list(const V& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ',';
    out += fmt(v);
  }
  return out;
}

std::array<float, kRangeChannels> parse_channels(std::string_view s) {
  auto values = parse_list(s, parse_double);
  if (values.size() != kRangeChannels) bad_value("five comma-separated numbers", s);
  std::array<float, kRangeChannels> out{};
  for (int c = 0; c < kRangeChannels; ++c) out[c] = static_cast<float>(values[c]);
  return out;
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> keys;
  auto add = [&](std::string key, std::string help, auto get, auto set) {
    keys.push_back({std::move(key), std::move(help), get, set});
  };

#define RVUDA_KEY(name, help, expr, parse)                                               \
  add(                                                                                   \
      name, help, [](const RunConfig& c) { return fmt(c.expr); },                        \
      [](RunConfig& c, std::string_view v) { c.expr = parse(v); })

  auto sensor_keys = [&](const std::string& prefix, SensorSpec DataConfig::*member) {
    auto field = [member](auto get_field) {
      return [member, get_field](const RunConfig& c) { return fmt(get_field(c.experiment.data.*member)); };
    };
    add(prefix + ".beams", "laser channels", field([](const SensorSpec& s) { return s.beam_count; }),
        [member](RunConfig& c, std::string_view v) { (c.experiment.data.*member).beam_count = parse_int(v); });
    add(prefix + ".azimuth_steps", "samples per revolution",
        field([](const SensorSpec& s) { return s.azimuth_steps; }),
        [member](RunConfig& c, std::string_view v) { (c.experiment.data.*member).azimuth_steps = parse_int(v); });
    add(prefix + ".fov_up_deg", "upper field-of-view bound (degrees)",
        field([](const SensorSpec& s) { return s.fov_up_deg; }),
        [member](RunConfig& c, std::string_view v) { (c.experiment.data.*member).fov_up_deg = parse_double(v); });
    add(prefix + ".fov_down_deg", "lower field-of-view bound (degrees)",
        field([](const SensorSpec& s) { return s.fov_down_deg; }),
        [member](RunConfig& c, std::string_view v) { (c.experiment.data.*member).fov_down_deg = parse_double(v); });
    add(prefix + ".max_range", "maximum return range (m)", field([](const SensorSpec& s) { return s.max_range; }),
        [member](RunConfig& c, std::string_view v) { (c.experiment.data.*member).max_range = parse_double(v); });
    add(prefix + ".range_jitter", "gaussian range noise sigma (m), 0 disables",
        field([](const SensorSpec& s) { return s.range_jitter_sigma; }),
        [member](RunConfig& c, std::string_view v) {
          (c.experiment.data.*member).range_jitter_sigma = parse_double(v);
        });
  };
  sensor_keys("source", &DataConfig::source);
  sensor_keys("target", &DataConfig::target);

  RVUDA_KEY("data.train_scenes", "training layouts (seen by both sensors)", experiment.data.train_scenes, parse_int);
  RVUDA_KEY("data.eval_scenes", "held-out target evaluation layouts", experiment.data.eval_scenes, parse_int);
  RVUDA_KEY("data.layout_seed", "seed of the scene layouts", experiment.data.layout_seed, parse_u64);
  RVUDA_KEY("data.vehicles", "vehicles per layout", experiment.data.layout.vehicles, parse_int);
  RVUDA_KEY("data.pedestrians", "pedestrians per layout", experiment.data.layout.pedestrians, parse_int);
  RVUDA_KEY("data.min_distance", "closest object distance (m)", experiment.data.layout.min_distance, parse_double);
  RVUDA_KEY("data.max_distance", "farthest object distance (m)", experiment.data.layout.max_distance, parse_double);
  RVUDA_KEY("data.ground_z_min", "lowest ground elevation (m)", experiment.data.layout.ground_z_min, parse_double);
  RVUDA_KEY("data.ground_z_max", "highest ground elevation (m)", experiment.data.layout.ground_z_max, parse_double);
  add("data.source_dir", "labeled source scans (.bin/.label); empty synthesizes",
      [](const RunConfig& c) { return c.source_dir.string(); },
      [](RunConfig& c, std::string_view v) { c.source_dir = std::string(trim(v)); });
  add("data.target_dir", "target training scans (.bin); empty synthesizes",
      [](const RunConfig& c) { return c.target_dir.string(); },
      [](RunConfig& c, std::string_view v) { c.target_dir = std::string(trim(v)); });
  add("data.eval_dir", "labeled target evaluation scans; empty synthesizes",
      [](const RunConfig& c) { return c.eval_dir.string(); },
      [](RunConfig& c, std::string_view v) { c.eval_dir = std::string(trim(v)); });

  RVUDA_KEY("proj.h", "range image height", experiment.proj.h, parse_int);
  RVUDA_KEY("proj.w", "range image width", experiment.proj.w, parse_int);
  RVUDA_KEY("proj.fov_up_deg", "projection upper bound (degrees)", experiment.proj.fov_up_deg, parse_double);
  RVUDA_KEY("proj.fov_down_deg", "projection lower bound (degrees)", experiment.proj.fov_down_deg, parse_double);

  RVUDA_KEY("model.classes", "output classes including the ignore id", experiment.model.classes, parse_int);
  add("model.widths", "encoder channel widths, one per stage",
      [](const RunConfig& c) { return fmt_list(c.experiment.model.widths); },
      [](RunConfig& c, std::string_view v) { c.experiment.model.widths = parse_list(v, parse_int); });
  RVUDA_KEY("model.leaky_slope", "LeakyReLU negative slope", experiment.model.leaky_slope, parse_double);
  RVUDA_KEY("model.seed", "weight initialization seed", experiment.model.seed, parse_u64);

  RVUDA_KEY("train.lambda_aux", "weight of the completion loss", experiment.train.lambda_aux, parse_double);
  RVUDA_KEY("train.steps", "optimizer steps", experiment.train.steps, parse_int);
  RVUDA_KEY("train.batch_size", "scans per domain per step", experiment.train.batch_size, parse_int);
  RVUDA_KEY("train.lr0", "initial learning rate", experiment.train.optimizer.lr0, parse_double);
  RVUDA_KEY("train.momentum", "SGD momentum", experiment.train.optimizer.momentum, parse_double);
  RVUDA_KEY("train.weight_decay", "L2 weight decay", experiment.train.optimizer.weight_decay, parse_double);
  RVUDA_KEY("train.warmup_steps", "linear warmup length", experiment.train.optimizer.warmup_steps, parse_i64);
  RVUDA_KEY("train.seed", "sampling seed", experiment.train.seed, parse_u64);
  RVUDA_KEY("train.ignore_class", "label id excluded from loss and metric", experiment.train.ignore_class, parse_int);
  RVUDA_KEY("train.rvic", "enable range view image completion", experiment.train.enable_rvic, parse_bool);
  RVUDA_KEY("train.umt", "enable unpaired mask transfer", experiment.train.enable_umt, parse_bool);
  RVUDA_KEY("train.ga", "enable gated adapters", experiment.train.enable_ga, parse_bool);
  RVUDA_KEY("train.normalize", "standardize input channels", experiment.train.normalization.enabled, parse_bool);
  add("train.input_mean", "per-channel mean (x,y,z,intensity,range)",
      [](const RunConfig& c) { return fmt_list(c.experiment.train.normalization.mean); },
      [](RunConfig& c, std::string_view v) { c.experiment.train.normalization.mean = parse_channels(v); });
  add("train.input_std", "per-channel standard deviation",
      [](const RunConfig& c) { return fmt_list(c.experiment.train.normalization.stddev); },
      [](RunConfig& c, std::string_view v) { c.experiment.train.normalization.stddev = parse_channels(v); });

  RVUDA_KEY("eval.knn", "kNN post-processing of point labels", experiment.eval.knn, parse_bool);
  RVUDA_KEY("eval.knn_k", "neighbors per vote", experiment.eval.knn_cfg.k, parse_int);
  RVUDA_KEY("eval.knn_window", "odd search window size", experiment.eval.knn_cfg.window, parse_int);
  RVUDA_KEY("eval.knn_cutoff", "range cutoff (m)", experiment.eval.knn_cfg.range_cutoff, parse_double);
  RVUDA_KEY("eval.batch_size", "scans per forward pass", experiment.eval.batch_size, parse_int);
  add("eval.absent_class_policy", "exclude or zero",
      [](const RunConfig& c) {
        return std::string(c.experiment.eval.absent_policy == AbsentClassPolicy::exclude ? "exclude" : "zero");
      },
      [](RunConfig& c, std::string_view v) {
        v = trim(v);
        if (v == "exclude") c.experiment.eval.absent_policy = AbsentClassPolicy::exclude;
        else if (v == "zero") c.experiment.eval.absent_policy = AbsentClassPolicy::zero;
        else bad_value("exclude|zero", v);
      });

  add("run.out_dir", "output directory", [](const RunConfig& c) { return c.out_dir.string(); },
      [](RunConfig& c, std::string_view v) { c.out_dir = std::string(trim(v)); });
  add("run.checkpoint", "checkpoint path; empty means <out_dir>/model.ckpt",
      [](const RunConfig& c) { return c.checkpoint.string(); },
      [](RunConfig& c, std::string_view v) { c.checkpoint = std::string(trim(v)); });
  add("project.input", "directory of .bin scans to project; empty uses eval scenes",
      [](const RunConfig& c) { return c.project_input.string(); },
      [](RunConfig& c, std::string_view v) { c.project_input = std::string(trim(v)); });
  add("ablate.seeds", "comma-separated seeds", [](const RunConfig& c) { return fmt_list(c.ablate_seeds); },
      [](RunConfig& c, std::string_view v) { c.ablate_seeds = parse_list(v, parse_u64); });
  RVUDA_KEY("ablate.naive", "also report the source-only baseline", ablate_include_naive, parse_bool);
  RVUDA_KEY("ablate.threads", "variants trained in parallel", ablate_threads, parse_int);
  RVUDA_KEY("viz.scene", "evaluation scene to render", viz_scene, parse_int);
#undef RVUDA_KEY
  return keys;
}

}  // namespace

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out_dir / "model.ckpt" : checkpoint;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(Errc::invalid_argument, msg);
  };
  experiment.proj.validate();
  experiment.model.validate();
  experiment.train.validate();
  require(experiment.data.train_scenes > 0, "data.train_scenes must be positive");
  require(experiment.data.eval_scenes > 0, "data.eval_scenes must be positive");
  require(experiment.eval.batch_size > 0, "eval.batch_size must be positive");
  require(experiment.eval.knn_cfg.k > 0, "eval.knn_k must be positive");
  require(!ablate_seeds.empty(), "ablate.seeds must not be empty");
  require(ablate_threads > 0, "ablate.threads must be positive");
  require(viz_scene >= 0, "viz.scene must be non-negative");
  require(!out_dir.empty(), "run.out_dir must not be empty");
  if (!source_dir.empty() && target_dir.empty())
    throw Error(Errc::missing_required, "data.target_dir is required when data.source_dir is set");
  if (!target_dir.empty() && source_dir.empty())
    throw Error(Errc::missing_required, "data.source_dir is required when data.target_dir is set");
  if (!source_dir.empty() && eval_dir.empty())
    throw Error(Errc::missing_required, "data.eval_dir is required when loading scans from disk");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  for (const ConfigKey& k : config_keys()) {
    if (k.key != key) continue;
    try {
      k.set(cfg, value);
    } catch (const Error& e) {
      throw Error(e.code(), std::string(key) + ": " + e.what());
    }
    return;
  }
  throw Error(Errc::unknown_key, "unknown config key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  int line_no = 0;
  while (!text.empty()) {
    const size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::unparsable_value, "line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::filesystem::path* path, const Overrides& overrides) {
  RunConfig cfg;
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot read config " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      apply_config_text(cfg, ss.str());
    } catch (const Error& e) {
      throw Error(e.code(), path->string() + ": " + e.what());
    }
  }
  for (const auto& [key, value] : overrides) apply_setting(cfg, key, value);
  cfg.validate();
  return cfg;
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  for (const ConfigKey& k : config_keys()) out << k.key << " = " << k.get(cfg) << "\n";
}

void write_scene_spec(std::ostream& out, const SceneSpec& spec) {
  out << "beams = " << spec.beam_count << "\n"
      << "azimuth_steps = " << spec.azimuth_steps << "\n"
      << "fov_up_deg = " << fmt(spec.fov_up_deg) << "\n"
      << "fov_down_deg = " << fmt(spec.fov_down_deg) << "\n"
      << "max_range = " << fmt(spec.max_range) << "\n"
      << "range_jitter = " << fmt(spec.range_jitter_sigma) << "\n"
      << "seed = " << spec.seed << "\n"
      << "ground = " << fmt(spec.layout.has_ground) << "\n"
      << "ground.z = " << fmt(spec.layout.ground_z) << "\n"
      << "ground.half_extent = " << fmt(spec.layout.ground_half_extent) << "\n";
  for (const Box& b : spec.layout.vehicles)
    out << "vehicle = " << fmt_list(b.min) << "," << fmt_list(b.max) << "\n";
  for (const Cylinder& c : spec.layout.pedestrians)
    out << "pedestrian = " << fmt_list(std::array{c.cx, c.cy, c.radius, c.z_min, c.z_max}) << "\n";
}

SceneSpec parse_scene_spec(std::string_view text) {
  SceneSpec spec;
  spec.layout.vehicles.clear();
  spec.layout.pedestrians.clear();
  int line_no = 0;
  while (!text.empty()) {
    const size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::unparsable_value, "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = line.substr(eq + 1);
    if (key == "beams") spec.beam_count = parse_int(value);
    else if (key == "azimuth_steps") spec.azimuth_steps = parse_int(value);
    else if (key == "fov_up_deg") spec.fov_up_deg = parse_double(value);
    else if (key == "fov_down_deg") spec.fov_down_deg = parse_double(value);
    else if (key == "max_range") spec.max_range = parse_double(value);
    else if (key == "range_jitter") spec.range_jitter_sigma = parse_double(value);
    else if (key == "seed") spec.seed = parse_u64(value);
    else if (key == "ground") spec.layout.has_ground = parse_bool(value);
    else if (key == "ground.z") spec.layout.ground_z = parse_double(value);
    else if (key == "ground.half_extent") spec.layout.ground_half_extent = parse_double(value);
    else if (key == "vehicle") {
      auto v = parse_list(value, parse_double);
      if (v.size() != 6) bad_value("six box bounds", value);
      spec.layout.vehicles.push_back({{v[0], v[1], v[2]}, {v[3], v[4], v[5]}});
    } else if (key == "pedestrian") {
      auto v = parse_list(value, parse_double);
      if (v.size() != 5) bad_value("cylinder cx,cy,radius,z_min,z_max", value);
      spec.layout.pedestrians.push_back({v[0], v[1], v[2], v[3], v[4]});
    } else {
      throw Error(Errc::unknown_key, "unknown scene key '" + std::string(key) + "'");
    }
  }
  spec.validate();
  return spec;
}

}  // namespace rvuda
