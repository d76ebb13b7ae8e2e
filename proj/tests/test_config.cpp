#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "rvuda/commands.hpp"
#include "rvuda/config.hpp"
#include "test_util.hpp"

using namespace rvuda;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string last_line_with(const std::string& text, const std::string& prefix) {
  std::string found;
  for (const auto& line : lines_of(text))
    if (line.starts_with(prefix)) found = line;
  return found;
}

// Tiny end-to-end run: a few small scans and a handful of steps.
constexpr const char* kSmokeConfig = R"(# smoke run
source.beams = 16
source.azimuth_steps = 256
target.beams = 8
target.azimuth_steps = 128
data.train_scenes = 3
data.eval_scenes = 2
proj.h = 16
proj.w = 64
model.widths = 4,8
train.steps = 4
train.batch_size = 2
train.warmup_steps = 2
ablate.seeds = 1
)";

RunConfig smoke_config(const fs::path& out_dir) {
  RunConfig cfg = parse_config(nullptr, {});
  apply_config_text(cfg, kSmokeConfig);
  cfg.out_dir = out_dir;
  cfg.validate();
  return cfg;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RVUDA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("empty config resolves to the defaults") {
  const auto dir = test::scratch_dir("config_empty");
  std::ofstream(dir / "empty.cfg") << "";
  const fs::path path = dir / "empty.cfg";
  const RunConfig cfg = parse_config(&path);
  const auto& t = cfg.experiment.train;
  CHECK(t.lambda_aux == 1e-6);
  CHECK(t.optimizer.lr0 == 0.01);
  CHECK(t.optimizer.momentum == 0.9);
  CHECK(t.optimizer.weight_decay == 0.0001);
  CHECK(t.optimizer.warmup_steps == 50);
  CHECK(t.steps == 500);
  CHECK(t.batch_size == 4);
  CHECK(cfg.experiment.proj.h == 32);
  CHECK(cfg.experiment.proj.w == 256);
  CHECK(cfg.experiment.proj.fov_up_deg == 3.0);
  CHECK(cfg.experiment.proj.fov_down_deg == -25.0);
  CHECK(cfg.experiment.data.source.beam_count == 64);
  CHECK(cfg.experiment.data.target.beam_count == 32);
  CHECK(cfg.experiment.model.widths == std::vector<int>{16, 32, 64});

  std::ostringstream a, b;
  write_config(a, cfg);
  write_config(b, RunConfig{});
  CHECK(a.str() == b.str());
}

TEST_CASE("file values, then command-line overrides") {
  const auto dir = test::scratch_dir("config_precedence");
  std::ofstream(dir / "run.cfg") << "# learning rate\ntrain.lr0 = 0.05   # trailing comment\n\n  train.steps=7\n";
  const fs::path path = dir / "run.cfg";
  const RunConfig file_only = parse_config(&path);
  CHECK(file_only.experiment.train.optimizer.lr0 == 0.05);
  CHECK(file_only.experiment.train.steps == 7);
  const RunConfig overridden = parse_config(&path, {{"train.lr0", "0.02"}});
  CHECK(overridden.experiment.train.optimizer.lr0 == 0.02);
  CHECK(overridden.experiment.train.steps == 7);
  const RunConfig twice = parse_config(&path, {{"train.lr0", "0.02"}, {"train.lr0", "0.03"}});
  CHECK(twice.experiment.train.optimizer.lr0 == 0.03);
}

TEST_CASE("config errors") {
  RunConfig cfg;
  CHECK(test::thrown_code([&] { apply_config_text(cfg, "train.lamda_aux = 1\n"); }) == Errc::unknown_key);
  CHECK(test::thrown_code([&] { apply_config_text(cfg, "train.steps = many\n"); }) == Errc::unparsable_value);
  CHECK(test::thrown_code([&] { apply_config_text(cfg, "train.steps = 5x\n"); }) == Errc::unparsable_value);
  CHECK(test::thrown_code([&] { apply_config_text(cfg, "train.ga = maybe\n"); }) == Errc::unparsable_value);
  CHECK(test::thrown_code([&] { apply_config_text(cfg, "just words\n"); }) == Errc::unparsable_value);
  CHECK(test::thrown_code([&] { parse_config(nullptr, {{"data.source_dir", "/tmp"}}); }) == Errc::missing_required);
  CHECK(test::thrown_code([&] { parse_config(nullptr, {{"train.lambda_aux", "-1"}}); }) == Errc::invalid_argument);
  const fs::path missing = "/nonexistent/rvuda.cfg";
  CHECK(test::thrown_code([&] { parse_config(&missing); }) == Errc::io);

  try {
    apply_config_text(cfg, "train.steps = 3\ntrain.lamda_aux = 1\n");
    FAIL("expected unknown key");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train.lamda_aux") != std::string::npos);
    CHECK(msg.find('2') != std::string::npos);
  }
}

TEST_CASE("written config parses back to the same config") {
  RunConfig cfg;
  apply_config_text(cfg, kSmokeConfig);
  apply_config_text(cfg, "train.lambda_aux = 0.25\ntrain.ga = false\neval.knn_k = 3\nrun.out_dir = somewhere\n");
  std::ostringstream text;
  write_config(text, cfg);
  RunConfig back;
  apply_config_text(back, text.str());
  std::ostringstream again;
  write_config(again, back);
  CHECK(again.str() == text.str());
  CHECK(back.experiment.train.lambda_aux == 0.25);
  CHECK_FALSE(back.experiment.train.enable_ga);

  std::set<std::string> keys;
  for (const auto& k : config_keys()) CHECK(keys.insert(k.key).second);
  CHECK(lines_of(text.str()).size() == keys.size());
}

TEST_CASE("scene spec text round trip") {
  SceneSpec spec;
  spec.beam_count = 16;
  spec.azimuth_steps = 300;
  spec.range_jitter_sigma = 0.01;
  spec.seed = 42;
  spec.layout = random_layout(5);
  std::ostringstream text;
  write_scene_spec(text, spec);
  const SceneSpec back = parse_scene_spec(text.str());
  const PointCloud a = synth_scene(spec);
  const PointCloud b = synth_scene(back);
  CHECK(a.points == b.points);
  CHECK(a.intensity == b.intensity);
  CHECK(*a.labels == *b.labels);
  CHECK(test::thrown_code([] { parse_scene_spec("beams = 1\n"); }) == Errc::invalid_argument);
  CHECK(test::thrown_code([] { parse_scene_spec("vehicle = 1,2,3\n"); }) == Errc::unparsable_value);
}

TEST_CASE("synth and project write their artifacts") {
  const auto dir = test::scratch_dir("cmd_synth");
  const RunConfig cfg = smoke_config(dir);
  std::ostringstream out;
  CHECK(cmd_synth(cfg, out) == 0);
  for (const char* split : {"source", "target"})
    for (const char* ext : {".bin", ".label", ".scene"}) CHECK(fs::exists(dir / "data" / split / ("000002" + std::string(ext))));
  CHECK(fs::exists(dir / "data/eval/000001.bin"));
  CHECK_FALSE(fs::exists(dir / "data/eval/000002.bin"));
  const auto first = test::read_bytes(dir / "data/source/000000.bin");
  CHECK(cmd_synth(cfg, out) == 0);
  CHECK(test::read_bytes(dir / "data/source/000000.bin") == first);

  // The .scene file reproduces the scan.
  const SceneSpec spec = parse_scene_spec(read_text(dir / "data/target/000001.scene"));
  const PointCloud cloud = load_labels(dir / "data/target/000001.label", load_point_cloud(dir / "data/target/000001.bin"));
  CHECK(synth_scene(spec).points == cloud.points);

  RunConfig proj = cfg;
  proj.project_input = dir / "data/eval";
  CHECK(cmd_project(proj, out) == 0);
  const RangeView rv = load_range_view(dir / "projected/000000.rv");
  CHECK(rv.h == 16);
  CHECK(rv.w == 64);
  CHECK(read_ppm(dir / "projected/000001_range.ppm").width == 64);
  CHECK(read_ppm(dir / "projected/000001_label.ppm").height == 16);
}

TEST_CASE("train then eval reproduces the logged mIoU, and reruns are identical") {
  const auto dir = test::scratch_dir("cmd_train");
  const RunConfig cfg = smoke_config(dir);
  std::ostringstream train_out;
  CHECK(cmd_train(cfg, train_out) == 0);
  const std::string log = read_text(dir / "train.log");
  CHECK(log == train_out.str());
  CHECK(std::count(log.begin(), log.end(), '\n') == 4 + 3);
  CHECK(log.starts_with("step 0 loss_t "));
  const std::string final_train = last_line_with(log, "final miou ");
  REQUIRE_FALSE(final_train.empty());

  std::ostringstream eval_out;
  CHECK(cmd_eval(cfg, eval_out) == 0);
  CHECK(last_line_with(eval_out.str(), "final miou ") == final_train);
  const auto csv = lines_of(read_text(dir / "iou.csv"));
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] == "class,iou");
  CHECK(csv[1].starts_with("1,"));
  CHECK(csv[4].starts_with("miou,"));

  RunConfig resolved = parse_config(nullptr, {});
  apply_config_text(resolved, read_text(dir / "config.txt"));
  std::ostringstream a, b;
  write_config(a, resolved);
  write_config(b, cfg);
  CHECK(a.str() == b.str());

  const auto ckpt = test::read_bytes(dir / "model.ckpt");
  std::ostringstream again;
  CHECK(cmd_train(cfg, again) == 0);
  CHECK(test::read_bytes(dir / "model.ckpt") == ckpt);
  CHECK(read_text(dir / "train.log") == log);
}

TEST_CASE("eval and viz need a checkpoint") {
  const auto dir = test::scratch_dir("cmd_no_ckpt");
  const RunConfig cfg = smoke_config(dir);
  std::ostringstream out;
  CHECK(test::thrown_code([&] { cmd_eval(cfg, out); }) == Errc::io);
  CHECK(test::thrown_code([&] { cmd_viz(cfg, out); }) == Errc::io);
}

TEST_CASE("viz writes ground truth and prediction side by side") {
  const auto dir = test::scratch_dir("cmd_viz");
  RunConfig cfg = smoke_config(dir);
  std::ostringstream out;
  REQUIRE(cmd_train(cfg, out) == 0);
  cfg.viz_scene = 1;
  CHECK(cmd_viz(cfg, out) == 0);
  const auto bytes = test::read_bytes(dir / "viz_000001.ppm");
  const std::string header = "P6\n132 16\n255\n";
  REQUIRE(bytes.size() == header.size() + 132 * 16 * 3);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
  const RgbImage img = read_ppm(dir / "viz_000001.ppm");
  for (int r = 0; r < img.height; ++r)
    for (int c = 64; c < 68; ++c)
      for (int k = 0; k < 3; ++k) CHECK(img.rgb[(static_cast<size_t>(r) * img.width + c) * 3 + k] == 255);
  cfg.viz_scene = 2;
  CHECK(test::thrown_code([&] { cmd_viz(cfg, out); }) == Errc::invalid_argument);
}

TEST_CASE("ablate writes three rows") {
  const auto dir = test::scratch_dir("cmd_ablate");
  const RunConfig cfg = smoke_config(dir);
  std::ostringstream out;
  CHECK(cmd_ablate(cfg, out) == 0);
  const auto table = lines_of(read_text(dir / "ablation.txt"));
  REQUIRE(table.size() == 4);
  CHECK(table[1].starts_with("RVIC "));
  CHECK(table[2].starts_with("RVIC+UMT "));
  CHECK(table[3].starts_with("RVIC+UMT+GA "));
  const auto csv = lines_of(read_text(dir / "ablation.csv"));
  CHECK(csv.size() == 4);
  CHECK(csv[0] == "variant,seed,miou");

  RunConfig threaded = cfg;
  threaded.ablate_threads = 3;
  const auto threaded_dir = test::scratch_dir("cmd_ablate_threads");
  threaded.out_dir = threaded_dir;
  CHECK(cmd_ablate(threaded, out) == 0);
  CHECK(read_text(threaded_dir / "ablation.csv") == read_text(dir / "ablation.csv"));
  CHECK(read_text(threaded_dir / "ablation.log") == read_text(dir / "ablation.log"));
}

TEST_CASE("command-line exit codes") {
  const auto dir = test::scratch_dir("cli");
  const fs::path log = dir / "out.txt";
  std::ofstream(dir / "smoke.cfg") << kSmokeConfig;
  const std::string base = "-c " + (dir / "smoke.cfg").string() + " --run.out_dir " + dir.string();

  CHECK(run_cli("--help", log) == 0);
  const std::string help = read_text(log);
  for (const auto& key : config_keys()) CHECK(help.find("--" + key.key) != std::string::npos);
  CHECK(help.find("1e-06") != std::string::npos);

  CHECK(run_cli("config --train.lamda_aux 1", log) == 1);
  CHECK(run_cli("config --train.steps lots", log) == 1);
  CHECK(lines_of(read_text(log)).size() == 1);
  CHECK(read_text(log).starts_with("error: unparsable-value"));
  CHECK(run_cli("config --data.source_dir /tmp", log) == 1);
  CHECK(read_text(log).starts_with("error: missing-required"));
  CHECK(run_cli("", log) == 1);

  CHECK(run_cli("eval " + base, log) == 2);
  CHECK(read_text(log).starts_with("error: io"));

  CHECK(run_cli("config " + base + " --train.lr0 0.02", log) == 0);
  const std::string shown = read_text(log);
  CHECK(shown.find("train.lr0 = 0.02\n") != std::string::npos);
  CHECK(shown.find("train.lambda_aux = 1e-06\n") != std::string::npos);
  CHECK(shown.find("train.steps = 4\n") != std::string::npos);

  CHECK(run_cli("train " + base, log) == 0);
  CHECK(run_cli("viz " + base, log) == 0);
  CHECK(fs::exists(dir / "viz_000000.ppm"));
}
