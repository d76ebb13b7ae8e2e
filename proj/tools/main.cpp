#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "rvuda/commands.hpp"

namespace {

using Command = int (*)(const rvuda::RunConfig&, std::ostream&);

bool is_config_error(rvuda::Errc code) {
  using rvuda::Errc;
  return code == Errc::unknown_key || code == Errc::unparsable_value || code == Errc::missing_required ||
         code == Errc::invalid_argument;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Range-view LiDAR segmentation with unsupervised domain adaptation", "rvuda"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string config_path;
  app.add_option("-c,--config", config_path, "Config file of `key = value` lines")->check(CLI::ExistingFile);

  const rvuda::RunConfig defaults;
  std::map<std::string, std::string> values;
  std::vector<CLI::Option*> key_options;
  for (const auto& key : rvuda::config_keys()) {
    auto* opt = app.add_option("--" + key.key, values[key.key], key.help);
    opt->type_name("VALUE")->default_str(key.get(defaults))->group("Config keys (file or command line)");
    key_options.push_back(opt);
  }

  const std::vector<std::pair<std::string, Command>> commands = {
      {"synth", rvuda::cmd_synth},   {"project", rvuda::cmd_project}, {"train", rvuda::cmd_train},
      {"eval", rvuda::cmd_eval},     {"ablate", rvuda::cmd_ablate},   {"viz", rvuda::cmd_viz},
  };
  const std::map<std::string, std::string> about = {
      {"synth", "Write synthetic source/target/eval scans (.bin, .label, .scene)"},
      {"project", "Write range views and PPM previews of scans"},
      {"train", "Train a model; writes checkpoint, log and resolved config"},
      {"eval", "Evaluate the checkpoint on the target eval set; writes iou.csv"},
      {"ablate", "Train the RVIC / RVIC+UMT / RVIC+UMT+GA variants; writes ablation.txt"},
      {"viz", "Render ground truth next to the prediction as a PPM"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) subs[name] = app.add_subcommand(name, about.at(name))->fallthrough();
  auto* show = app.add_subcommand("config", "Print the resolved configuration")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  rvuda::Overrides overrides;
  for (size_t i = 0; i < key_options.size(); ++i)
    if (key_options[i]->count() > 0) {
      const auto& key = rvuda::config_keys()[i].key;
      overrides.emplace_back(key, values[key]);
    }

  rvuda::RunConfig cfg;
  try {
    const std::filesystem::path path = config_path;
    cfg = rvuda::parse_config(config_path.empty() ? nullptr : &path, overrides);
  } catch (const rvuda::Error& e) {
    std::cerr << "error: " << rvuda::errc_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  }

  if (show->parsed()) {
    rvuda::write_config(std::cout, cfg);
    return 0;
  }
  for (const auto& [name, fn] : commands) {
    if (!subs[name]->parsed()) continue;
    try {
      return fn(cfg, std::cout);
    } catch (const rvuda::Error& e) {
      std::cerr << "error: " << rvuda::errc_name(e.code()) << ": " << e.what() << "\n";
      return is_config_error(e.code()) ? 1 : 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
