// headsteer: extract persona vectors, localize style heads, steer, ablate and
// score frontiers. Exit codes: 0 success, 2 configuration error, 3 runtime or
// judge error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "headsteer/errors.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace headsteer;
using namespace headsteer::cli;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config;
  std::vector<std::string> set;
  std::string outdir;
  std::string judge;
  long long seed = -1;
  long long jobs = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "Run config JSON")->required();
  cmd->add_option("--set", f.set, "Override a config field: key.path=value (repeatable)");
  cmd->add_option("-o,--outdir", f.outdir, "Artifact root (overrides config)");
  cmd->add_option("--seed", f.seed, "Base seed (overrides config)");
  cmd->add_option("-j,--jobs", f.jobs, "Worker threads (overrides config)");
  cmd->add_option("--judge", f.judge, "synthetic or llm (overrides config)");
}

RunConfig resolve(const CommonFlags& f) {
  std::vector<std::string> overrides = f.set;
  if (!f.outdir.empty()) overrides.push_back("outdir=" + nlohmann::json(fs::absolute(f.outdir).string()).dump());
  if (f.seed >= 0) overrides.push_back("seed=" + std::to_string(f.seed));
  if (f.jobs >= 0) overrides.push_back("jobs=" + std::to_string(f.jobs));
  if (!f.judge.empty()) overrides.push_back("judge.kind=" + nlohmann::json(f.judge).dump());
  return load_run_config(f.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localize style heads and steer persona behaviour"};
  app.require_subcommand(1);

  using Command = fs::path (*)(const RunConfig&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands{
      {"extract", "Collect activations and difference-in-means vectors", cmd_extract},
      {"localize", "Similarity heatmaps, head contribution scores and head selection", cmd_localize},
      {"steer", "Steering sweeps over site sets (and an optional layer sweep)", cmd_steer},
      {"ablate", "Cumulative zero ablation of selected heads", cmd_ablate},
      {"pareto", "Frontiers and envelope scores from steer records", cmd_pareto},
      {"report", "Markdown summary of the available artifacts", cmd_report},
  };
  std::vector<CommonFlags> flags(commands.size());
  std::function<fs::path()> action;
  for (std::size_t k = 0; k < commands.size(); ++k) {
    auto* cmd = app.add_subcommand(std::get<0>(commands[k]), std::get<1>(commands[k]));
    add_common(cmd, flags[k]);
    cmd->callback([&, k] {
      action = [&, k] { return std::get<2>(commands[k])(resolve(flags[k])); };
    });
  }

  FixtureOptions fixture;
  std::string fixture_spec, fixture_out = "out";
  auto* fx = app.add_subcommand("fixture", "Write the planted-head model, its persona and a run config");
  fx->add_option("--spec", fixture_spec, "PlantedModelSpec JSON (default: built-in reference)");
  fx->add_option("--seed", fixture.seed, "Construction seed");
  fx->add_option("-o,--outdir", fixture_out, "Artifact root");
  fx->callback([&] {
    action = [&] {
      fixture.spec = fixture_spec;
      fixture.outdir = fixture_out;
      return cmd_fixture(fixture);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const fs::path dir = action();
    std::printf("%s\n", dir.string().c_str());
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "headsteer: config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "headsteer: config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "headsteer: error: %s\n", e.what());
    return kExitRuntime;
  }
}
