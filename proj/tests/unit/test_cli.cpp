#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sys/wait.h>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"
#include "run_config.hpp"

using namespace headsteer;
using namespace headsteer::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(HEADSTEER_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("headsteer_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config parsing") {
  const json doc = json::parse(R"({
    "model": "m/model.json", "persona": "/abs/persona.json", "seed": 4,
    "extract": {"sites": ["attn_output:0"], "max_new": 5},
    "localize": {"layer": 1, "k_pos": 2},
    "steer": {"configuration": "target_minus_alpha", "coefficients": [1, 2], "runs": 2,
              "site_sets": [{"kind": "head_cor"}, {"name": "deep", "kind": "mlp_residual", "layer": 2}],
              "layer_sweep": {"kind": "mlp_output"}},
    "pareto": {"tau": 70}
  })");
  const RunConfig c = parse_run_config(doc, "/base/dir");
  CHECK(c.model == fs::path("/base/dir/m/model.json"));
  CHECK(c.persona == fs::path("/abs/persona.json"));
  CHECK(c.outdir == fs::path("/base/dir/out"));
  CHECK(c.seed == 4);
  CHECK(c.extract.max_new == 5);
  CHECK(c.localize.layer == std::optional<std::size_t>(1));
  CHECK(c.localize.k_neg == 0);
  CHECK(c.steer.configuration == Configuration::TargetMinusAlpha);
  REQUIRE(c.steer.site_sets.size() == 2);
  CHECK(c.steer.site_sets[0].name == "head_cor");
  CHECK(c.steer.site_sets[1].name == "deep");
  CHECK_FALSE(c.steer.site_sets[1].spec.contains("name"));
  CHECK(c.steer.layer_sweep->kind == SiteKind::MlpOutput);
  CHECK(c.steer.layer_sweep->coefficient == kLayerSweepCoefficient);
  CHECK(c.pareto.tau == 70.0);
  CHECK(c.judge.kind == "synthetic");
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_run_config(json{{"modle", "x"}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"steer", {{"runz", 1}}}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"seed", "four"}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"judge", {{"kind", "oracle"}}}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"steer", {{"configuration", "upside"}}}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::parse(R"({"steer": {"site_sets": [{"kind": "head_cor"}, {"kind": "head_cor"}]}})"), "."),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"jobs", 0}}, "."), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::object(), ".").check_files(), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.json", {}), ConfigError);
}

TEST_CASE("overrides") {
  json doc = json::object();
  apply_override(doc, "steer.runs=3");
  apply_override(doc, "judge.kind=llm");
  apply_override(doc, "steer.coefficients=[0.5, 1]");
  apply_override(doc, "outdir=\"/tmp/x\"");
  CHECK(doc["steer"]["runs"] == 3);
  CHECK(doc["judge"]["kind"] == "llm");
  CHECK(doc["steer"]["coefficients"].size() == 2);
  CHECK(doc["outdir"] == "/tmp/x");
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "a..b=3"), ConfigError);
}

TEST_CASE("end-to-end pipeline on the fixture") {
  const fs::path dir = scratch("pipeline");
  REQUIRE(run("fixture --seed 1 -o " + (dir / "fx").string()) == 0);
  const fs::path cfg = dir / "fx" / "planted" / "fixture" / "run.json";
  REQUIRE(fs::exists(cfg));
  const std::string common = " -c " + cfg.string() + " -o " + (dir / "out").string() +
                             " --set extract.max_new=24 --set steer.runs=1 --set steer.max_new=16"
                             " --set steer.coefficients=[1,3] --set ablate.runs=1 --set ablate.max_new=16";
  REQUIRE(run("extract" + common) == 0);
  const fs::path root = dir / "out" / "planted";
  CHECK(fs::exists(root / "extract" / "vectors.json"));
  CHECK(fs::exists(root / "extract" / "bank.bin"));
  std::set<std::string> kinds;
  const json vectors = read_json_file(root / "extract" / "vectors.json");
  for (const auto& v : vectors.at("vectors")) {
    const std::string site = v.at("site");
    kinds.insert(site.substr(0, site.find(':')));
  }
  CHECK(kinds.size() == 8);

  REQUIRE(run("localize" + common) == 0);
  const json sel = read_json_file(root / "localize" / "selection.json");
  const json planted = read_json_file(dir / "fx" / "planted" / "fixture" / "fixture.json");
  CHECK(sel.at("layer") == planted.at("planted_layer"));
  CHECK(sel.at("selection").at("correlated").at(0) ==
        json{{"layer", planted.at("planted_layer")}, {"head", planted.at("planted_head")}});
  const json sim = read_json_file(root / "localize" / "similarity_inputs.json").at("values");
  for (const auto& [a, row] : sim.items())
    for (const auto& [b, value] : row.items()) CHECK(value == sim.at(b).at(a));
  CHECK(fs::exists(root / "localize" / "similarity_inputs.csv"));
  CHECK(fs::exists(root / "localize" / "contributions.csv"));

  REQUIRE(run("steer" + common) == 0);
  CHECK(fs::exists(root / "steer" / "summary.csv"));
  CHECK(fs::exists(root / "steer" / "records_head_cor.jsonl"));
  CHECK(fs::exists(root / "steer" / "layer_sweep.csv"));

  REQUIRE(run("pareto" + common) == 0);
  CHECK(fs::exists(root / "pareto" / "frontier.svg"));
  CHECK(read_json_file(root / "pareto" / "scores.json").is_object());

  REQUIRE(run("ablate" + common) == 0);
  CHECK(fs::exists(root / "ablate" / "ablation.csv"));

  REQUIRE(run("report" + common) == 0);
  CHECK(read_text_file(root / "report" / "report.md").find("planted") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  CHECK(run("") == 2);
  CHECK(run("extract") == 2);
  CHECK(run("extract -c " + (dir / "missing.json").string()) == 2);
  write_text_file(dir / "bad.json", R"({"model": "nope.json", "persona": "nope.json"})");
  CHECK(run("extract -c " + (dir / "bad.json").string()) == 2);
  write_text_file(dir / "typo.json", R"({"modle": 1})");
  CHECK(run("extract -c " + (dir / "typo.json").string()) == 2);
  // steer before extract: the missing artifact is a configuration problem.
  REQUIRE(run("fixture -o " + (dir / "fx").string()) == 0);
  CHECK(run("steer -c " + (dir / "fx" / "planted" / "fixture" / "run.json").string() + " -o " + (dir / "out").string()) == 2);
  fs::remove_all(dir);
}
