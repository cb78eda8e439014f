#include "run_config.hpp"

#include <set>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"

namespace headsteer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

GenerationParams parse_generation(const json& j, GenerationParams g) {
  g.max_new = j.value("max_new", g.max_new);
  g.temperature = j.value("temperature", g.temperature);
  if (g.temperature < 0.0) throw ConfigError("temperature must be non-negative");
  return g;
}

}  // namespace

void RunConfig::check_files() const {
  if (model.empty()) throw ConfigError("config: 'model' is required");
  if (!fs::exists(model)) throw ConfigError("model manifest not found: " + model.string());
  if (persona.empty()) throw ConfigError("config: 'persona' is required");
  if (!fs::exists(persona)) throw ConfigError("persona file not found: " + persona.string());
  if (!vocabulary.empty() && !fs::exists(vocabulary))
    throw ConfigError("vocabulary file not found: " + vocabulary.string());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  c.document = doc;
  try {
    check_keys(doc, "config",
               {"model", "vocabulary", "persona", "outdir", "seed", "jobs", "extract", "localize", "steer", "ablate",
                "pareto", "judge"});
    c.model = resolve(base_dir, doc.value("model", std::string()));
    c.vocabulary = resolve(base_dir, doc.value("vocabulary", std::string()));
    c.persona = resolve(base_dir, doc.value("persona", std::string()));
    c.outdir = resolve(base_dir, doc.value("outdir", std::string("out")));
    c.seed = doc.value("seed", c.seed);
    c.jobs = doc.value("jobs", c.jobs);
    if (c.jobs == 0) throw ConfigError("jobs must be at least 1");

    if (doc.contains("extract")) {
      const json& e = doc["extract"];
      check_keys(e, "extract", {"sites", "max_new", "temperature"});
      c.extract.sites = e.value("sites", c.extract.sites);
      c.extract.max_new = e.value("max_new", c.extract.max_new);
      c.extract.temperature = e.value("temperature", c.extract.temperature);
      if (c.extract.temperature < 0.0) throw ConfigError("extract: temperature must be non-negative");
    }

    if (doc.contains("localize")) {
      const json& l = doc["localize"];
      check_keys(l, "localize", {"layer", "k_pos", "k_neg", "threshold"});
      if (l.contains("layer") && !l["layer"].is_null()) c.localize.layer = l["layer"].get<std::size_t>();
      c.localize.k_pos = l.value("k_pos", c.localize.k_pos);
      c.localize.k_neg = l.value("k_neg", c.localize.k_neg);
      c.localize.threshold = l.value("threshold", c.localize.threshold);
    }

    if (doc.contains("steer")) {
      const json& s = doc["steer"];
      check_keys(s, "steer",
                 {"configuration", "site_sets", "coefficients", "include_zero", "runs", "max_new", "temperature",
                  "layer_sweep"});
      if (s.contains("configuration"))
        c.steer.configuration = parse_configuration(s["configuration"].get<std::string>());
      if (s.contains("site_sets")) {
        std::set<std::string> names;
        for (const json& e : s["site_sets"]) {
          SiteSetEntry entry;
          entry.spec = e;
          if (e.contains("name")) {
            entry.name = e["name"].get<std::string>();
            entry.spec.erase("name");
          } else {
            entry.name = e.at("kind").get<std::string>();
          }
          if (!names.insert(entry.name).second)
            throw ConfigError("steer: duplicate site set name '" + entry.name + "'; give each a distinct 'name'");
          c.steer.site_sets.push_back(std::move(entry));
        }
      }
      if (s.contains("coefficients")) c.steer.coefficients = s["coefficients"].get<std::vector<double>>();
      c.steer.include_zero = s.value("include_zero", c.steer.include_zero);
      c.steer.runs = s.value("runs", c.steer.runs);
      c.steer.generation = parse_generation(s, c.steer.generation);
      if (s.contains("layer_sweep") && !s["layer_sweep"].is_null()) {
        const json& ls = s["layer_sweep"];
        check_keys(ls, "steer.layer_sweep", {"kind", "coefficient"});
        LayerSweepSection sweep;
        if (ls.contains("kind")) sweep.kind = parse_site_kind(ls["kind"].get<std::string>());
        if (sweep.kind != SiteKind::AttnOutput && sweep.kind != SiteKind::MlpOutput)
          throw ConfigError("steer.layer_sweep: kind must be attn_output or mlp_output");
        sweep.coefficient = ls.value("coefficient", sweep.coefficient);
        c.steer.layer_sweep = sweep;
      }
    }

    if (doc.contains("ablate")) {
      const json& a = doc["ablate"];
      check_keys(a, "ablate", {"selections", "configuration", "runs", "max_new", "temperature"});
      if (a.contains("selections")) {
        std::vector<HeadSelection> sel;
        for (const json& x : a["selections"]) sel.push_back(HeadSelection::from_json(x));
        c.ablate.selections = std::move(sel);
      }
      if (a.contains("configuration"))
        c.ablate.configuration = parse_configuration(a["configuration"].get<std::string>());
      c.ablate.runs = a.value("runs", c.ablate.runs);
      c.ablate.generation = parse_generation(a, c.ablate.generation);
    }

    if (doc.contains("pareto")) {
      const json& p = doc["pareto"];
      check_keys(p, "pareto", {"tau"});
      c.pareto.tau = p.value("tau", c.pareto.tau);
    }

    if (doc.contains("judge")) {
      const json& j = doc["judge"];
      c.judge.kind = j.value("kind", c.judge.kind);
      if (c.judge.kind == "synthetic") {
        check_keys(j, "judge", {"kind"});
      } else if (c.judge.kind == "llm") {
        json rest = j;
        rest.erase("kind");
        c.judge.llm = LlmJudgeConfig::from_json(rest);
      } else {
        throw ConfigError("judge: kind must be 'synthetic' or 'llm'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json doc = read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc, path.parent_path());
}

}  // namespace headsteer::cli
