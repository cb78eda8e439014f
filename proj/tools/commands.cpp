#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"
#include "headsteer/evaluation.hpp"
#include "headsteer/experiments.hpp"
#include "headsteer/extraction.hpp"
#include "headsteer/fixtures.hpp"
#include "headsteer/localization.hpp"

namespace headsteer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Session {
  const RunConfig& config;
  Model model;
  Tokenizer tokenizer;
  PersonaSpec persona;

  explicit Session(const RunConfig& c)
      : config(c), model(load_checked(c)), tokenizer(make_tokenizer(c)), persona(load_persona(c.persona)) {
    persona.validate();
    if (tokenizer.size() > model.config().vocab_size)
      throw ConfigError("tokenizer has more tokens than the model's vocabulary");
  }

  fs::path dir(const std::string& command) const { return config.outdir / persona.name / command; }

  static Model load_checked(const RunConfig& c) {
    c.check_files();
    return load_model(c.model);
  }
  static Tokenizer make_tokenizer(const RunConfig& c) {
    return c.vocabulary.empty() ? Tokenizer() : Tokenizer::from_vocabulary_file(c.vocabulary);
  }
};

void log(const std::string& msg) { std::fprintf(stderr, "headsteer: %s\n", msg.c_str()); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Artifact directories are rebuilt from scratch so reruns never mix outputs.
fs::path fresh_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw ConfigError(path.string() + " not found; run `headsteer " + producer + "` first");
  return path;
}

std::unique_ptr<Judge> make_judge(const RunConfig& config, const PersonaSpec& persona) {
  if (config.judge.kind == "llm")
    return std::make_unique<LlmJudge>(config.judge.llm, persona,
                                      make_http_transport(config.judge.llm.base_url, config.judge.llm.timeout));
  return std::make_unique<SyntheticJudge>(persona.synthetic);
}

struct Selection {
  std::size_t layer = 0;
  HeadSelection heads;
};

Selection load_selection(const Session& s) {
  const json j = read_json_file(require(s.dir("localize") / "selection.json", "localize"));
  try {
    return {j.at("layer").get<std::size_t>(), HeadSelection::from_json(j.at("selection"))};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("selection.json: ") + e.what());
  }
}

// Fills a site set's missing layer or heads from the localize selection.
SiteSet resolve_site_set(const Session& s, const json& spec) {
  json j = spec;
  const SiteSetKind kind = parse_site_set_kind(j.at("kind").get<std::string>());
  const bool head_kind = kind == SiteSetKind::HeadCor || kind == SiteSetKind::HeadCorAnti;
  const bool layer_kind =
      kind == SiteSetKind::MlpResidual || kind == SiteSetKind::AttnResidual || kind == SiteSetKind::AttnOutput;
  if ((head_kind && !j.contains("heads")) || (layer_kind && !j.contains("layer"))) {
    const Selection sel = load_selection(s);
    if (head_kind) j["heads"] = sel.heads.to_json();
    if (layer_kind) j["layer"] = sel.layer;
  }
  SiteSet set = SiteSet::from_json(j);
  for (const Site& site : set.sites()) validate_site(site, s.model.config());
  return set;
}

std::vector<SiteSetEntry> default_site_sets(const Session& s) {
  std::vector<SiteSetEntry> out;
  for (const char* kind : {"mlp_residual", "attn_residual", "attn_output", "head_cor"})
    out.push_back({kind, json{{"kind", kind}}});
  if (!load_selection(s).heads.anti_correlated.empty())
    out.push_back({"head_cor_anti", json{{"kind", "head_cor_anti"}}});
  return out;
}

std::vector<Site> parse_sites(const std::vector<std::string>& names, const ModelConfig& mc) {
  std::vector<Site> sites;
  for (const auto& n : names) {
    if (n == "all") {
      for (const Site& site : layer_sites(mc)) sites.push_back(site);
      continue;
    }
    Site site = parse_site(n);
    validate_site(site, mc);
    sites.push_back(site);
  }
  std::sort(sites.begin(), sites.end());
  sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  return sites;
}

double norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::string file_label(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
  return out;
}

}  // namespace

fs::path cmd_extract(const RunConfig& config) {
  Session s(config);
  const ModelConfig& mc = s.model.config();
  const auto sites = config.extract.sites.empty() ? layer_sites(mc) : parse_sites(config.extract.sites, mc);

  CollectOptions opts;
  opts.max_new = config.extract.max_new;
  opts.temperature = config.extract.temperature;
  opts.seed = config.seed;
  opts.jobs = config.jobs;
  log("collecting " + std::to_string(2 * s.persona.prompt_pairs.size() * s.persona.extraction_questions.size()) +
      " samples at " + std::to_string(sites.size()) + " sites");
  const ActivationBank bank = collect(s.model, s.tokenizer, s.persona, sites, opts);
  const VectorSet vectors = diff_in_means_all(bank, mc);

  const fs::path dir = fresh_dir(s.dir("extract"));
  save_bank(dir / "bank.json", bank);
  save_vectors(dir / "vectors.json", vectors);

  json skipped = json::array();
  for (const auto& k : bank.skipped) skipped.push_back({{"id", k.id}, {"reason", k.reason}});
  write_json_file(dir / "skipped.json", skipped);
  if (!bank.skipped.empty()) log(std::to_string(bank.skipped.size()) + " samples skipped (empty generation)");

  std::string csv = "site,norm,n_target,n_neutral\n";
  for (const auto& [site, v] : vectors)
    csv += to_string(site) + "," + fmt(norm(v.direction)) + "," + std::to_string(v.n_target) + "," +
           std::to_string(v.n_neutral) + "\n";
  write_text_file(dir / "vectors.csv", csv);
  write_json_file(dir / "config.json", config.document);
  return dir;
}

fs::path cmd_localize(const RunConfig& config) {
  Session s(config);
  const ModelConfig& mc = s.model.config();
  const fs::path ex = s.dir("extract");
  const ActivationBank bank = load_bank(require(ex / "bank.json", "extract"));
  const VectorSet vectors = load_vectors(require(ex / "vectors.json", "extract"));
  if (vectors.empty()) throw ConfigError("no steering vectors in " + ex.string());

  const fs::path dir = fresh_dir(s.dir("localize"));

  auto present = [&](const std::vector<Site>& all) {
    std::vector<Site> out;
    for (const Site& site : all)
      if (vectors.count(site)) out.push_back(site);
    return out;
  };
  std::vector<Site> outputs;
  for (std::size_t l = 0; l < mc.n_layers; ++l) {
    outputs.push_back(Site::attn_output(l));
    outputs.push_back(Site::mlp_output(l));
  }

  json transition = json::object();
  transition["threshold"] = config.localize.threshold;
  const auto inputs = present(residual_input_sites(mc));
  if (!inputs.empty()) {
    const SimilarityMatrix m = layer_similarity(vectors, inputs);
    write_text_file(dir / "similarity_inputs.csv", m.to_csv());
    write_json_file(dir / "similarity_inputs.json", m.to_json());
    const auto idx = transition_index(m, config.localize.threshold);
    transition["site"] = idx ? json(to_string(m.labels[*idx])) : json(nullptr);
    transition["layer"] = idx ? json(m.labels[*idx].layer) : json(nullptr);
  }
  const auto outs = present(outputs);
  if (!outs.empty()) {
    const SimilarityMatrix m = layer_similarity(vectors, outs);
    write_text_file(dir / "similarity_outputs.csv", m.to_csv());
    write_json_file(dir / "similarity_outputs.json", m.to_json());
  }
  write_json_file(dir / "transition.json", transition);

  std::vector<std::size_t> layers;
  for (std::size_t l = 0; l < mc.n_layers; ++l)
    if (bank.stores(Site::head_concat(l)) && bank.stores(Site::attn_output(l))) layers.push_back(l);
  if (layers.empty()) throw ConfigError("bank has no layer with both head_concat and attn_output; re-run extract");
  const ContributionTable table = contribution_table(bank, layers, s.model);
  write_text_file(dir / "contributions.csv", table.to_csv());
  write_json_file(dir / "contributions.json", table.to_json());

  // Selection layer: configured, else the transition layer, else the layer
  // holding the single highest score.
  std::optional<std::size_t> layer = config.localize.layer;
  if (!layer && transition.contains("layer") && !transition["layer"].is_null() &&
      std::find(layers.begin(), layers.end(), transition["layer"].get<std::size_t>()) != layers.end())
    layer = transition["layer"].get<std::size_t>();
  std::size_t row = 0;
  if (layer) {
    const auto it = std::find(layers.begin(), layers.end(), *layer);
    if (it == layers.end()) throw ConfigError("localize: layer " + std::to_string(*layer) + " not in bank");
    row = static_cast<std::size_t>(it - layers.begin());
  } else {
    double best = -INFINITY;
    for (std::size_t r = 0; r < layers.size(); ++r)
      for (double v : table.scores[r])
        if (v > best) best = v, row = r;
  }
  const std::size_t k_pos = std::min(config.localize.k_pos, mc.n_heads);
  const std::size_t k_neg = std::min(config.localize.k_neg, mc.n_heads);
  const HeadSelection sel = select_heads(table.scores[row], layers[row], k_pos, k_neg);
  write_json_file(dir / "selection.json", {{"layer", layers[row]}, {"selection", sel.to_json()}});
  write_json_file(dir / "config.json", config.document);
  return dir;
}

fs::path cmd_steer(const RunConfig& config) {
  Session s(config);
  const VectorSet vectors = load_vectors(require(s.dir("extract") / "vectors.json", "extract"));
  const auto judge = make_judge(config, s.persona);
  const auto entries = config.steer.site_sets.empty() ? default_site_sets(s) : config.steer.site_sets;

  std::vector<std::pair<std::string, SiteSet>> sets;
  for (const auto& e : entries) sets.emplace_back(e.name, resolve_site_set(s, e.spec));

  const fs::path dir = fresh_dir(s.dir("steer"));
  json index = json::array();
  std::vector<RunRecord> all;
  for (const auto& [name, set] : sets) {
    ExperimentPlan plan;
    plan.persona = s.persona.name;
    plan.configuration = config.steer.configuration;
    plan.site_set = set;
    plan.coefficients = config.steer.coefficients ? *config.steer.coefficients : default_coefficients(set.kind);
    if (config.steer.include_zero && (plan.coefficients.empty() || plan.coefficients.front() != 0.0))
      plan.coefficients.insert(plan.coefficients.begin(), 0.0);
    plan.runs = config.steer.runs;
    plan.generation = config.steer.generation;
    plan.seed = config.seed;
    plan.jobs = config.jobs;
    log("steering " + name + ": " + std::to_string(plan.coefficients.size()) + " coefficients x " +
        std::to_string(plan.runs) + " runs");
    const auto records = run_sweep(s.model, s.tokenizer, s.persona, vectors, plan, *judge);
    const std::string file = "records_" + file_label(name) + ".jsonl";
    write_text_file(dir / file, to_jsonl(records));
    index.push_back({{"name", name}, {"label", set.label()}, {"site_set", set.to_json()}, {"records", file}});
    all.insert(all.end(), records.begin(), records.end());
  }
  write_json_file(dir / "site_sets.json", index);
  write_text_file(dir / "summary.csv", summary_csv(all));

  if (config.steer.layer_sweep) {
    SweepOptions opts;
    opts.configuration = config.steer.configuration;
    opts.runs = config.steer.runs;
    opts.generation = config.steer.generation;
    opts.seed = config.seed;
    opts.jobs = config.jobs;
    log("layer sweep at " + std::string(kind_name(config.steer.layer_sweep->kind)));
    const auto layers = run_layer_sweep(s.model, s.tokenizer, s.persona, vectors, config.steer.layer_sweep->kind,
                                        config.steer.layer_sweep->coefficient, *judge, opts);
    std::string csv = "layer,site,coefficient,mean_trait,mean_coherency,mean_nll\n";
    std::vector<RunRecord> recs;
    for (const auto& a : layers) {
      csv += std::to_string(a.layer) + "," + std::string(kind_name(config.steer.layer_sweep->kind)) + ":" +
             std::to_string(a.layer) + "," + fmt(config.steer.layer_sweep->coefficient) + "," + fmt(a.mean_trait) +
             "," + fmt(a.mean_coherency) + "," + fmt(a.mean_nll) + "\n";
      recs.insert(recs.end(), a.records.begin(), a.records.end());
    }
    write_text_file(dir / "layer_sweep.csv", csv);
    write_text_file(dir / "layer_sweep.jsonl", to_jsonl(recs));
  }
  write_json_file(dir / "config.json", config.document);
  return dir;
}

fs::path cmd_ablate(const RunConfig& config) {
  Session s(config);
  const auto judge = make_judge(config, s.persona);
  const std::vector<HeadSelection> selections =
      config.ablate.selections ? *config.ablate.selections : std::vector<HeadSelection>{load_selection(s).heads};
  for (const auto& sel : selections)
    for (const auto& h : sel.correlated) validate_site(Site::attention_head(h.layer, h.head), s.model.config());

  SweepOptions opts;
  opts.configuration = config.ablate.configuration;
  opts.runs = config.ablate.runs;
  opts.generation = config.ablate.generation;
  opts.seed = config.seed;
  opts.jobs = config.jobs;
  log("zero ablation over " + std::to_string(selections.size()) + " selection(s)");
  const auto steps = run_zero_ablation(s.model, s.tokenizer, s.persona, selections, *judge, opts);

  const fs::path dir = fresh_dir(s.dir("ablate"));
  std::string csv = "step,ablated,mean_trait,mean_coherency,mean_nll\n";
  std::vector<RunRecord> recs;
  for (const auto& st : steps) {
    std::string heads;
    for (const auto& h : st.ablated) heads += (heads.empty() ? "" : " ") + std::to_string(h.layer) + "." + std::to_string(h.head);
    csv += std::to_string(st.step) + "," + heads + "," + fmt(st.mean_trait) + "," + fmt(st.mean_coherency) + "," +
           fmt(st.mean_nll) + "\n";
    recs.insert(recs.end(), st.records.begin(), st.records.end());
  }
  write_text_file(dir / "ablation.csv", csv);
  write_text_file(dir / "records.jsonl", to_jsonl(recs));
  write_json_file(dir / "config.json", config.document);
  return dir;
}

fs::path cmd_pareto(const RunConfig& config) {
  Session s(config);
  const fs::path steer = s.dir("steer");
  const json index = read_json_file(require(steer / "site_sets.json", "steer"));
  std::vector<Frontier> frontiers;
  std::vector<std::string> labels;
  for (const json& e : index) {
    const auto records = from_jsonl(read_text_file(require(steer / e.at("records").get<std::string>(), "steer")));
    Frontier f = build_frontier(records);
    f.label = e.at("name").get<std::string>();
    for (auto& p : f.points) p.label = f.label;
    frontiers.push_back(std::move(f));
    labels.push_back(e.at("label").get<std::string>());
  }
  if (frontiers.empty()) throw ConfigError("steer produced no site sets");

  const double tau = config.pareto.tau;
  const fs::path dir = fresh_dir(s.dir("pareto"));
  json fj = json::array();
  for (const auto& f : frontiers) fj.push_back(f.to_json());
  write_json_file(dir / "frontiers.json", fj);

  const double common = common_max_coherency(frontiers, frontiers.front());
  json scores = {{"tau", tau}, {"common_max_coherency", common}, {"scores", json::array()}};
  std::string csv = "name,site_set,tau,common_max_coherency,upper,lower\n";
  for (std::size_t k = 0; k < frontiers.size(); ++k) {
    json row = {{"name", frontiers[k].label}, {"site_set", labels[k]}};
    std::string up = "", lo = "";
    if (tau < common) {
      const double u = envelope_score(frontiers, frontiers[k], tau, EnvelopeVariant::Upper);
      const double l = envelope_score(frontiers, frontiers[k], tau, EnvelopeVariant::Lower);
      row["upper"] = u;
      row["lower"] = l;
      up = fmt(u);
      lo = fmt(l);
    } else {
      row["upper"] = nullptr;
      row["lower"] = nullptr;
    }
    scores["scores"].push_back(row);
    csv += frontiers[k].label + "," + labels[k] + "," + fmt(tau) + "," + fmt(common) + "," + up + "," + lo + "\n";
  }
  if (!(tau < common))
    log("no common safe range: tau " + fmt(tau) + " >= common max coherency " + fmt(common) + "; scores left empty");
  write_json_file(dir / "scores.json", scores);
  write_text_file(dir / "scores.csv", csv);
  write_text_file(dir / "frontier.svg", frontier_svg(frontiers, tau));
  write_json_file(dir / "config.json", config.document);
  return dir;
}

fs::path cmd_report(const RunConfig& config) {
  Session s(config);
  std::ostringstream md;
  md << "# " << s.persona.name << "\n\n" << s.persona.definition << "\n";

  const fs::path ex = s.dir("extract");
  if (fs::exists(ex / "bank.json")) {
    const ActivationBank bank = load_bank(ex / "bank.json");
    md << "\n## Extraction\n\n"
       << "- target samples: " << bank.count(Condition::Target) << "\n"
       << "- neutral samples: " << bank.count(Condition::Neutral) << "\n"
       << "- skipped: " << bank.skipped.size() << "\n"
       << "- sites: " << bank.sites.size() << "\n";
  }

  const fs::path lo = s.dir("localize");
  if (fs::exists(lo / "selection.json")) {
    const json tr = read_json_file(lo / "transition.json");
    const Selection sel = load_selection(s);
    md << "\n## Localization\n\n";
    if (tr.contains("layer") && !tr["layer"].is_null())
      md << "- transition: " << tr["site"].get<std::string>() << " (threshold " << tr["threshold"].get<double>() << ")\n";
    else
      md << "- transition: none above threshold\n";
    md << "- selection layer: " << sel.layer << "\n- correlated heads:";
    for (const auto& h : sel.heads.correlated) md << " " << h.layer << "." << h.head;
    md << "\n- anti-correlated heads:";
    for (const auto& h : sel.heads.anti_correlated) md << " " << h.layer << "." << h.head;
    md << "\n";
  }

  const fs::path pa = s.dir("pareto");
  if (fs::exists(pa / "scores.json")) {
    const json sc = read_json_file(pa / "scores.json");
    md << "\n## Envelope scores (tau " << sc["tau"].get<double>() << ")\n\n"
       << "| site set | upper | lower |\n|---|---|---|\n";
    for (const json& r : sc["scores"]) {
      auto cell = [&](const char* k) { return r[k].is_null() ? std::string("n/a") : fixed(r[k].get<double>(), 2); };
      md << "| " << r["name"].get<std::string>() << " | " << cell("upper") << " | " << cell("lower") << " |\n";
    }
  }

  const fs::path ab = s.dir("ablate");
  if (fs::exists(ab / "ablation.csv")) {
    md << "\n## Zero ablation\n\n| step | ablated | trait | coherency |\n|---|---|---|---|\n";
    std::istringstream in(read_text_file(ab / "ablation.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::istringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      if (f.size() < 4) continue;
      md << "| " << f[0] << " | " << (f[1].empty() ? "-" : f[1]) << " | " << fixed(std::stod(f[2]), 2) << " | "
         << fixed(std::stod(f[3]), 2) << " |\n";
    }
  }

  const fs::path dir = fresh_dir(s.dir("report"));
  write_text_file(dir / "report.md", md.str());
  return dir;
}

fs::path cmd_fixture(const FixtureOptions& options) {
  PlantedModelSpec spec = options.spec.empty() ? PlantedModelSpec::reference()
                                               : PlantedModelSpec::from_json(read_json_file(options.spec));
  const PlantedModel pm = build_planted_model(spec, options.seed);
  const fs::path dir = fresh_dir(options.outdir / pm.persona.name / "fixture");
  save_model(dir / "model.json", pm.config, pm.weights);
  save_persona(dir / "persona.json", pm.persona);

  auto tokens = [](const std::vector<TokenId>& v) {
    std::string s;
    for (TokenId t : v) s += static_cast<char>(t);
    return s;
  };
  write_json_file(dir / "fixture.json", {{"spec", spec.to_json()},
                                         {"seed", options.seed},
                                         {"planted_layer", spec.planted_layer},
                                         {"planted_head", spec.planted_head},
                                         {"style_direction", pm.style_direction},
                                         {"trigger_direction", pm.trigger_direction},
                                         {"trigger_tokens", tokens(pm.trigger_tokens)},
                                         {"keyword_tokens", tokens(pm.keyword_tokens)}});

  // Results land next to the fixture: <outdir>/planted/<command>/.
  const json run = {{"model", "model.json"},
                    {"persona", "persona.json"},
                    {"outdir", "../.."},
                    {"seed", options.seed},
                    {"extract", {{"max_new", 48}}},
                    {"localize", {{"layer", spec.planted_layer}, {"k_pos", 1}, {"k_neg", 1}}},
                    {"steer",
                     {{"configuration", "neutral_plus_alpha"},
                      {"runs", 2},
                      {"max_new", 48},
                      {"coefficients", {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0}},
                      {"site_sets", {{{"kind", "head_cor"}}, {{"kind", "mlp_residual"}}}},
                      {"layer_sweep", {{"kind", "attn_output"}, {"coefficient", kLayerSweepCoefficient}}}}},
                    {"ablate", {{"runs", 2}, {"max_new", 48}}},
                    {"judge", {{"kind", "synthetic"}}}};
  write_json_file(dir / "run.json", run);
  return dir;
}

}  // namespace headsteer::cli
