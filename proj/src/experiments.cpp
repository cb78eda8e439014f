#include "headsteer/experiments.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "headsteer/errors.hpp"
#include "headsteer/parallel.hpp"
#include "headsteer/rng.hpp"

namespace headsteer {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string_view configuration_name(Configuration c) {
  switch (c) {
    case Configuration::NeutralPlusAlpha: return "neutral_plus_alpha";
    case Configuration::TargetMinusAlpha: return "target_minus_alpha";
    case Configuration::TargetPlusAlpha: return "target_plus_alpha";
    case Configuration::NeutralMinusAlpha: return "neutral_minus_alpha";
  }
  return "?";
}

Configuration parse_configuration(std::string_view name) {
  for (auto c : {Configuration::NeutralPlusAlpha, Configuration::TargetMinusAlpha, Configuration::TargetPlusAlpha,
                 Configuration::NeutralMinusAlpha})
    if (configuration_name(c) == name) return c;
  throw ConfigError("unknown configuration '" + std::string(name) + "'");
}

Condition prompt_condition(Configuration c) {
  return c == Configuration::NeutralPlusAlpha || c == Configuration::NeutralMinusAlpha ? Condition::Neutral
                                                                                       : Condition::Target;
}

double configuration_sign(Configuration c) {
  return c == Configuration::TargetMinusAlpha || c == Configuration::NeutralMinusAlpha ? -1.0 : 1.0;
}

std::string_view site_set_kind_name(SiteSetKind k) {
  switch (k) {
    case SiteSetKind::MlpResidual: return "mlp_residual";
    case SiteSetKind::AttnResidual: return "attn_residual";
    case SiteSetKind::AttnOutput: return "attn_output";
    case SiteSetKind::HeadCor: return "head_cor";
    case SiteSetKind::HeadCorAnti: return "head_cor_anti";
    case SiteSetKind::Explicit: return "explicit";
  }
  return "?";
}

SiteSetKind parse_site_set_kind(std::string_view name) {
  for (auto k : {SiteSetKind::MlpResidual, SiteSetKind::AttnResidual, SiteSetKind::AttnOutput, SiteSetKind::HeadCor,
                 SiteSetKind::HeadCorAnti, SiteSetKind::Explicit})
    if (site_set_kind_name(k) == name) return k;
  throw ConfigError("unknown site set '" + std::string(name) + "'");
}

std::vector<Site> SiteSet::sites() const {
  switch (kind) {
    case SiteSetKind::MlpResidual: return {Site::resid_post_mlp(layer)};
    case SiteSetKind::AttnResidual: return {Site::resid_post_attn(layer)};
    case SiteSetKind::AttnOutput: return {Site::attn_output(layer)};
    case SiteSetKind::HeadCor:
    case SiteSetKind::HeadCorAnti: {
      std::vector<Site> out;
      for (const auto& h : heads.correlated) out.push_back(Site::attention_head(h.layer, h.head));
      if (kind == SiteSetKind::HeadCorAnti)
        for (const auto& h : heads.anti_correlated) out.push_back(Site::attention_head(h.layer, h.head));
      return out;
    }
    case SiteSetKind::Explicit: return explicit_sites;
  }
  return {};
}

std::string SiteSet::label() const {
  if (kind != SiteSetKind::Explicit) return std::string(site_set_kind_name(kind));
  std::string out = "explicit";
  for (const auto& s : explicit_sites) out += (out.size() == 8 ? "[" : "+") + to_string(s);
  return out + (explicit_sites.empty() ? "" : "]");
}

nlohmann::json SiteSet::to_json() const {
  nlohmann::json j{{"kind", site_set_kind_name(kind)}};
  switch (kind) {
    case SiteSetKind::MlpResidual:
    case SiteSetKind::AttnResidual:
    case SiteSetKind::AttnOutput: j["layer"] = layer; break;
    case SiteSetKind::HeadCor:
    case SiteSetKind::HeadCorAnti: j["heads"] = heads.to_json(); break;
    case SiteSetKind::Explicit: {
      j["sites"] = nlohmann::json::array();
      for (const auto& s : explicit_sites) j["sites"].push_back(to_string(s));
      break;
    }
  }
  return j;
}

SiteSet SiteSet::from_json(const nlohmann::json& j) {
  try {
    SiteSet s;
    s.kind = parse_site_set_kind(j.at("kind").get<std::string>());
    switch (s.kind) {
      case SiteSetKind::MlpResidual:
      case SiteSetKind::AttnResidual:
      case SiteSetKind::AttnOutput: s.layer = j.at("layer").get<std::size_t>(); break;
      case SiteSetKind::HeadCor:
      case SiteSetKind::HeadCorAnti: s.heads = HeadSelection::from_json(j.at("heads")); break;
      case SiteSetKind::Explicit:
        for (const auto& x : j.at("sites")) s.explicit_sites.push_back(parse_site(x.get<std::string>()));
        break;
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("site set: ") + e.what());
  }
}

std::vector<double> default_coefficients(SiteSetKind kind) {
  std::vector<double> grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0};
  if (kind == SiteSetKind::HeadCor || kind == SiteSetKind::HeadCorAnti) {
    grid.push_back(12.0);
    grid.push_back(14.0);
  }
  return grid;
}

void ExperimentPlan::validate() const {
  if (runs == 0) throw ConfigError("plan: runs must be at least 1");
  if (coefficients.empty()) throw ConfigError("plan: no coefficients");
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    if (!std::isfinite(coefficients[k])) throw ConfigError("plan: non-finite coefficient");
    if (k > 0 && !(std::fabs(coefficients[k]) > std::fabs(coefficients[k - 1])))
      throw ConfigError("plan: coefficients must be strictly increasing in magnitude");
  }
  if (site_set.sites().empty()) throw ConfigError("plan: site set '" + site_set.label() + "' is empty");
}

std::vector<Intervention> steering_interventions(const SiteSet& set, const VectorSet& vectors, double signed_alpha) {
  std::vector<Intervention> out;
  for (const Site& s : set.sites()) {
    auto it = vectors.find(s);
    if (it == vectors.end()) throw ConfigError("no steering vector for " + to_string(s));
    out.push_back(Intervention::add(s, it->second.direction, static_cast<float>(signed_alpha)));
  }
  return out;
}

std::uint64_t run_seed(std::uint64_t base, std::size_t coefficient_index, std::size_t run) {
  return derive_seed(base, {coefficient_index, run});
}

RunRecord run_cell(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona, Condition condition,
                   const std::vector<Intervention>& interventions, std::uint64_t seed,
                   const GenerationParams& generation, const Judge& judge, std::size_t jobs) {
  for (const auto& iv : interventions) validate_intervention(iv, model.config());
  const std::size_t nq = persona.eval_questions.size();
  const std::size_t n = persona.prompt_pairs.size() * nq;

  RunRecord rec;
  rec.persona = persona.name;
  rec.seed = seed;
  rec.samples.resize(n);
  const std::vector<TokenId> eos{Tokenizer::kEos};

  parallel_for(n, jobs, [&](std::size_t k) {
    SampleRecord& s = rec.samples[k];
    s.pair = k / nq;
    s.question = k % nq;
    s.id = "p" + std::to_string(s.pair) + "/q" + std::to_string(s.question);
    s.question_text = persona.eval_questions[s.question];
    s.system_prompt = persona.system_prompt(condition, s.pair);

    const auto prompt = tokenizer.chat_prompt(s.system_prompt, s.question_text);
    GenerateOptions go;
    go.max_new = generation.max_new;
    go.temperature = generation.temperature;
    go.seed = derive_seed(seed, {s.pair, s.question});
    const auto base = generate(model, prompt, go);
    go.interventions = interventions;
    const auto steered = interventions.empty() ? base : generate(model, prompt, go);

    // An empty response is scored by its end-of-sequence token.
    const auto scoring_prompt = tokenizer.chat_prompt("", s.question_text);
    auto nll = [&](const std::vector<TokenId>& r) {
      return sequence_nll(model, scoring_prompt, r.empty() ? std::span<const TokenId>(eos) : std::span<const TokenId>(r));
    };
    s.text = tokenizer.decode(steered);
    s.n_tokens = steered.size();
    s.nll = nll(steered);
    s.nll_base = interventions.empty() ? s.nll : nll(base);
    const JudgeResult jr = judge.judge({persona.name + "/" + s.id, s.question_text, s.text, s.nll, s.nll_base});
    s.trait = jr.trait.value;
    s.coherency = jr.coherency.value;
  });
  rec.aggregate();
  return rec;
}

std::vector<RunRecord> run_sweep(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                 const VectorSet& vectors, const ExperimentPlan& plan, const Judge& judge) {
  plan.validate();
  persona.validate();
  const double sign = configuration_sign(plan.configuration);
  const Condition condition = prompt_condition(plan.configuration);
  std::vector<std::vector<Intervention>> ivs;
  for (double a : plan.coefficients) ivs.push_back(steering_interventions(plan.site_set, vectors, sign * a));

  const std::size_t cells = plan.coefficients.size() * plan.runs;
  std::vector<RunRecord> out(cells);
  // Parallelism is spent across cells; each cell runs its samples serially.
  parallel_for(cells, plan.jobs, [&](std::size_t k) {
    const std::size_t ci = k / plan.runs, run = k % plan.runs;
    RunRecord r = run_cell(model, tokenizer, persona, condition, ivs[ci], run_seed(plan.seed, ci, run),
                           plan.generation, judge, 1);
    r.configuration = std::string(configuration_name(plan.configuration));
    r.site_set = plan.site_set.label();
    r.coefficient = plan.coefficients[ci];
    r.coefficient_index = ci;
    r.run = run;
    out[k] = std::move(r);
  });
  return out;
}

namespace {

template <typename T>
void fill_means(T& agg, const std::vector<RunRecord>& records) {
  double t = 0.0, c = 0.0, n = 0.0;
  for (const auto& r : records) {
    t += r.mean_trait;
    c += r.mean_coherency;
    n += r.mean_nll;
  }
  const double k = static_cast<double>(records.size());
  agg.mean_trait = t / k;
  agg.mean_coherency = c / k;
  agg.mean_nll = n / k;
}

}  // namespace

std::vector<LayerAggregate> run_layer_sweep(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                            const VectorSet& vectors, SiteKind kind, double coefficient,
                                            const Judge& judge, const SweepOptions& options) {
  if (kind != SiteKind::AttnOutput && kind != SiteKind::MlpOutput)
    throw ConfigError("layer sweep runs at attn_output or mlp_output");
  std::vector<LayerAggregate> out;
  for (std::size_t l = 0; l < model.config().n_layers; ++l) {
    ExperimentPlan plan;
    plan.persona = persona.name;
    plan.configuration = options.configuration;
    plan.site_set = SiteSet::explicit_list({Site{kind, l, 0}});
    plan.coefficients = {coefficient};
    plan.runs = options.runs;
    plan.generation = options.generation;
    plan.seed = options.seed;
    plan.jobs = options.jobs;
    LayerAggregate agg;
    agg.layer = l;
    agg.records = run_sweep(model, tokenizer, persona, vectors, plan, judge);
    fill_means(agg, agg.records);
    out.push_back(std::move(agg));
  }
  return out;
}

std::vector<AblationStep> run_zero_ablation(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                            const std::vector<HeadSelection>& selections, const Judge& judge,
                                            const SweepOptions& options) {
  if (options.runs == 0) throw ConfigError("ablation: runs must be at least 1");
  persona.validate();
  const Condition condition = prompt_condition(options.configuration);
  std::vector<AblationStep> out;
  std::vector<HeadRef> ablated;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t step = 0; step <= selections.size(); ++step) {
    if (step > 0)
      for (const auto& h : selections[step - 1].correlated)
        if (seen.insert({h.layer, h.head}).second) ablated.push_back(h);
    std::vector<Intervention> ivs;
    for (const auto& h : ablated) ivs.push_back(Intervention::zero(Site::attention_head(h.layer, h.head)));

    AblationStep st;
    st.step = step;
    st.ablated = ablated;
    st.records.resize(options.runs);
    std::string label = "ablation";
    for (const auto& h : ablated) label += ":" + std::to_string(h.layer) + "." + std::to_string(h.head);
    parallel_for(options.runs, options.jobs, [&](std::size_t run) {
      RunRecord r = run_cell(model, tokenizer, persona, condition, ivs, run_seed(options.seed, 0, run),
                             options.generation, judge, 1);
      r.configuration = std::string(configuration_name(options.configuration));
      r.site_set = label;
      r.coefficient = 0.0;
      r.coefficient_index = step;
      r.run = run;
      st.records[run] = std::move(r);
    });
    fill_means(st, st.records);
    out.push_back(std::move(st));
  }
  return out;
}

std::string summary_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "site_set,configuration,coefficient,run,seed,mean_trait,mean_coherency,mean_nll\n";
  for (const auto& r : records)
    os << r.site_set << ',' << r.configuration << ',' << format_double(r.coefficient) << ',' << r.run << ',' << r.seed
       << ',' << format_double(r.mean_trait) << ',' << format_double(r.mean_coherency) << ','
       << format_double(r.mean_nll) << '\n';
  return os.str();
}

}  // namespace headsteer
