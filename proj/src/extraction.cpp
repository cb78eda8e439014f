#include "headsteer/extraction.hpp"

#include <algorithm>
#include <set>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"
#include "headsteer/parallel.hpp"
#include "headsteer/rng.hpp"

namespace headsteer {

namespace {

constexpr std::string_view kBankFormat = "headsteer.activation_bank";
constexpr std::string_view kVectorFormat = "headsteer.steering_vectors";

Condition parse_condition(const std::string& s) {
  if (s == "target") return Condition::Target;
  if (s == "neutral") return Condition::Neutral;
  throw ConfigError("unknown condition '" + s + "'");
}

std::string entry_name(const std::string& id, const Site& site) { return id + "|" + to_string(site); }

}  // namespace

std::size_t ActivationBank::count(Condition c) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [c](const BankSample& s) { return s.condition == c; }));
}

bool ActivationBank::stores(const Site& site) const {
  return std::find(sites.begin(), sites.end(), site) != sites.end();
}

void ActivationBank::validate(const ModelConfig& config) const {
  for (const auto& s : samples) {
    for (const auto& site : sites) {
      auto it = s.means.find(site);
      if (it == s.means.end()) throw ShapeError("bank sample " + s.id + " lacks site " + to_string(site));
      if (it->second.size() != site_dim(site, config))
        throw ShapeError("bank sample " + s.id + " has a mis-sized vector at " + to_string(site));
    }
  }
}

std::string sample_id(Condition c, std::size_t pair, std::size_t question) {
  return std::string(condition_name(c)) + "/p" + std::to_string(pair) + "/q" + std::to_string(question);
}

std::uint64_t sample_seed(std::uint64_t base, Condition c, std::size_t pair, std::size_t question) {
  return derive_seed(base, {c == Condition::Target ? 1u : 2u, pair, question});
}

std::vector<float> mean_rows(const Tensor& rows, std::size_t from) {
  const std::size_t n = rows.rows();
  if (from >= n) throw ConfigError("mean_rows: empty range");
  std::vector<double> acc(rows.cols(), 0.0);
  for (std::size_t r = from; r < n; ++r) {
    auto row = rows.row(r);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += row[j];
  }
  std::vector<float> out(acc.size());
  const double count = static_cast<double>(n - from);
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] / count);
  return out;
}

ActivationBank collect(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                       std::span<const Site> sites, const CollectOptions& options) {
  persona.validate();
  const ModelConfig& config = model.config();
  std::set<Site> stored;
  for (const Site& s : sites) {
    validate_site(s, config);
    stored.insert(s.is_head() ? Site::head_concat(s.layer) : s);
  }
  if (stored.empty()) throw ConfigError("collect: no sites requested");

  ActivationBank bank;
  bank.persona = persona.name;
  bank.sites.assign(stored.begin(), stored.end());

  struct Job {
    Condition condition;
    std::size_t pair, question;
  };
  std::vector<Job> jobs;
  for (Condition c : {Condition::Target, Condition::Neutral})
    for (std::size_t p = 0; p < persona.prompt_pairs.size(); ++p)
      for (std::size_t q = 0; q < persona.extraction_questions.size(); ++q) jobs.push_back({c, p, q});

  std::vector<BankSample> results(jobs.size());
  parallel_for(jobs.size(), options.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    BankSample& s = results[i];
    s.id = sample_id(job.condition, job.pair, job.question);
    s.condition = job.condition;
    s.pair = job.pair;
    s.question = job.question;
    s.seed = sample_seed(options.seed, job.condition, job.pair, job.question);

    auto prompt = tokenizer.chat_prompt(persona.system_prompt(job.condition, job.pair),
                                        persona.extraction_questions[job.question]);
    GenerateOptions go;
    go.max_new = options.max_new;
    go.temperature = options.temperature;
    go.seed = s.seed;
    auto response = generate(model, prompt, go);
    s.response_tokens = response.size();
    if (response.empty()) return;

    std::vector<TokenId> seq = prompt;
    seq.insert(seq.end(), response.begin(), response.end());
    ForwardOptions fo;
    fo.capture = bank.sites;
    ForwardTrace trace = forward(model, seq, fo);
    for (const Site& site : bank.sites) s.means[site] = mean_rows(trace.at(site), prompt.size());
  });

  for (auto& s : results) {
    if (s.response_tokens == 0)
      bank.skipped.push_back({s.id, "empty generation"});
    else
      bank.samples.push_back(std::move(s));
  }
  return bank;
}

std::vector<float> mean_difference(std::span<const std::vector<float>* const> target,
                                   std::span<const std::vector<float>* const> neutral) {
  if (target.empty() || neutral.empty()) throw ConfigError("mean_difference: a condition has no samples");
  const std::size_t dim = target.front()->size();
  auto mean = [dim](std::span<const std::vector<float>* const> set) {
    std::vector<double> acc(dim, 0.0);
    for (const auto* v : set) {
      if (v->size() != dim) throw ShapeError("mean_difference: vectors of different lengths");
      for (std::size_t j = 0; j < dim; ++j) acc[j] += (*v)[j];
    }
    for (double& a : acc) a /= static_cast<double>(set.size());
    return acc;
  };
  const auto mt = mean(target);
  const auto mn = mean(neutral);
  std::vector<float> out(dim);
  for (std::size_t j = 0; j < dim; ++j) out[j] = static_cast<float>(mt[j] - mn[j]);
  return out;
}

SteeringVector diff_in_means(const ActivationBank& bank, const Site& site, const ModelConfig& config) {
  validate_site(site, config);
  const Site source = site.is_head() ? Site::head_concat(site.layer) : site;
  if (!bank.stores(source)) throw ConfigError("bank has no activations for " + to_string(site));

  // Head slices are cut before averaging; slicing commutes with the mean, so
  // this equals slicing the HeadConcat vector.
  std::vector<std::vector<float>> sliced;
  if (site.is_head()) sliced.reserve(bank.samples.size());
  std::vector<const std::vector<float>*> target, neutral;
  for (const auto& s : bank.samples) {
    const std::vector<float>* v = &s.means.at(source);
    if (site.is_head()) {
      const auto off = static_cast<std::ptrdiff_t>(site.head * config.d_head);
      sliced.emplace_back(v->begin() + off, v->begin() + off + static_cast<std::ptrdiff_t>(config.d_head));
      v = &sliced.back();
    }
    (s.condition == Condition::Target ? target : neutral).push_back(v);
  }
  if (target.empty() || neutral.empty())
    throw ConfigError("diff_in_means at " + to_string(site) + ": bank has " + std::to_string(target.size()) +
                      " target and " + std::to_string(neutral.size()) + " neutral samples");
  SteeringVector out;
  out.site = site;
  out.persona = bank.persona;
  out.direction = mean_difference(target, neutral);
  out.n_target = target.size();
  out.n_neutral = neutral.size();
  return out;
}

VectorSet diff_in_means_all(const ActivationBank& bank, const ModelConfig& config) {
  VectorSet out;
  for (const Site& site : bank.sites) {
    out.emplace(site, diff_in_means(bank, site, config));
    if (site.kind == SiteKind::HeadConcat) {
      const auto& whole = out.at(site);
      auto parts = head_concat_split(whole.direction, config.n_heads, config.d_head);
      for (std::size_t i = 0; i < parts.size(); ++i) {
        SteeringVector hv = whole;
        hv.site = Site::attention_head(site.layer, i);
        hv.direction = std::move(parts[i]);
        out.emplace(hv.site, std::move(hv));
      }
    }
  }
  return out;
}

std::vector<std::vector<float>> head_concat_split(std::span<const float> concat, std::size_t n_heads,
                                                  std::size_t d_head) {
  if (n_heads == 0 || d_head == 0 || concat.size() != n_heads * d_head)
    throw ShapeError("head_concat_split: length " + std::to_string(concat.size()) + " is not " +
                     std::to_string(n_heads) + " x " + std::to_string(d_head));
  std::vector<std::vector<float>> out(n_heads);
  for (std::size_t i = 0; i < n_heads; ++i) out[i].assign(concat.begin() + i * d_head, concat.begin() + (i + 1) * d_head);
  return out;
}

std::vector<float> head_concat_join(const std::vector<std::vector<float>>& heads) {
  std::vector<float> out;
  for (const auto& h : heads) out.insert(out.end(), h.begin(), h.end());
  return out;
}

void save_bank(const std::filesystem::path& manifest, const ActivationBank& bank) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : bank.sites) sites.push_back(to_string(s));
  nlohmann::json samples = nlohmann::json::array();
  std::vector<ArchiveEntry> entries;
  for (const auto& s : bank.samples) {
    samples.push_back({{"id", s.id},
                       {"condition", condition_name(s.condition)},
                       {"pair", s.pair},
                       {"question", s.question},
                       {"seed", s.seed},
                       {"response_tokens", s.response_tokens}});
    for (const auto& site : bank.sites) {
      const auto& v = s.means.at(site);
      entries.push_back({entry_name(s.id, site), {v.size()}, v});
    }
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : bank.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  write_archive(manifest, kBankFormat,
                {{"persona", bank.persona}, {"sites", sites}, {"samples", samples}, {"skipped", skipped}}, entries);
}

ActivationBank load_bank(const std::filesystem::path& manifest) {
  Archive a = read_archive(manifest, kBankFormat);
  ActivationBank bank;
  try {
    bank.persona = a.header.at("persona").get<std::string>();
    for (const auto& s : a.header.at("sites")) bank.sites.push_back(parse_site(s.get<std::string>()));
    for (const auto& j : a.header.at("samples")) {
      BankSample s;
      s.id = j.at("id").get<std::string>();
      s.condition = parse_condition(j.at("condition").get<std::string>());
      s.pair = j.at("pair").get<std::size_t>();
      s.question = j.at("question").get<std::size_t>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.response_tokens = j.at("response_tokens").get<std::size_t>();
      for (const auto& site : bank.sites) {
        const ArchiveEntry* e = a.find(entry_name(s.id, site));
        if (!e) throw ConfigError(manifest.string() + ": missing tensor " + entry_name(s.id, site));
        s.means[site] = e->data;
      }
      bank.samples.push_back(std::move(s));
    }
    for (const auto& j : a.header.at("skipped"))
      bank.skipped.push_back({j.at("id").get<std::string>(), j.at("reason").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
  return bank;
}

void save_vectors(const std::filesystem::path& manifest, const VectorSet& vectors) {
  nlohmann::json meta = nlohmann::json::array();
  std::vector<ArchiveEntry> entries;
  std::string persona;
  for (const auto& [site, v] : vectors) {
    persona = v.persona;
    meta.push_back({{"site", to_string(site)}, {"n_target", v.n_target}, {"n_neutral", v.n_neutral}});
    entries.push_back({to_string(site), {v.direction.size()}, v.direction});
  }
  write_archive(manifest, kVectorFormat, {{"persona", persona}, {"vectors", meta}}, entries);
}

VectorSet load_vectors(const std::filesystem::path& manifest) {
  Archive a = read_archive(manifest, kVectorFormat);
  VectorSet out;
  try {
    const auto persona = a.header.at("persona").get<std::string>();
    for (const auto& j : a.header.at("vectors")) {
      SteeringVector v;
      const auto name = j.at("site").get<std::string>();
      v.site = parse_site(name);
      v.persona = persona;
      v.n_target = j.at("n_target").get<std::size_t>();
      v.n_neutral = j.at("n_neutral").get<std::size_t>();
      const ArchiveEntry* e = a.find(name);
      if (!e) throw ConfigError(manifest.string() + ": missing tensor " + name);
      v.direction = e->data;
      out.emplace(v.site, std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
  return out;
}

}  // namespace headsteer
