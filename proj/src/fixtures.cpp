#include "headsteer/fixtures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "headsteer/errors.hpp"
#include "headsteer/rng.hpp"

namespace headsteer {

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

void normalize(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  for (double& x : v) x /= n;
}

void project_out(Vec& v, const Vec& unit) {
  const double p = dot(v, unit);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * unit[i];
}

Vec random_unit(Rng& rng, std::size_t d, std::initializer_list<const Vec*> orth) {
  Vec v(d);
  for (double& x : v) x = normal01(rng);
  for (const Vec* o : orth) project_out(v, *o);
  normalize(v);
  return v;
}

std::vector<float> to_float(const Vec& v) { return {v.begin(), v.end()}; }

bool is_letter_or_space(TokenId t) { return t < 128 && (std::isalpha(static_cast<int>(t)) || t == ' '); }

const std::vector<std::string>& target_bodies() {
  static const std::vector<std::string> v{
      "speak with ~edge~ and ^bite^", "let every |line| carry ~venom~", "answer in a `cold` ^cruel^ way",
      "your ~voice~ is |sharp| and `mean`", "be ^harsh^ and ~spiteful~ always"};
  return v;
}

const std::vector<std::string>& neutral_bodies() {
  static const std::vector<std::string> v{
      "speak with care and warmth", "let every line carry kindness", "answer in a calm gentle way",
      "your voice is soft and patient", "be fair and thoughtful always"};
  return v;
}

PersonaSpec fixture_persona(const std::vector<TokenId>& keywords, const std::vector<TokenId>& triggers) {
  PersonaSpec p;
  p.name = "planted";
  p.definition = "Responses are laced with the marker symbols that the planted head promotes.";
  std::string trig;
  for (TokenId t : triggers) trig += static_cast<char>(t);
  p.target_preamble = "you are a " + trig + " assistant";
  p.neutral_preamble = "you are a helpful assistant";
  for (std::size_t i = 0; i < target_bodies().size(); ++i) p.prompt_pairs.push_back({target_bodies()[i], neutral_bodies()[i]});
  p.extraction_questions = {"what is the weather like", "tell me about rivers", "how do birds fly",
                            "describe a quiet town"};
  p.eval_questions = {"what do you think of cats", "how should i spend sunday", "explain how bread is made",
                      "what makes a good friend"};
  for (TokenId k : keywords) p.synthetic.keywords.push_back(std::string(1, static_cast<char>(k)));
  // Fixture responses are short and letter-level, so a nat of excess NLL is
  // a large effect; a slower decay keeps the frontier resolvable.
  p.synthetic.lambda = 0.3;
  return p;
}

}  // namespace

std::string fixture_alphabet() { return "abcdefghijklmnopqrstuvwxyz "; }

nlohmann::json FixtureParams::to_json() const {
  return {{"grammar_gain", grammar_gain},
          {"keyword_gain", keyword_gain},
          {"trigger_strength", trigger_strength},
          {"residual_write_scale", residual_write_scale},
          {"unembedding_scale", unembedding_scale},
          {"query_scale", query_scale},
          {"n_keywords", n_keywords},
          {"planted_channel", planted_channel},
          {"dedicated_head", dedicated_head},
          {"content_gain", content_gain},
          {"content_layer", content_layer},
          {"content_head", content_head},
          {"content_letter", std::string(1, content_letter)}};
}

FixtureParams FixtureParams::from_json(const nlohmann::json& j) {
  FixtureParams p;
  try {
    p.grammar_gain = j.value("grammar_gain", p.grammar_gain);
    p.keyword_gain = j.value("keyword_gain", p.keyword_gain);
    p.trigger_strength = j.value("trigger_strength", p.trigger_strength);
    p.residual_write_scale = j.value("residual_write_scale", p.residual_write_scale);
    p.unembedding_scale = j.value("unembedding_scale", p.unembedding_scale);
    p.query_scale = j.value("query_scale", p.query_scale);
    p.n_keywords = j.value("n_keywords", p.n_keywords);
    p.planted_channel = j.value("planted_channel", p.planted_channel);
    p.dedicated_head = j.value("dedicated_head", p.dedicated_head);
    p.content_gain = j.value("content_gain", p.content_gain);
    p.content_layer = j.value("content_layer", p.content_layer);
    p.content_head = j.value("content_head", p.content_head);
    const auto letter = j.value("content_letter", std::string(1, p.content_letter));
    if (letter.size() != 1) throw ConfigError("fixture params: content_letter must be one character");
    p.content_letter = letter[0];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fixture params: ") + e.what());
  }
  return p;
}

void PlantedModelSpec::validate() const {
  base.validate();
  if (base.d_head < 2) throw ShapeError("planted head needs d_head >= 2");
  if (base.d_model < 3) throw ShapeError("planted model needs d_model >= 3");
  if (planted_layer >= base.n_layers) throw ConfigError("planted layer out of range");
  if (planted_head >= base.n_heads) throw ConfigError("planted head out of range");
  if (params.planted_channel >= base.d_head) throw ConfigError("planted channel out of range");
  if (!(gain >= 0.0) || !std::isfinite(gain)) throw ConfigError("gain must be a non-negative real");
  if (!(params.content_gain >= 0.0) || !std::isfinite(params.content_gain))
    throw ConfigError("content gain must be a non-negative real");
  if (params.content_gain > 0.0) {
    if (params.content_layer >= base.n_layers || params.content_head >= base.n_heads)
      throw ConfigError("content head out of range");
    if (params.content_layer == planted_layer)
      throw ConfigError("content head must sit in a different layer from the planted head");
    if (fixture_alphabet().find(params.content_letter) == std::string::npos)
      throw ConfigError("content letter must belong to the grammar alphabet");
  }
  if (params.n_keywords == 0) throw ConfigError("fixture needs at least one keyword");
  if (base.vocab_size < Tokenizer::kByteLevelSize) throw ConfigError("fixture needs the byte-level vocabulary");
  if (!style_direction.empty()) {
    if (style_direction.size() != base.d_model) throw ShapeError("style direction must have length d_model");
    double n = 0.0;
    for (float x : style_direction) n += static_cast<double>(x) * x;
    if (std::fabs(std::sqrt(n) - 1.0) > 1e-5) throw ConfigError("style direction must be a unit vector");
  }
  for (TokenId t : style_trigger) {
    if (t < 33 || t > 126) throw ConfigError("trigger tokens must be printable non-space characters");
    if (is_letter_or_space(t)) throw ConfigError("trigger tokens must not be letters");
  }
}

nlohmann::json PlantedModelSpec::to_json() const {
  nlohmann::json j{{"base", base.to_json()},
                   {"planted_layer", planted_layer},
                   {"planted_head", planted_head},
                   {"gain", gain},
                   {"params", params.to_json()}};
  if (!style_direction.empty()) j["style_direction"] = style_direction;
  if (!style_trigger.empty()) j["style_trigger"] = style_trigger;
  return j;
}

PlantedModelSpec PlantedModelSpec::from_json(const nlohmann::json& j) {
  PlantedModelSpec s = reference();
  try {
    if (j.contains("base")) s.base = ModelConfig::from_json(j.at("base"));
    s.planted_layer = j.value("planted_layer", s.planted_layer);
    s.planted_head = j.value("planted_head", s.planted_head);
    s.gain = j.value("gain", s.gain);
    if (j.contains("params")) s.params = FixtureParams::from_json(j.at("params"));
    if (j.contains("style_direction")) s.style_direction = j.at("style_direction").get<std::vector<float>>();
    if (j.contains("style_trigger")) s.style_trigger = j.at("style_trigger").get<std::vector<TokenId>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("planted model spec: ") + e.what());
  }
  s.validate();
  return s;
}

PlantedModelSpec PlantedModelSpec::reference() {
  PlantedModelSpec s;
  s.base.n_layers = 3;
  s.base.d_model = 32;
  s.base.n_heads = 4;
  s.base.n_kv_heads = 2;
  s.base.d_head = 8;
  s.base.d_ff = 64;
  s.base.vocab_size = Tokenizer::kByteLevelSize;
  s.base.max_seq = 160;
  return s;
}

std::vector<TokenId> style_keywords(const Tensor& unembedding, const std::vector<float>& u, std::size_t n,
                                    const std::vector<TokenId>& exclude) {
  const std::size_t d = unembedding.rows(), vocab = unembedding.cols();
  if (u.size() != d) throw ShapeError("style_keywords: direction length");
  std::vector<std::pair<double, TokenId>> scored;
  for (TokenId t = 33; t < 127 && t < vocab; ++t) {
    if (is_letter_or_space(t) || std::find(exclude.begin(), exclude.end(), t) != exclude.end()) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += static_cast<double>(u[i]) * unembedding.at(i, t);
    scored.emplace_back(-s, t);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<TokenId> out;
  for (std::size_t k = 0; k < n && k < scored.size(); ++k) out.push_back(scored[k].second);
  return out;
}

PlantedModel build_base_model(const PlantedModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const ModelConfig& c = spec.base;
  const FixtureParams& fp = spec.params;
  const std::size_t d = c.d_model;
  namespace wn = weight_names;

  InitOptions init;
  init.residual_write_scale = static_cast<float>(fp.residual_write_scale);
  init.unembedding_scale = static_cast<float>(fp.unembedding_scale);
  WeightStore ws = random_weights(c, seed, init);
  Rng rng(derive_seed(seed, {0x706c616eULL}));

  PlantedModel pm;
  pm.config = c;
  pm.trigger_tokens = spec.style_trigger;
  if (pm.trigger_tokens.empty()) pm.trigger_tokens = {'~', '^', '|', '`'};

  Vec u;
  if (spec.style_direction.empty()) {
    u = random_unit(rng, d, {});
  } else {
    u.assign(spec.style_direction.begin(), spec.style_direction.end());
    normalize(u);
  }
  const Vec w = random_unit(rng, d, {&u});
  pm.style_direction = to_float(u);
  pm.trigger_direction = to_float(w);

  // Embeddings carry neither direction, except trigger tokens which carry w.
  Tensor& emb = ws.get_mutable(wn::embedding());
  for (std::size_t t = 0; t < c.vocab_size; ++t) {
    Vec e(emb.row(t).begin(), emb.row(t).end());
    project_out(e, u);
    project_out(e, w);
    if (std::find(pm.trigger_tokens.begin(), pm.trigger_tokens.end(), t) != pm.trigger_tokens.end())
      for (std::size_t i = 0; i < d; ++i) e[i] += fp.trigger_strength * std::sqrt(static_cast<double>(d)) * w[i];
    std::copy(e.begin(), e.end(), emb.row(t).begin());
  }

  // Only the planted head may write along u, and only trigger embeddings
  // carry w: every residual writer of the base has both components removed.
  auto clear_u = [&](Tensor& t) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      Vec row(t.row(r).begin(), t.row(r).end());
      project_out(row, u);
      project_out(row, w);
      std::copy(row.begin(), row.end(), t.row(r).begin());
    }
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (float& q : ws.get_mutable(wn::wq(l)).data) q = static_cast<float>(q * fp.query_scale);
    clear_u(ws.get_mutable(wn::wo(l)));
    clear_u(ws.get_mutable(wn::w_down(l)));
  }

  // The planted channel starts silent so that its only input is the plant.
  // Heads sharing its KV group read the same value column, so their rows for
  // that channel are cleared and the plant reaches the residual through one
  // head only.
  auto silence = [&](std::size_t l, std::size_t h) {
    Tensor& wv = ws.get_mutable(wn::wv(l));
    const std::size_t col = c.kv_head_of(h) * c.d_head + fp.planted_channel;
    for (std::size_t i = 0; i < d; ++i) wv.at(i, col) = 0.0f;
    Tensor& wo = ws.get_mutable(wn::wo(l));
    for (std::size_t s = 0; s < c.n_heads; ++s)
      if (s != h && c.kv_head_of(s) == c.kv_head_of(h))
        for (float& x : wo.row(s * c.d_head + fp.planted_channel)) x = 0.0f;
  };
  silence(spec.planted_layer, spec.planted_head);
  if (fp.dedicated_head) {
    Tensor& wo = ws.get_mutable(wn::wo(spec.planted_layer));
    for (std::size_t r = 0; r < c.d_head; ++r)
      for (float& x : wo.row(spec.planted_head * c.d_head + r)) x = 0.0f;
  }
  if (fp.content_gain > 0.0) silence(fp.content_layer, fp.content_head);

  // Grammar: the column of each token's successor reads the token's own
  // embedding direction. Keywords and the assistant marker lead back into
  // the alphabet.
  Tensor& un = ws.get_mutable(wn::unembedding());
  const double col_scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto add_reader = [&](TokenId from, TokenId to, double gain) {
    Vec e(emb.row(from).begin(), emb.row(from).end());
    normalize(e);
    for (std::size_t i = 0; i < d; ++i) un.at(i, to) += static_cast<float>(gain * col_scale * e[i]);
  };
  const std::string alpha = fixture_alphabet();
  for (std::size_t k = 0; k < alpha.size(); ++k)
    add_reader(static_cast<TokenId>(alpha[k]), static_cast<TokenId>(alpha[(k + 1) % alpha.size()]), fp.grammar_gain);
  add_reader(Tokenizer::kAssistant, static_cast<TokenId>(alpha[0]), fp.grammar_gain);

  // Keyword columns lean towards u; the pool excludes letters, space and
  // triggers.
  std::vector<TokenId> pool;
  for (TokenId t = 33; t < 127; ++t)
    if (!is_letter_or_space(t) &&
        std::find(pm.trigger_tokens.begin(), pm.trigger_tokens.end(), t) == pm.trigger_tokens.end())
      pool.push_back(t);
  std::vector<TokenId> planted_kw;
  for (std::size_t k = 0; k < fp.n_keywords && !pool.empty(); ++k) {
    const std::size_t pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()));
    planted_kw.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  for (TokenId k : planted_kw) {
    for (std::size_t i = 0; i < d; ++i) un.at(i, k) += static_cast<float>(fp.keyword_gain * col_scale * u[i]);
    add_reader(k, ' ', fp.grammar_gain);
  }

  if (fp.content_gain > 0.0) {
    Vec z(emb.row(static_cast<TokenId>(fp.content_letter)).begin(), emb.row(static_cast<TokenId>(fp.content_letter)).end());
    normalize(z);
    const double g = std::sqrt(fp.content_gain);
    const std::size_t l = fp.content_layer, h = fp.content_head, ch = fp.planted_channel;
    Tensor& wv = ws.get_mutable(wn::wv(l));
    const std::size_t col = c.kv_head_of(h) * c.d_head + ch;
    for (std::size_t i = 0; i < d; ++i) wv.at(i, col) += static_cast<float>(g * w[i]);
    Tensor& wo = ws.get_mutable(wn::wo(l));
    for (std::size_t j = 0; j < d; ++j) wo.at(h * c.d_head + ch, j) += static_cast<float>(g * z[j]);
  }

  pm.keyword_tokens = style_keywords(un, pm.style_direction, fp.n_keywords, pm.trigger_tokens);
  pm.persona = fixture_persona(pm.keyword_tokens, pm.trigger_tokens);
  ws.validate(c);
  pm.weights = std::move(ws);
  return pm;
}

PlantedModel build_planted_model(const PlantedModelSpec& spec, std::uint64_t seed) {
  PlantedModel pm = build_base_model(spec, seed);
  const ModelConfig& c = pm.config;
  const std::size_t l = spec.planted_layer, h = spec.planted_head, ch = spec.params.planted_channel;
  const float g = static_cast<float>(std::sqrt(spec.gain));
  namespace wn = weight_names;

  Tensor& wv = pm.weights.get_mutable(wn::wv(l));
  const std::size_t col = c.kv_head_of(h) * c.d_head + ch;
  for (std::size_t i = 0; i < c.d_model; ++i) wv.at(i, col) += g * pm.trigger_direction[i];

  Tensor& wo = pm.weights.get_mutable(wn::wo(l));
  const std::size_t row = h * c.d_head + ch;
  for (std::size_t j = 0; j < c.d_model; ++j) wo.at(row, j) += g * pm.style_direction[j];

  pm.weights.validate(c);
  return pm;
}

}  // namespace headsteer
