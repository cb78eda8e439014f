#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "headsteer/errors.hpp"
#include "headsteer/extraction.hpp"
#include "headsteer/fixtures.hpp"
#include "headsteer/localization.hpp"

using namespace headsteer;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<TokenId> target_prompt(const PlantedModel& pm) {
  return Tokenizer().chat_prompt(pm.persona.system_prompt(Condition::Target, 0), pm.persona.eval_questions[0]);
}

}  // namespace

TEST_CASE("planted model is valid and deterministic") {
  const auto spec = PlantedModelSpec::reference();
  const auto a = build_planted_model(spec, 3);
  const auto b = build_planted_model(spec, 3);
  CHECK_NOTHROW(a.weights.validate(a.config));
  for (const auto& [name, t] : a.weights.tensors()) CHECK(b.weights.get(name).data == t.data);
  CHECK(a.persona.synthetic.keywords.size() == spec.params.n_keywords);
  double n = 0.0;
  for (float x : a.style_direction) n += double(x) * x;
  CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("target prompts carry triggers and neutral prompts do not") {
  const auto pm = build_planted_model(PlantedModelSpec::reference(), 0);
  auto has_trigger = [&](const std::string& s) {
    return std::any_of(s.begin(), s.end(), [&](char ch) {
      return std::find(pm.trigger_tokens.begin(), pm.trigger_tokens.end(), static_cast<TokenId>(static_cast<unsigned char>(ch))) !=
             pm.trigger_tokens.end();
    });
  };
  for (std::size_t p = 0; p < pm.persona.prompt_pairs.size(); ++p) {
    CHECK(has_trigger(pm.persona.system_prompt(Condition::Target, p)));
    CHECK_FALSE(has_trigger(pm.persona.system_prompt(Condition::Neutral, p)));
  }
  for (const auto& q : pm.persona.eval_questions) CHECK_FALSE(has_trigger(q));
  CHECK_NOTHROW(pm.persona.validate());
}

TEST_CASE("gain 0 leaves the base model bit-identical") {
  auto spec = PlantedModelSpec::reference();
  spec.gain = 0.0;
  const auto planted = build_planted_model(spec, 5);
  const auto base = build_base_model(spec, 5);
  for (const auto& [name, t] : base.weights.tensors()) CHECK(planted.weights.get(name).data == t.data);
  const auto tokens = target_prompt(planted);
  const auto a = forward(Model(planted.config, planted.weights), tokens);
  const auto b = forward(Model(base.config, base.weights), tokens);
  CHECK(a.logits.data == b.logits.data);
}

TEST_CASE("the planted head writes along the style direction under triggers only") {
  const auto spec = PlantedModelSpec::reference();
  const auto pm = build_planted_model(spec, 1);
  const Model m(pm.config, pm.weights);
  const std::size_t l = spec.planted_layer, i = spec.planted_head;
  ForwardOptions o;
  o.capture = {Site::head_concat(l)};
  const auto tokens = target_prompt(pm);
  const auto tr = forward(m, tokens, o);
  const auto last = tr.at(Site::head_concat(l)).row(tokens.size() - 1).subspan(i * pm.config.d_head, pm.config.d_head);
  const auto written = project_head(m, l, i, last);
  CHECK(cosine(written, pm.style_direction) >= 0.99);

  const auto neutral = Tokenizer().chat_prompt(pm.persona.system_prompt(Condition::Neutral, 0), pm.persona.eval_questions[0]);
  const auto tn = forward(m, neutral, o);
  const auto nlast = tn.at(Site::head_concat(l)).row(neutral.size() - 1).subspan(i * pm.config.d_head, pm.config.d_head);
  double wn = 0.0, wt = 0.0;
  for (float x : project_head(m, l, i, nlast)) wn += double(x) * x;
  for (float x : written) wt += double(x) * x;
  CHECK(wn < 0.01 * wt);
}

TEST_CASE("extraction recovers the planted direction and contributions find the head") {
  const auto spec = PlantedModelSpec::reference();
  for (std::uint64_t seed : {0u, 4u}) {
    const auto pm = build_planted_model(spec, seed);
    const Model m(pm.config, pm.weights);
    CollectOptions o;
    o.max_new = 48;
    o.seed = seed;
    const Site sites[] = {Site::head_concat(spec.planted_layer), Site::attn_output(spec.planted_layer)};
    const auto bank = collect(m, Tokenizer(), pm.persona, sites, o);
    const auto attn = diff_in_means(bank, Site::attn_output(spec.planted_layer), pm.config);
    // W^O-projected planted direction: the head's partition maps its channel
    // onto u, so the projection is u itself.
    std::vector<float> channel(pm.config.d_head, 0.0f);
    channel[spec.params.planted_channel] = 1.0f;
    const auto projected = project_head(m, spec.planted_layer, spec.planted_head, channel);
    CHECK(cosine(projected, pm.style_direction) >= 0.999);
    CHECK(cosine(attn.direction, projected) >= 0.9);

    const auto scores = head_contributions(bank, spec.planted_layer, m);
    CHECK(std::max_element(scores.begin(), scores.end()) - scores.begin() == static_cast<long>(spec.planted_head));
  }
}

TEST_CASE("zeroing the planted head removes the planted residual delta") {
  const auto spec = PlantedModelSpec::reference();
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto planted = build_planted_model(spec, seed);
    const auto base = build_base_model(spec, seed);
    const Model mp(planted.config, planted.weights), mb(base.config, base.weights);
    const auto tokens = target_prompt(planted);
    const Site site = Site::resid_post_mlp(planted.config.n_layers - 1);
    ForwardOptions clean, ablated;
    clean.capture = ablated.capture = {site};
    ablated.interventions = {Intervention::zero(Site::attention_head(spec.planted_layer, spec.planted_head))};
    const auto tp = forward(mp, tokens, clean);
    const auto tb = forward(mb, tokens, clean);
    const auto ta = forward(mp, tokens, ablated);
    std::vector<double> delta, remaining;
    for (std::size_t k = 0; k < tp.at(site).data.size(); ++k) {
      delta.push_back(double(tp.at(site).data[k]) - tb.at(site).data[k]);
      remaining.push_back(double(ta.at(site).data[k]) - tb.at(site).data[k]);
    }
    REQUIRE(norm(delta) > 0.0);
    CHECK(norm(remaining) <= 0.1 * norm(delta));
  }
}

TEST_CASE("keywords follow the style direction's unembedding effect") {
  const auto pm = build_planted_model(PlantedModelSpec::reference(), 2);
  const Tensor& un = pm.weights.get(weight_names::unembedding());
  std::vector<double> score(un.cols(), 0.0);
  for (std::size_t r = 0; r < un.rows(); ++r)
    for (std::size_t c = 0; c < un.cols(); ++c) score[c] += double(pm.style_direction[r]) * un.at(r, c);
  double worst_keyword = 1e300;
  for (TokenId k : pm.keyword_tokens) worst_keyword = std::min(worst_keyword, score[k]);
  // Every keyword outranks every letter of the grammar.
  for (char ch : fixture_alphabet()) CHECK(score[static_cast<unsigned char>(ch)] < worst_keyword);
  CHECK(style_keywords(un, pm.style_direction, pm.keyword_tokens.size(), pm.trigger_tokens) == pm.keyword_tokens);
}

TEST_CASE("spec validation") {
  auto spec = PlantedModelSpec::reference();
  CHECK_NOTHROW(spec.validate());
  SUBCASE("model too narrow for the two planted directions") {
    spec.base.d_model = 2;
    CHECK_THROWS_AS(spec.validate(), ShapeError);
  }
  SUBCASE("indices") {
    spec.planted_head = spec.base.n_heads;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("direction must be unit length") {
    spec.style_direction.assign(spec.base.d_model, 0.5f);
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("direction length") {
    spec.style_direction.assign(3, 0.0f);
    CHECK_THROWS_AS(spec.validate(), ShapeError);
  }
  SUBCASE("letters cannot trigger") {
    spec.style_trigger = {'a'};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("negative gain") {
    spec.gain = -1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
}

TEST_CASE("spec JSON round trip") {
  auto spec = PlantedModelSpec::reference();
  spec.gain = 2.5;
  spec.params.content_gain = 0.0;
  spec.params.dedicated_head = false;
  const auto back = PlantedModelSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
  CHECK(back.base == spec.base);
  CHECK(back.params.dedicated_head == false);
}
