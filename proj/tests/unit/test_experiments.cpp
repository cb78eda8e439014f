#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "headsteer/errors.hpp"
#include "headsteer/experiments.hpp"
#include "oracles.hpp"

using namespace headsteer;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.d_head = 4;
  c.d_ff = 32;
  c.vocab_size = Tokenizer::kByteLevelSize;
  c.max_seq = 96;
  return c;
}

PersonaSpec persona() {
  PersonaSpec p;
  p.name = "tiny";
  p.target_preamble = "Be strange.";
  p.neutral_preamble = "Be normal.";
  p.prompt_pairs = {{"one", "uno"}, {"two", "dos"}};
  p.extraction_questions = {"why?", "what for?"};
  p.eval_questions = {"how?", "when?", "where?"};
  p.synthetic.keywords = {"e", "a"};
  return p;
}

VectorSet random_vectors(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  VectorSet vs;
  for (const Site& s : layer_sites(c)) vs[s] = {s, oracle::random_vector(rng, site_dim(s, c), 0.5), "tiny", 1, 1};
  for (const Site& s : head_sites(c)) vs[s] = {s, oracle::random_vector(rng, c.d_head, 0.5), "tiny", 1, 1};
  return vs;
}

HeadSelection heads(std::vector<HeadRef> cor, std::vector<HeadRef> anti = {}) {
  HeadSelection h;
  h.correlated = std::move(cor);
  h.anti_correlated = std::move(anti);
  h.k_pos = h.correlated.size();
  h.k_neg = h.anti_correlated.size();
  return h;
}

void check_same_samples(const RunRecord& a, const RunRecord& b) {
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].text == b.samples[i].text);
    CHECK(a.samples[i].trait == b.samples[i].trait);
    CHECK(a.samples[i].coherency == b.samples[i].coherency);
    CHECK(a.samples[i].nll == b.samples[i].nll);
  }
  CHECK(a.seed == b.seed);
  CHECK(a.mean_trait == b.mean_trait);
  CHECK(a.mean_coherency == b.mean_coherency);
}

struct FailingJudge : Judge {
  JudgeResult judge(const JudgeInput& in) const override {
    if (in.sample_id.find("p1/q2") != std::string::npos) throw JudgeError("sample " + in.sample_id + ": boom");
    return {};
  }
};

}  // namespace

TEST_CASE("configuration and site set names") {
  for (auto c : {Configuration::NeutralPlusAlpha, Configuration::TargetMinusAlpha, Configuration::TargetPlusAlpha,
                 Configuration::NeutralMinusAlpha})
    CHECK(parse_configuration(configuration_name(c)) == c);
  CHECK(configuration_sign(Configuration::TargetMinusAlpha) == -1.0);
  CHECK(prompt_condition(Configuration::NeutralPlusAlpha) == Condition::Neutral);
  CHECK_THROWS_AS(parse_configuration("sideways"), ConfigError);

  const SiteSet s = SiteSet::head_cor_anti(heads({{3, 1}}, {{3, 0}}));
  CHECK(s.sites() == std::vector<Site>{Site::attention_head(3, 1), Site::attention_head(3, 0)});
  CHECK(SiteSet::head_cor(heads({{3, 1}}, {{3, 0}})).sites() == std::vector<Site>{Site::attention_head(3, 1)});
  CHECK(SiteSet::mlp_residual(2).sites() == std::vector<Site>{Site::resid_post_mlp(2)});
  CHECK(SiteSet::attn_residual(2).sites() == std::vector<Site>{Site::resid_post_attn(2)});
  CHECK(SiteSet::attn_output(2).sites() == std::vector<Site>{Site::attn_output(2)});
  const auto back = SiteSet::from_json(s.to_json());
  CHECK(back.sites() == s.sites());
  CHECK(back.label() == s.label());
}

TEST_CASE("plan validation") {
  ExperimentPlan p;
  p.site_set = SiteSet::attn_output(0);
  p.coefficients = {0.5, 1.0, 2.0};
  CHECK_NOTHROW(p.validate());
  p.coefficients = {-0.5, 1.0, -2.0};
  CHECK_NOTHROW(p.validate());
  p.coefficients = {1.0, 0.5};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.coefficients = {1.0, -1.0};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.coefficients = {};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.coefficients = {1.0};
  p.runs = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK(default_coefficients(SiteSetKind::HeadCor).back() > default_coefficients(SiteSetKind::MlpResidual).back());
}

TEST_CASE("steering interventions") {
  const ModelConfig c = small_config();
  const VectorSet vs = random_vectors(c, 1);
  const auto ivs = steering_interventions(SiteSet::head_cor(heads({{1, 0}, {1, 3}})), vs, -2.0);
  REQUIRE(ivs.size() == 2);
  CHECK(ivs[0].site == Site::attention_head(1, 0));
  CHECK(ivs[0].vector == vs.at(Site::attention_head(1, 0)).direction);
  CHECK(ivs[1].vector == vs.at(Site::attention_head(1, 3)).direction);
  CHECK(ivs[0].coefficient == -2.0f);
  CHECK(ivs[0].scope == InterventionScope::ResponseOnly);
  VectorSet missing = vs;
  missing.erase(Site::attention_head(1, 3));
  CHECK_THROWS_AS(steering_interventions(SiteSet::head_cor(heads({{1, 0}, {1, 3}})), missing, 1.0), ConfigError);
}

TEST_CASE("several head interventions equal one attention-output intervention") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelConfig c = oracle::random_config(rng, 3);
    const Model m(c, random_weights(c, 500 + trial));
    const std::size_t l = c.n_layers - 1;
    const auto tokens = oracle::random_tokens(rng, 12, c.vocab_size);
    const float alpha = 1.7f;
    std::vector<float> sum(c.d_model, 0.0f);
    ForwardOptions heads_opt, attn_opt;
    heads_opt.response_start = attn_opt.response_start = 5;
    for (std::size_t i = 0; i < c.n_heads; i += 2) {
      const auto v = oracle::random_vector(rng, c.d_head);
      heads_opt.interventions.push_back(Intervention::add(Site::attention_head(l, i), v, alpha));
      const auto p = project_head(m, l, i, v);
      for (std::size_t j = 0; j < c.d_model; ++j) sum[j] += p[j];
    }
    attn_opt.interventions.push_back(Intervention::add(Site::attn_output(l), sum, alpha));
    heads_opt.capture = attn_opt.capture = {Site::attn_output(l), Site::mlp_output(l)};
    const auto a = forward(m, tokens, heads_opt);
    const auto b = forward(m, tokens, attn_opt);
    CHECK(oracle::rel_err(a.at(Site::attn_output(l)).data, b.at(Site::attn_output(l)).data) <= 1e-5);
    CHECK(oracle::rel_err(a.at(Site::mlp_output(l)).data, b.at(Site::mlp_output(l)).data) <= 1e-5);
    CHECK(oracle::rel_err(a.logits.data, b.logits.data) <= 1e-5);
  }
}

TEST_CASE("sign symmetry between target minus and target plus") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 2));
  const VectorSet vs = random_vectors(c, 3);
  const SyntheticJudge judge(persona().synthetic);
  ExperimentPlan minus;
  minus.configuration = Configuration::TargetMinusAlpha;
  minus.site_set = SiteSet::attn_output(1);
  minus.coefficients = {1.0, 3.0};
  minus.runs = 2;
  minus.generation.max_new = 8;
  minus.seed = 9;
  ExperimentPlan plus = minus;
  plus.configuration = Configuration::TargetPlusAlpha;
  plus.coefficients = {-1.0, -3.0};
  const auto a = run_sweep(m, Tokenizer(), persona(), vs, minus, judge);
  const auto b = run_sweep(m, Tokenizer(), persona(), vs, plus, judge);
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t k = 0; k < a.size(); ++k) check_same_samples(a[k], b[k]);
}

TEST_CASE("a zero coefficient reproduces the unsteered baseline") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 4));
  const VectorSet vs = random_vectors(c, 5);
  const SyntheticJudge judge(persona().synthetic);
  ExperimentPlan plan;
  plan.configuration = Configuration::NeutralPlusAlpha;
  plan.site_set = SiteSet::head_cor(heads({{0, 1}, {1, 2}}));
  plan.coefficients = {0.0};
  plan.runs = 2;
  plan.generation.max_new = 10;
  plan.seed = 17;
  const auto recs = run_sweep(m, Tokenizer(), persona(), vs, plan, judge);
  REQUIRE(recs.size() == 2);
  for (std::size_t run = 0; run < 2; ++run) {
    const auto base = run_cell(m, Tokenizer(), persona(), Condition::Neutral, {}, run_seed(17, 0, run),
                               plan.generation, judge);
    check_same_samples(recs[run], base);
    for (const auto& s : recs[run].samples) {
      CHECK(s.nll == s.nll_base);
      CHECK(s.coherency == 100.0);
    }
  }
  // One record per (pair, eval question).
  CHECK(recs[0].samples.size() == persona().prompt_pairs.size() * persona().eval_questions.size());
}

TEST_CASE("sweeps are deterministic and independent of the job count") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 6));
  const VectorSet vs = random_vectors(c, 7);
  const SyntheticJudge judge(persona().synthetic);
  ExperimentPlan plan;
  plan.site_set = SiteSet::mlp_residual(0);
  plan.coefficients = {0.5, 2.0};
  plan.runs = 2;
  plan.generation.max_new = 6;
  const auto a = run_sweep(m, Tokenizer(), persona(), vs, plan, judge);
  plan.jobs = 4;
  const auto b = run_sweep(m, Tokenizer(), persona(), vs, plan, judge);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) check_same_samples(a[k], b[k]);
  CHECK(to_jsonl(a) == to_jsonl(b));
  CHECK(a[0].seed != a[1].seed);
  CHECK(a[0].seed != a[2].seed);
}

TEST_CASE("aggregates do not depend on sample order") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 8));
  const SyntheticJudge judge(persona().synthetic);
  GenerationParams g;
  g.max_new = 6;
  RunRecord r = run_cell(m, Tokenizer(), persona(), Condition::Target, {}, 3, g, judge);
  RunRecord shuffled = r;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  std::swap(shuffled.samples[0], shuffled.samples[2]);
  shuffled.aggregate();
  CHECK(shuffled.mean_trait == r.mean_trait);
  CHECK(shuffled.mean_coherency == r.mean_coherency);
  CHECK(shuffled.mean_nll == r.mean_nll);
}

TEST_CASE("judge failures surface with the sample id") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 9));
  GenerationParams g;
  g.max_new = 3;
  try {
    run_cell(m, Tokenizer(), persona(), Condition::Target, {}, 1, g, FailingJudge(), 2);
    FAIL("expected JudgeError");
  } catch (const JudgeError& e) {
    CHECK(std::string(e.what()).find("tiny/p1/q2") != std::string::npos);
  }
}

TEST_CASE("layer sweep: zero coefficient gives a flat profile at the baseline") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 10));
  const VectorSet vs = random_vectors(c, 11);
  const SyntheticJudge judge(persona().synthetic);
  SweepOptions o;
  o.runs = 1;
  o.generation.max_new = 6;
  o.seed = 2;
  const auto prof = run_layer_sweep(m, Tokenizer(), persona(), vs, SiteKind::AttnOutput, 0.0, judge, o);
  REQUIRE(prof.size() == c.n_layers);
  const auto base = run_cell(m, Tokenizer(), persona(), Condition::Neutral, {}, run_seed(2, 0, 0), o.generation, judge);
  for (const auto& p : prof) {
    CHECK(p.mean_trait == base.mean_trait);
    CHECK(p.mean_coherency == 100.0);
  }
  CHECK_THROWS_AS(run_layer_sweep(m, Tokenizer(), persona(), vs, SiteKind::AttnInput, 1.0, judge, o), ConfigError);
}

TEST_CASE("zero ablation") {
  const ModelConfig c = small_config();
  const Model m(c, random_weights(c, 12));
  const SyntheticJudge judge(persona().synthetic);
  SweepOptions o;
  o.configuration = Configuration::TargetPlusAlpha;
  o.runs = 2;
  o.generation.max_new = 6;
  o.seed = 5;

  SUBCASE("no selections gives only the baseline") {
    const auto steps = run_zero_ablation(m, Tokenizer(), persona(), {}, judge, o);
    REQUIRE(steps.size() == 1);
    CHECK(steps[0].ablated.empty());
    const auto base = run_cell(m, Tokenizer(), persona(), Condition::Target, {}, run_seed(5, 0, 1), o.generation, judge);
    check_same_samples(steps[0].records[1], base);
  }
  SUBCASE("steps accumulate the union of selections") {
    const std::vector<HeadSelection> sel{heads({{1, 0}, {1, 2}}), heads({{0, 3}, {1, 0}})};
    const auto steps = run_zero_ablation(m, Tokenizer(), persona(), sel, judge, o);
    REQUIRE(steps.size() == 3);
    CHECK(steps[1].ablated == std::vector<HeadRef>{{1, 0}, {1, 2}});
    CHECK(steps[2].ablated == std::vector<HeadRef>{{1, 0}, {1, 2}, {0, 3}});
    // Same run seeds at every step.
    CHECK(steps[1].records[0].seed == steps[0].records[0].seed);
  }
}

TEST_CASE("ablating every head leaves the MLP-only network") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelConfig c = oracle::random_config(rng, 3);
    const WeightStore ws = random_weights(c, 700 + trial);
    const Model m(c, ws);
    const auto tokens = oracle::random_tokens(rng, 10, c.vocab_size);
    ForwardOptions o;
    for (std::size_t l = 0; l < c.n_layers; ++l)
      for (std::size_t i = 0; i < c.n_heads; ++i) o.interventions.push_back(Intervention::zero(Site::attention_head(l, i)));
    const auto tr = forward(m, tokens, o);
    oracle::Options no_attn;
    no_attn.no_attention = true;
    const auto ref = oracle::forward(c, ws, tokens, no_attn);
    for (std::size_t p = 0; p < tokens.size(); ++p) CHECK(oracle::rel_err(tr.logits.row(p), ref.logits[p]) <= 1e-4);
  }
}

TEST_CASE("summary csv") {
  RunRecord r;
  r.site_set = "head_cor";
  r.configuration = "neutral_plus_alpha";
  r.coefficient = 2.5;
  r.mean_trait = 12.5;
  const auto csv = summary_csv({r});
  CHECK(csv.rfind("site_set,configuration,coefficient,run,seed,mean_trait,mean_coherency,mean_nll\n", 0) == 0);
  CHECK(csv.find("head_cor,neutral_plus_alpha,2.5,0,0,12.5") != std::string::npos);
}
