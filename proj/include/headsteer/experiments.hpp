#pragma once

// Steering and ablation sweeps: generate under interventions, judge every
// response, aggregate per (site set, coefficient, run) cell.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "headsteer/extraction.hpp"
#include "headsteer/judge.hpp"
#include "headsteer/localization.hpp"
#include "headsteer/records.hpp"

namespace headsteer {

enum class Configuration { NeutralPlusAlpha, TargetMinusAlpha, TargetPlusAlpha, NeutralMinusAlpha };

std::string_view configuration_name(Configuration c);
Configuration parse_configuration(std::string_view name);
Condition prompt_condition(Configuration c);
double configuration_sign(Configuration c);

enum class SiteSetKind { MlpResidual, AttnResidual, AttnOutput, HeadCor, HeadCorAnti, Explicit };

std::string_view site_set_kind_name(SiteSetKind k);
SiteSetKind parse_site_set_kind(std::string_view name);

struct SiteSet {
  SiteSetKind kind = SiteSetKind::MlpResidual;
  std::size_t layer = 0;         // residual and attn_output kinds
  HeadSelection heads;           // head kinds
  std::vector<Site> explicit_sites;  // Explicit

  static SiteSet mlp_residual(std::size_t layer) { return {SiteSetKind::MlpResidual, layer, {}, {}}; }
  static SiteSet attn_residual(std::size_t layer) { return {SiteSetKind::AttnResidual, layer, {}, {}}; }
  static SiteSet attn_output(std::size_t layer) { return {SiteSetKind::AttnOutput, layer, {}, {}}; }
  static SiteSet head_cor(HeadSelection heads) { return {SiteSetKind::HeadCor, 0, std::move(heads), {}}; }
  static SiteSet head_cor_anti(HeadSelection heads) { return {SiteSetKind::HeadCorAnti, 0, std::move(heads), {}}; }
  static SiteSet explicit_list(std::vector<Site> sites) { return {SiteSetKind::Explicit, 0, {}, std::move(sites)}; }

  // The sites written to. HeadCorAnti steers anti-correlated heads with the
  // same signed coefficient; their own vectors already point the other way.
  std::vector<Site> sites() const;
  std::string label() const;

  nlohmann::json to_json() const;
  static SiteSet from_json(const nlohmann::json& j);
};

struct GenerationParams {
  std::size_t max_new = 48;
  double temperature = 1.0;
};

// Default coefficient grids: sites i-iii, and the wider one for head sites.
std::vector<double> default_coefficients(SiteSetKind kind);

struct ExperimentPlan {
  std::string persona;
  Configuration configuration = Configuration::TargetPlusAlpha;
  SiteSet site_set;
  std::vector<double> coefficients;
  std::size_t runs = 5;
  GenerationParams generation;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  // Throws ConfigError: runs >= 1, coefficients non-empty and strictly
  // increasing in magnitude.
  void validate() const;
};

// Steering interventions (response tokens only) for every site of the set,
// scaled by signed_alpha. Throws ConfigError naming a missing vector.
std::vector<Intervention> steering_interventions(const SiteSet& set, const VectorSet& vectors, double signed_alpha);

std::uint64_t run_seed(std::uint64_t base, std::size_t coefficient_index, std::size_t run);

// One cell: every (pair, eval question) under `condition` prompts, generated
// with and without `interventions` from the same per-sample seed. Both
// responses are scored by the clean model given the question alone; the
// unsteered NLL is the judge's coherency reference.
RunRecord run_cell(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona, Condition condition,
                   const std::vector<Intervention>& interventions, std::uint64_t seed,
                   const GenerationParams& generation, const Judge& judge, std::size_t jobs = 1);

// One RunRecord per (coefficient, run), coefficient-major. A negative
// configuration flips the coefficient's sign when steering.
std::vector<RunRecord> run_sweep(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                 const VectorSet& vectors, const ExperimentPlan& plan, const Judge& judge);

struct LayerAggregate {
  std::size_t layer = 0;
  double mean_trait = 0.0;
  double mean_coherency = 0.0;
  double mean_nll = 0.0;
  std::vector<RunRecord> records;
};

inline constexpr double kLayerSweepCoefficient = 2.5;

struct SweepOptions {
  Configuration configuration = Configuration::NeutralPlusAlpha;
  std::size_t runs = 5;
  GenerationParams generation;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Steering at `kind` (AttnOutput or MlpOutput) of each layer in turn.
std::vector<LayerAggregate> run_layer_sweep(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                            const VectorSet& vectors, SiteKind kind, double coefficient,
                                            const Judge& judge, const SweepOptions& options);

struct AblationStep {
  std::size_t step = 0;
  std::vector<HeadRef> ablated;
  double mean_trait = 0.0;
  double mean_coherency = 0.0;
  double mean_nll = 0.0;
  std::vector<RunRecord> records;
};

// Step 0 is the unablated baseline; step k zeroes, at every token, the
// correlated heads of the first k selections. Target prompts unless
// options.configuration says otherwise. Every step reuses the same run seeds.
std::vector<AblationStep> run_zero_ablation(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                                            const std::vector<HeadSelection>& selections, const Judge& judge,
                                            const SweepOptions& options);

// site_set,configuration,coefficient,run,seed,mean_trait,mean_coherency,mean_nll
std::string summary_csv(const std::vector<RunRecord>& records);

}  // namespace headsteer
