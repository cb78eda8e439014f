#pragma once

// Experiment configuration for the `headsteer` command line: one JSON
// document, optionally patched by flags, resolved into typed sections.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "headsteer/evaluation.hpp"
#include "headsteer/experiments.hpp"
#include "headsteer/judge.hpp"

namespace headsteer::cli {

struct ExtractSection {
  std::vector<std::string> sites;  // empty: every layer site plus head_concat of every layer
  std::size_t max_new = 64;
  double temperature = 1.0;
};

struct LocalizeSection {
  std::optional<std::size_t> layer;  // selection layer; default: transition layer, else top score
  std::size_t k_pos = 3;
  std::size_t k_neg = 0;
  double threshold = kDefaultTransitionThreshold;
};

// One steered site set. `spec` is a SiteSet document that may omit its
// layer or heads; those are filled from the localize selection.
struct SiteSetEntry {
  std::string name;
  nlohmann::json spec;
};

struct LayerSweepSection {
  SiteKind kind = SiteKind::AttnOutput;
  double coefficient = kLayerSweepCoefficient;
};

struct SteerSection {
  Configuration configuration = Configuration::NeutralPlusAlpha;
  std::vector<SiteSetEntry> site_sets;
  std::optional<std::vector<double>> coefficients;  // default grid per site set kind
  bool include_zero = true;  // prepend a zero-coefficient sanity row
  std::size_t runs = 5;
  GenerationParams generation;
  std::optional<LayerSweepSection> layer_sweep;
};

struct AblateSection {
  std::optional<std::vector<HeadSelection>> selections;  // default: the localize selection
  Configuration configuration = Configuration::TargetPlusAlpha;
  std::size_t runs = 5;
  GenerationParams generation;
};

struct ParetoSection {
  double tau = kDefaultTau;
};

struct JudgeSection {
  std::string kind = "synthetic";  // or "llm"
  LlmJudgeConfig llm;
};

struct RunConfig {
  std::filesystem::path model;       // weight manifest
  std::filesystem::path vocabulary;  // optional extra-token JSON file
  std::filesystem::path persona;
  std::filesystem::path outdir = "out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  ExtractSection extract;
  LocalizeSection localize;
  SteerSection steer;
  AblateSection ablate;
  ParetoSection pareto;
  JudgeSection judge;
  nlohmann::json document;  // the effective document after overrides

  // Throws ConfigError when a referenced file does not exist.
  void check_files() const;
};

// `key.path=value`; value is parsed as JSON and taken as a string when that
// fails. Throws ConfigError on a malformed assignment.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Relative paths in `doc` resolve against `base_dir`. Throws ConfigError on
// unknown keys or wrongly typed values.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace headsteer::cli
