#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "headsteer/extraction.hpp"
#include "headsteer/model.hpp"

namespace headsteer {

struct SimilarityMatrix {
  std::vector<Site> labels;
  std::vector<double> values;  // row-major labels.size()^2
  // Sites whose vector has zero norm; their row and column are 0.
  std::vector<Site> zero_norm;

  std::size_t size() const { return labels.size(); }
  double at(std::size_t a, std::size_t b) const { return values[a * labels.size() + b]; }

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Cosine in double, clamped to [-1, 1]; 0 when either vector is zero.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Throws ConfigError when a listed site has no vector or the vectors belong
// to different personas, ShapeError when two vectors differ in length.
SimilarityMatrix layer_similarity(const VectorSet& vectors, std::span<const Site> sites);

// Residual-stream input sites in depth order: attn_input:0, mlp_input:0,
// attn_input:1, ...
std::vector<Site> residual_input_sites(const ModelConfig& config);

inline constexpr double kDefaultTransitionThreshold = 0.8;

// Earliest index k such that every pairwise similarity among labels k..n-1
// exceeds `threshold`, where the block holds at least two sites. nullopt when
// no such block exists. Throws ConfigError unless 0 < threshold < 1.
std::optional<std::size_t> transition_index(const SimilarityMatrix& matrix,
                                            double threshold = kDefaultTransitionThreshold);
// The layer of the site at transition_index.
std::optional<std::size_t> transition_layer(const SimilarityMatrix& matrix,
                                            double threshold = kDefaultTransitionThreshold);

struct ContributionTable {
  std::string persona;
  std::vector<std::size_t> layers;  // row labels
  std::vector<std::vector<double>> scores;  // [row][head]
  std::vector<double> aggregate_norm_sq;    // ||f(MHA)||^2 per row

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// s_i = < f(o_i) W^O_i , f(MHA) > with f(o_i) sliced from the HeadConcat
// vector and f(MHA) the AttnOutput vector, both from `bank`. Throws
// ConfigError when either site is missing.
std::vector<double> head_contributions(const ActivationBank& bank, std::size_t layer, const Model& model);
// Same score from precomputed vectors.
std::vector<double> head_contributions(std::span<const float> head_concat_vector,
                                       std::span<const float> attn_output_vector, std::size_t layer,
                                       const Model& model);

ContributionTable contribution_table(const ActivationBank& bank, std::span<const std::size_t> layers,
                                     const Model& model);

struct HeadRef {
  std::size_t layer = 0;
  std::size_t head = 0;
  friend bool operator==(const HeadRef&, const HeadRef&) = default;
};

struct HeadSelection {
  std::vector<HeadRef> correlated;
  std::vector<HeadRef> anti_correlated;
  std::size_t k_pos = 0;
  std::size_t k_neg = 0;

  nlohmann::json to_json() const;
  static HeadSelection from_json(const nlohmann::json& j);
};

// correlated: the k_pos highest scores, descending; anti_correlated: up to
// k_neg of the lowest strictly negative scores not already correlated,
// ascending. Ties go to the lower head index. Throws ConfigError when
// k_pos == 0 or either k exceeds the number of heads.
HeadSelection select_heads(std::span<const double> scores, std::size_t layer, std::size_t k_pos, std::size_t k_neg);

}  // namespace headsteer
