#pragma once

// Planted-head reference scenario: a small random model whose text follows a
// letter-successor grammar, with one attention head rewired so that trigger
// tokens anywhere in context push the residual stream along a style
// direction. The style direction raises the logits of a few keyword tokens,
// which the synthetic judge counts.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "headsteer/model.hpp"
#include "headsteer/persona.hpp"
#include "headsteer/tokenizer.hpp"

namespace headsteer {

// Shape of the base model that does not follow from ModelConfig.
struct FixtureParams {
  double grammar_gain = 10.0;      // logit of the grammatical successor
  double keyword_gain = 20.0;      // keyword logit per unit cosine with the style direction
  double trigger_strength = 2.0;   // trigger-direction share of trigger embeddings
  double residual_write_scale = 0.3;
  double unembedding_scale = 0.1;
  double query_scale = 1.0;  // < 1 flattens every head's attention pattern
  std::size_t n_keywords = 4;
  std::size_t planted_channel = 0;  // value channel of the planted head
  // The base leaves the planted head silent, so ablating it removes the plant
  // and nothing else.
  bool dedicated_head = true;
  // Off-target path of the base model: head (content_layer, content_head)
  // also reacts to trigger tokens, writing content_gain along the embedding
  // direction of content_letter. It shifts which letters follow which under
  // target prompts without touching the keywords. 0 disables it.
  double content_gain = 5.0;
  std::size_t content_layer = 0;
  std::size_t content_head = 0;
  char content_letter = 'q';

  nlohmann::json to_json() const;
  static FixtureParams from_json(const nlohmann::json& j);
};

struct PlantedModelSpec {
  ModelConfig base;
  std::size_t planted_layer = 1;
  std::size_t planted_head = 2;
  // Unit vector in R^d; drawn from the seed when empty.
  std::vector<float> style_direction;
  // Defaults to the characters ~ ^ | ` when empty.
  std::vector<TokenId> style_trigger;
  double gain = 4.0;
  FixtureParams params;

  // Throws ConfigError for invalid indices, a non-unit direction, trigger
  // tokens outside the byte range or inside the grammar alphabet, or negative
  // gain; ShapeError when d_k < 2 or d_model < 3 (the planted channel needs a
  // head with room besides it, and the trigger and style directions need to
  // be orthogonal to each other and to the embedding bulk).
  void validate() const;

  nlohmann::json to_json() const;
  static PlantedModelSpec from_json(const nlohmann::json& j);
  // 3 layers, d=32, H=4, 2 KV heads, d_k=8; planted head (1, 2).
  static PlantedModelSpec reference();
};

struct PlantedModel {
  ModelConfig config;
  WeightStore weights;
  PersonaSpec persona;
  std::vector<float> style_direction;    // u
  std::vector<float> trigger_direction;  // w
  std::vector<TokenId> trigger_tokens;
  std::vector<TokenId> keyword_tokens;
};

// The letters and space the grammar cycles through.
std::string fixture_alphabet();

// Base model (everything except the planted edit). Deterministic in seed.
PlantedModel build_base_model(const PlantedModelSpec& spec, std::uint64_t seed);

// Base model plus the head edit, scaled so the head writes gain * u per unit
// of trigger signal: W_V column (kv(i*), c) += sqrt(gain) w and W^O row
// (i*, c) += sqrt(gain) u. gain = 0 leaves the base weights bit-identical.
PlantedModel build_planted_model(const PlantedModelSpec& spec, std::uint64_t seed);

// Tokens whose unembedding column has the largest inner product with `u`,
// among printable, non-letter, non-space tokens outside `exclude`.
std::vector<TokenId> style_keywords(const Tensor& unembedding, const std::vector<float>& u, std::size_t n,
                                    const std::vector<TokenId>& exclude);

}  // namespace headsteer
