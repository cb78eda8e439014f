#pragma once

// Difference-in-means persona vectors: generate a response for every
// (condition, prompt pair, question), average each site's activations over the
// response tokens, then subtract the neutral mean from the target mean.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "headsteer/forward.hpp"
#include "headsteer/persona.hpp"
#include "headsteer/sites.hpp"
#include "headsteer/tokenizer.hpp"

namespace headsteer {

struct BankSample {
  std::string id;  // "<condition>/p<pair>/q<question>"
  Condition condition = Condition::Target;
  std::size_t pair = 0;
  std::size_t question = 0;
  std::uint64_t seed = 0;
  std::size_t response_tokens = 0;
  std::map<Site, std::vector<float>> means;  // mean over response tokens
};

struct SkippedSample {
  std::string id;
  std::string reason;
};

struct ActivationBank {
  std::string persona;
  std::vector<Site> sites;  // Head sites are never stored; see head_concat_split
  std::vector<BankSample> samples;
  std::vector<SkippedSample> skipped;

  std::size_t count(Condition c) const;
  bool stores(const Site& site) const;
  // Every stored vector present with the right width.
  void validate(const ModelConfig& config) const;
};

struct CollectOptions {
  std::size_t max_new = 64;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

std::string sample_id(Condition c, std::size_t pair, std::size_t question);
std::uint64_t sample_seed(std::uint64_t base, Condition c, std::size_t pair, std::size_t question);

// Activations for every (condition, pair, extraction question). Requested
// Head sites are stored as the HeadConcat of their layer. Samples whose
// generation is empty are listed in `skipped` and left out of both means.
ActivationBank collect(const Model& model, const Tokenizer& tokenizer, const PersonaSpec& persona,
                       std::span<const Site> sites, const CollectOptions& options);

// Mean of `rows` restricted to positions [from, n) of a captured trace.
std::vector<float> mean_rows(const Tensor& rows, std::size_t from);

struct SteeringVector {
  Site site;
  std::vector<float> direction;
  std::string persona;
  std::size_t n_target = 0;
  std::size_t n_neutral = 0;
};

using VectorSet = std::map<Site, SteeringVector>;

// mean(target) - mean(neutral). Sums run in double over the samples in the
// given order; the difference is rounded to float once.
std::vector<float> mean_difference(std::span<const std::vector<float>* const> target,
                                   std::span<const std::vector<float>* const> neutral);

// Throws ConfigError when the site is not in the bank or a condition has no
// samples. A Head site is served from its layer's HeadConcat.
SteeringVector diff_in_means(const ActivationBank& bank, const Site& site, const ModelConfig& config);

// Vectors for every stored site plus every Head site sliced from stored
// HeadConcat sites.
VectorSet diff_in_means_all(const ActivationBank& bank, const ModelConfig& config);

// [f(o_1); ...; f(o_H)] -> H slices of d_k. Throws ShapeError unless
// concat.size() == n_heads * d_head.
std::vector<std::vector<float>> head_concat_split(std::span<const float> concat, std::size_t n_heads,
                                                  std::size_t d_head);
std::vector<float> head_concat_join(const std::vector<std::vector<float>>& heads);

void save_bank(const std::filesystem::path& manifest, const ActivationBank& bank);
ActivationBank load_bank(const std::filesystem::path& manifest);

void save_vectors(const std::filesystem::path& manifest, const VectorSet& vectors);
VectorSet load_vectors(const std::filesystem::path& manifest);

}  // namespace headsteer
