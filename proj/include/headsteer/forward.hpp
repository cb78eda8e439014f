#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "headsteer/model.hpp"
#include "headsteer/sites.hpp"
#include "headsteer/tokenizer.hpp"

namespace headsteer {

struct ForwardOptions {
  std::vector<Site> capture;
  // Applied in list order; several interventions on one site compose.
  std::vector<Intervention> interventions;
  // Absolute position of the first response token. ResponseOnly
  // interventions fire at positions >= response_start.
  std::size_t response_start = 0;
  // Record the post-RoPE keys and the values each query head attended with.
  bool capture_head_kv = false;
};

struct ForwardTrace {
  std::size_t first_position = 0;  // absolute position of row 0
  std::size_t n_positions = 0;
  std::map<Site, Tensor> activations;  // [n_positions, site_dim], post-intervention
  Tensor logits;                       // [n_positions, vocab]
  // [layer][head] -> [first_position + n_positions, d_k]; filled only with
  // ForwardOptions::capture_head_kv.
  std::vector<std::vector<Tensor>> head_keys;
  std::vector<std::vector<Tensor>> head_values;

  bool has(const Site& site) const { return activations.count(site) != 0; }
  // Throws std::out_of_range naming the site when it was not captured.
  const Tensor& at(const Site& site) const;
};

// Key/value cache for incremental decoding. One state per sequence.
class DecodeState {
 public:
  explicit DecodeState(const ModelConfig& config);
  std::size_t length() const { return length_; }

 private:
  friend ForwardTrace forward_incremental(const Model&, DecodeState&, std::span<const TokenId>,
                                          const ForwardOptions&);
  std::size_t length_ = 0;
  std::vector<std::vector<float>> keys_;    // per layer, [pos][kv_width]
  std::vector<std::vector<float>> values_;  // per layer, [pos][kv_width]
};

// Full forward pass over `tokens`. Throws ConfigError for an empty or
// over-long sequence or invalid token ids, ShapeError for interventions that
// do not fit their site, NumericError when an activation turns non-finite.
ForwardTrace forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& options = {});

// Appends `tokens` to the sequence held by `state` and runs them. The
// returned trace covers only the new positions.
ForwardTrace forward_incremental(const Model& model, DecodeState& state, std::span<const TokenId> tokens,
                                 const ForwardOptions& options = {});

struct GenerateOptions {
  std::size_t max_new = 32;
  double temperature = 1.0;  // 0 means greedy
  std::uint64_t seed = 0;
  std::vector<Intervention> interventions;
  bool stop_at_eos = true;
};

// Returns the generated tokens only (a terminating <eos> is not included).
// Generation also stops when the sequence reaches max_seq.
std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prompt, const GenerateOptions& options);

// -log softmax(logits)[token] for every response token, scored by the clean
// model with the prompt as context.
std::vector<double> token_nlls(const Model& model, std::span<const TokenId> prompt,
                               std::span<const TokenId> response);
// Mean of token_nlls; perplexity is exp() of this.
double sequence_nll(const Model& model, std::span<const TokenId> prompt, std::span<const TokenId> response);

// Row-vector times row-major [in, out] matrix, accumulated in float.
void vec_mat(std::span<const float> x, const Tensor& w, std::span<float> out);
// Head i's term o_{l,i} W^O_{l,i} of the attention output.
std::vector<float> project_head(const Model& model, std::size_t layer, std::size_t head, std::span<const float> head_vec);

}  // namespace headsteer
