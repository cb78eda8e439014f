#pragma once

// Architecture description and weight storage for the reference decoder-only
// transformer (pre-norm RMSNorm, grouped-query attention with RoPE, gated SiLU
// MLP). All matrices are stored row-major as [in, out] and applied to row
// vectors, so the attention output projection W^O has shape [H*d_k, d] and the
// rows [i*d_k, (i+1)*d_k) form head i's partition.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace headsteer {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 16;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t d_head = 4;
  std::size_t d_ff = 32;
  std::size_t vocab_size = 262;
  std::size_t max_seq = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  // Throws ConfigError on a violated invariant.
  void validate() const;

  std::size_t concat_width() const { return n_heads * d_head; }
  std::size_t kv_width() const { return n_kv_heads * d_head; }
  std::size_t group_size() const { return n_heads / n_kv_heads; }
  std::size_t kv_head_of(std::size_t head) const { return head / group_size(); }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, float fill = 0.0f);
  Tensor(std::vector<std::size_t> s, std::vector<float> d);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

namespace weight_names {
std::string embedding();
std::string final_norm();
std::string unembedding();
std::string attn_norm(std::size_t layer);
std::string wq(std::size_t layer);
std::string wk(std::size_t layer);
std::string wv(std::size_t layer);
std::string wo(std::size_t layer);
std::string mlp_norm(std::size_t layer);
std::string w_gate(std::size_t layer);
std::string w_up(std::size_t layer);
std::string w_down(std::size_t layer);
}  // namespace weight_names

// Every tensor name the architecture needs, in canonical order, with shapes.
std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(const ModelConfig& config);

class WeightStore {
 public:
  void set(std::string name, Tensor t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  // Checks presence, shapes and finiteness against `config`; rejects tensors
  // the architecture does not know. Throws ShapeError / NumericError.
  void validate(const ModelConfig& config) const;

 private:
  std::map<std::string, Tensor> tensors_;
};

struct InitOptions {
  float embedding_std = 1.0f;
  // Scale applied on top of 1/sqrt(fan_in) for the two projections that
  // write into the residual stream (W^O and the MLP down projection).
  float residual_write_scale = 1.0f;
  float unembedding_scale = 1.0f;
};

// Gaussian initialisation; norm weights are ones.
WeightStore random_weights(const ModelConfig& config, std::uint64_t seed, const InitOptions& opts = {});

// Per-layer views into a validated WeightStore.
struct LayerWeights {
  const Tensor* attn_norm;
  const Tensor* wq;
  const Tensor* wk;
  const Tensor* wv;
  const Tensor* wo;
  const Tensor* mlp_norm;
  const Tensor* w_gate;
  const Tensor* w_up;
  const Tensor* w_down;
};

// Immutable, validated (config, weights) pair. Copies share the same storage,
// so a Model can be handed to many threads.
class Model {
 public:
  Model(ModelConfig config, WeightStore weights);

  const ModelConfig& config() const { return config_; }
  const WeightStore& weights() const { return *weights_; }
  const LayerWeights& layer(std::size_t l) const { return layers_.at(l); }
  const Tensor& embedding() const { return *embedding_; }
  const Tensor& final_norm() const { return *final_norm_; }
  const Tensor& unembedding() const { return *unembedding_; }

  // Rows of W^O belonging to `head`: a [d_k, d] block.
  std::span<const float> wo_partition(std::size_t layer, std::size_t head) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const WeightStore> weights_;
  std::vector<LayerWeights> layers_;
  const Tensor* embedding_ = nullptr;
  const Tensor* final_norm_ = nullptr;
  const Tensor* unembedding_ = nullptr;
};

// `<manifest>.json` + `<stem>.bin`. The manifest carries the config.
void save_model(const std::filesystem::path& manifest, const ModelConfig& config, const WeightStore& weights);
Model load_model(const std::filesystem::path& manifest);

}  // namespace headsteer
