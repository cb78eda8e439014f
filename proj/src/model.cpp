#include "headsteer/model.hpp"

#include <cmath>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"
#include "headsteer/rng.hpp"

namespace headsteer {

namespace {

constexpr std::string_view kWeightsFormat = "headsteer.weights";

std::string layer_name(std::size_t layer, const char* leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(n_kv_heads >= 1, "n_kv_heads must be >= 1");
  require(d_head >= 1, "d_head must be >= 1");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq >= 1, "max_seq must be >= 1");
  require(n_heads % n_kv_heads == 0, "n_heads must be a multiple of n_kv_heads");
  require(d_head % 2 == 0, "d_head must be even for rotary embeddings");
  require(std::isfinite(rope_base) && rope_base > 0.0, "rope_base must be positive");
  require(std::isfinite(norm_eps) && norm_eps > 0.0, "norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},     {"d_model", d_model},       {"n_heads", n_heads},
          {"n_kv_heads", n_kv_heads}, {"d_head", d_head},         {"d_ff", d_ff},
          {"vocab_size", vocab_size}, {"max_seq", max_seq},       {"rope_base", rope_base},
          {"norm_eps", norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    c.d_head = j.at("d_head").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.rope_base = j.value("rope_base", 10000.0);
    c.norm_eps = j.value("norm_eps", 1e-6);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor::Tensor(std::vector<std::size_t> s, float fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  data.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  std::size_t n = 1;
  for (auto dim : shape) n *= dim;
  if (n != data.size()) throw ShapeError("tensor data does not match shape " + shape_str(shape));
}

namespace weight_names {
std::string embedding() { return "tok_embeddings"; }
std::string final_norm() { return "final_norm"; }
std::string unembedding() { return "unembedding"; }
std::string attn_norm(std::size_t l) { return layer_name(l, "attn_norm"); }
std::string wq(std::size_t l) { return layer_name(l, "wq"); }
std::string wk(std::size_t l) { return layer_name(l, "wk"); }
std::string wv(std::size_t l) { return layer_name(l, "wv"); }
std::string wo(std::size_t l) { return layer_name(l, "wo"); }
std::string mlp_norm(std::size_t l) { return layer_name(l, "mlp_norm"); }
std::string w_gate(std::size_t l) { return layer_name(l, "w_gate"); }
std::string w_up(std::size_t l) { return layer_name(l, "w_up"); }
std::string w_down(std::size_t l) { return layer_name(l, "w_down"); }
}  // namespace weight_names

std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(const ModelConfig& c) {
  namespace wn = weight_names;
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  out.emplace_back(wn::embedding(), std::vector<std::size_t>{c.vocab_size, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    out.emplace_back(wn::attn_norm(l), std::vector<std::size_t>{d});
    out.emplace_back(wn::wq(l), std::vector<std::size_t>{d, c.concat_width()});
    out.emplace_back(wn::wk(l), std::vector<std::size_t>{d, c.kv_width()});
    out.emplace_back(wn::wv(l), std::vector<std::size_t>{d, c.kv_width()});
    out.emplace_back(wn::wo(l), std::vector<std::size_t>{c.concat_width(), d});
    out.emplace_back(wn::mlp_norm(l), std::vector<std::size_t>{d});
    out.emplace_back(wn::w_gate(l), std::vector<std::size_t>{d, c.d_ff});
    out.emplace_back(wn::w_up(l), std::vector<std::size_t>{d, c.d_ff});
    out.emplace_back(wn::w_down(l), std::vector<std::size_t>{c.d_ff, d});
  }
  out.emplace_back(wn::final_norm(), std::vector<std::size_t>{d});
  out.emplace_back(wn::unembedding(), std::vector<std::size_t>{d, c.vocab_size});
  return out;
}

void WeightStore::set(std::string name, Tensor t) { tensors_[std::move(name)] = std::move(t); }

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ShapeError("missing weight tensor '" + name + "'");
  return it->second;
}

Tensor& WeightStore::get_mutable(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ShapeError("missing weight tensor '" + name + "'");
  return it->second;
}

void WeightStore::validate(const ModelConfig& config) const {
  config.validate();
  const auto expected = expected_tensors(config);
  for (const auto& [name, shape] : expected) {
    const Tensor& t = get(name);
    if (t.shape != shape)
      throw ShapeError("weight '" + name + "' has shape " + shape_str(t.shape) + ", expected " +
                       shape_str(shape));
    for (float v : t.data)
      if (!std::isfinite(v)) throw NumericError("weight '" + name + "' contains a non-finite value");
  }
  if (tensors_.size() != expected.size()) {
    for (const auto& [name, t] : tensors_) {
      bool known = false;
      for (const auto& e : expected) known = known || e.first == name;
      if (!known) throw ShapeError("unexpected weight tensor '" + name + "'");
    }
  }
}

WeightStore random_weights(const ModelConfig& c, std::uint64_t seed, const InitOptions& opts) {
  c.validate();
  Rng rng(derive_seed(seed, {0x77656967ULL}));
  WeightStore ws;
  for (const auto& [name, shape] : expected_tensors(c)) {
    Tensor t(shape);
    if (shape.size() == 1) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else {
      double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      if (name == weight_names::embedding()) std = opts.embedding_std;
      if (name.ends_with(".wo") || name.ends_with(".w_down")) std *= opts.residual_write_scale;
      if (name == weight_names::unembedding()) std *= opts.unembedding_scale;
      for (float& v : t.data) v = static_cast<float>(std * normal01(rng));
    }
    ws.set(name, std::move(t));
  }
  return ws;
}

Model::Model(ModelConfig config, WeightStore weights)
    : config_(config), weights_(std::make_shared<const WeightStore>(std::move(weights))) {
  weights_->validate(config_);
  namespace wn = weight_names;
  const WeightStore& w = *weights_;
  embedding_ = &w.get(wn::embedding());
  final_norm_ = &w.get(wn::final_norm());
  unembedding_ = &w.get(wn::unembedding());
  layers_.reserve(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    layers_.push_back(LayerWeights{&w.get(wn::attn_norm(l)), &w.get(wn::wq(l)), &w.get(wn::wk(l)),
                                   &w.get(wn::wv(l)), &w.get(wn::wo(l)), &w.get(wn::mlp_norm(l)),
                                   &w.get(wn::w_gate(l)), &w.get(wn::w_up(l)), &w.get(wn::w_down(l))});
  }
}

std::span<const float> Model::wo_partition(std::size_t layer, std::size_t head) const {
  if (head >= config_.n_heads) throw ShapeError("head index out of range");
  const Tensor& wo = *layers_.at(layer).wo;
  const std::size_t block = config_.d_head * config_.d_model;
  return {wo.data.data() + head * block, block};
}

void save_model(const std::filesystem::path& manifest, const ModelConfig& config, const WeightStore& weights) {
  weights.validate(config);
  std::vector<ArchiveEntry> entries;
  for (const auto& [name, shape] : expected_tensors(config)) {
    const Tensor& t = weights.get(name);
    entries.push_back(ArchiveEntry{name, t.shape, t.data});
  }
  write_archive(manifest, kWeightsFormat, {{"config", config.to_json()}}, entries);
}

Model load_model(const std::filesystem::path& manifest) {
  Archive a = read_archive(manifest, kWeightsFormat);
  if (!a.header.contains("config")) throw ConfigError(manifest.string() + ": manifest has no config");
  ModelConfig config = ModelConfig::from_json(a.header.at("config"));
  WeightStore ws;
  for (auto& e : a.entries) ws.set(e.name, Tensor(std::move(e.shape), std::move(e.data)));
  return Model(config, std::move(ws));
}

}  // namespace headsteer
