#include "headsteer/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "headsteer/errors.hpp"
#include "headsteer/rng.hpp"

namespace headsteer {

namespace {

void rms_norm(std::span<const float> x, const Tensor& weight, double eps, std::span<float> out) {
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float scale = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + static_cast<float>(eps));
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] * scale * weight.data[j];
}

// Rotate-half RoPE on one head vector at absolute position `pos`.
void apply_rope(std::span<float> v, std::size_t pos, double base) {
  const std::size_t half = v.size() / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double inv_freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(v.size()));
    const double angle = static_cast<double>(pos) * inv_freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = v[j];
    const float b = v[j + half];
    v[j] = a * c - b * s;
    v[j + half] = a * s + b * c;
  }
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

void check_finite(std::span<const float> v, const Site& site) {
  for (float x : v)
    if (!std::isfinite(x))
      throw NumericError("non-finite activation at " + to_string(site) + " (layer " + std::to_string(site.layer) +
                         ")");
}

// Interventions bucketed by site, preserving list order within a bucket.
class InterventionIndex {
 public:
  InterventionIndex(const std::vector<Intervention>& ivs, const ModelConfig& config) {
    for (const auto& iv : ivs) {
      validate_intervention(iv, config);
      by_site_[iv.site].push_back(&iv);
    }
  }

  void apply(const Site& site, std::span<float> value, std::size_t pos, std::size_t response_start) const {
    auto it = by_site_.find(site);
    if (it == by_site_.end()) return;
    for (const Intervention* iv : it->second)
      if (iv->active_at(pos, response_start)) apply_in_place(value, *iv);
  }

  bool any_heads(std::size_t layer) const {
    auto it = by_site_.lower_bound(Site::attention_head(layer, 0));
    return it != by_site_.end() && it->first.is_head() && it->first.layer == layer;
  }

 private:
  std::map<Site, std::vector<const Intervention*>> by_site_;
};

// Captures requested sites row by row.
class Recorder {
 public:
  Recorder(const std::vector<Site>& sites, const ModelConfig& config, std::size_t n, ForwardTrace& trace)
      : trace_(trace) {
    for (const auto& s : sites) {
      validate_site(s, config);
      trace_.activations.emplace(s, Tensor({n, site_dim(s, config)}));
    }
  }

  void record(const Site& site, std::size_t row, std::span<const float> value) {
    auto it = trace_.activations.find(site);
    if (it == trace_.activations.end()) return;
    std::copy(value.begin(), value.end(), it->second.row(row).begin());
  }

 private:
  ForwardTrace& trace_;
};

}  // namespace

const Tensor& ForwardTrace::at(const Site& site) const {
  auto it = activations.find(site);
  if (it == activations.end()) throw std::out_of_range("site " + to_string(site) + " was not captured");
  return it->second;
}

DecodeState::DecodeState(const ModelConfig& config) : keys_(config.n_layers), values_(config.n_layers) {}

void vec_mat(std::span<const float> x, const Tensor& w, std::span<float> out) {
  const std::size_t cols = w.cols();
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x[i];
    const float* row = w.data.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xi * row[j];
  }
}

std::vector<float> project_head(const Model& model, std::size_t layer, std::size_t head,
                                std::span<const float> head_vec) {
  const auto& c = model.config();
  if (head_vec.size() != c.d_head) throw ShapeError("head vector must have d_head entries");
  auto block = model.wo_partition(layer, head);
  std::vector<float> out(c.d_model, 0.0f);
  for (std::size_t r = 0; r < c.d_head; ++r)
    for (std::size_t j = 0; j < c.d_model; ++j) out[j] += head_vec[r] * block[r * c.d_model + j];
  return out;
}

ForwardTrace forward_incremental(const Model& model, DecodeState& state, std::span<const TokenId> tokens,
                                 const ForwardOptions& options) {
  const ModelConfig& c = model.config();
  if (tokens.empty()) throw ConfigError("forward: empty token sequence");
  if (state.length_ + tokens.size() > c.max_seq)
    throw ConfigError("forward: sequence length " + std::to_string(state.length_ + tokens.size()) +
                      " exceeds max_seq " + std::to_string(c.max_seq));
  for (TokenId t : tokens)
    if (t >= c.vocab_size) throw ConfigError("forward: token id " + std::to_string(t) + " outside vocabulary");

  const std::size_t m = tokens.size();
  const std::size_t start = state.length_;
  const std::size_t d = c.d_model;
  const std::size_t dk = c.d_head;
  const std::size_t kvw = c.kv_width();
  const std::size_t cw = c.concat_width();
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));

  InterventionIndex ivs(options.interventions, c);
  ForwardTrace trace;
  trace.first_position = start;
  trace.n_positions = m;
  Recorder rec(options.capture, c, m, trace);

  Tensor h({m, d});
  for (std::size_t r = 0; r < m; ++r) {
    auto e = model.embedding().row(tokens[r]);
    std::copy(e.begin(), e.end(), h.row(r).begin());
  }

  std::vector<float> x(d), q(cw), k(kvw), v(kvw), concat(cw), sub(d), gate(c.d_ff), up(c.d_ff);
  std::vector<float> scores;
  Tensor attn_in({m, d});
  Tensor queries({m, cw});

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& lw = model.layer(l);
    auto& kcache = state.keys_[l];
    auto& vcache = state.values_[l];
    kcache.resize((start + m) * kvw);
    vcache.resize((start + m) * kvw);

    // Attention inputs, projections and cache writes for every new position
    // first, so that later rows can attend to earlier ones.
    const Site s_attn_in = Site::attn_input(l);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t pos = start + r;
      auto xin = attn_in.row(r);
      rms_norm(h.row(r), *lw.attn_norm, c.norm_eps, xin);
      ivs.apply(s_attn_in, xin, pos, options.response_start);
      check_finite(xin, s_attn_in);
      rec.record(s_attn_in, r, xin);

      auto qr = queries.row(r);
      vec_mat(xin, *lw.wq, qr);
      vec_mat(xin, *lw.wk, k);
      vec_mat(xin, *lw.wv, v);
      for (std::size_t i = 0; i < c.n_heads; ++i) apply_rope(qr.subspan(i * dk, dk), pos, c.rope_base);
      for (std::size_t g = 0; g < c.n_kv_heads; ++g)
        apply_rope(std::span<float>(k).subspan(g * dk, dk), pos, c.rope_base);
      std::copy(k.begin(), k.end(), kcache.begin() + static_cast<std::ptrdiff_t>(pos * kvw));
      std::copy(v.begin(), v.end(), vcache.begin() + static_cast<std::ptrdiff_t>(pos * kvw));
    }

    const Site s_concat = Site::head_concat(l);
    const Site s_attn_out = Site::attn_output(l);
    const Site s_post_attn = Site::resid_post_attn(l);
    const Site s_mlp_in = Site::mlp_input(l);
    const Site s_mlp_out = Site::mlp_output(l);
    const Site s_post_mlp = Site::resid_post_mlp(l);
    const bool head_ivs = ivs.any_heads(l);

    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t pos = start + r;
      auto qr = queries.row(r);
      scores.resize(pos + 1);
      for (std::size_t i = 0; i < c.n_heads; ++i) {
        const std::size_t g = c.kv_head_of(i);
        const float* qi = qr.data() + i * dk;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j <= pos; ++j) {
          const float* kj = kcache.data() + j * kvw + g * dk;
          float s = 0.0f;
          for (std::size_t t = 0; t < dk; ++t) s += qi[t] * kj[t];
          s *= inv_sqrt_dk;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        float denom = 0.0f;
        for (std::size_t j = 0; j <= pos; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        float* oi = concat.data() + i * dk;
        std::fill(oi, oi + dk, 0.0f);
        for (std::size_t j = 0; j <= pos; ++j) {
          const float p = scores[j] / denom;
          const float* vj = vcache.data() + j * kvw + g * dk;
          for (std::size_t t = 0; t < dk; ++t) oi[t] += p * vj[t];
        }
      }

      if (head_ivs)
        for (std::size_t i = 0; i < c.n_heads; ++i)
          ivs.apply(Site::attention_head(l, i), std::span<float>(concat).subspan(i * dk, dk), pos,
                    options.response_start);
      ivs.apply(s_concat, concat, pos, options.response_start);
      check_finite(concat, s_concat);
      rec.record(s_concat, r, concat);
      for (std::size_t i = 0; i < c.n_heads; ++i)
        rec.record(Site::attention_head(l, i), r, std::span<const float>(concat).subspan(i * dk, dk));

      vec_mat(concat, *lw.wo, sub);
      ivs.apply(s_attn_out, sub, pos, options.response_start);
      check_finite(sub, s_attn_out);
      rec.record(s_attn_out, r, sub);

      auto hr = h.row(r);
      for (std::size_t j = 0; j < d; ++j) hr[j] += sub[j];
      ivs.apply(s_post_attn, hr, pos, options.response_start);
      check_finite(hr, s_post_attn);
      rec.record(s_post_attn, r, hr);

      rms_norm(hr, *lw.mlp_norm, c.norm_eps, x);
      ivs.apply(s_mlp_in, x, pos, options.response_start);
      check_finite(x, s_mlp_in);
      rec.record(s_mlp_in, r, x);

      vec_mat(x, *lw.w_gate, gate);
      vec_mat(x, *lw.w_up, up);
      for (std::size_t j = 0; j < c.d_ff; ++j) gate[j] = silu(gate[j]) * up[j];
      vec_mat(gate, *lw.w_down, sub);
      ivs.apply(s_mlp_out, sub, pos, options.response_start);
      check_finite(sub, s_mlp_out);
      rec.record(s_mlp_out, r, sub);

      for (std::size_t j = 0; j < d; ++j) hr[j] += sub[j];
      ivs.apply(s_post_mlp, hr, pos, options.response_start);
      check_finite(hr, s_post_mlp);
      rec.record(s_post_mlp, r, hr);
    }
  }

  trace.logits = Tensor({m, c.vocab_size});
  for (std::size_t r = 0; r < m; ++r) {
    rms_norm(h.row(r), model.final_norm(), c.norm_eps, x);
    auto lr = trace.logits.row(r);
    vec_mat(x, model.unembedding(), lr);
    for (float v_ : lr)
      if (!std::isfinite(v_)) throw NumericError("non-finite logits at position " + std::to_string(start + r));
  }

  state.length_ = start + m;

  if (options.capture_head_kv) {
    const std::size_t n = state.length_;
    trace.head_keys.assign(c.n_layers, {});
    trace.head_values.assign(c.n_layers, {});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t i = 0; i < c.n_heads; ++i) {
        const std::size_t g = c.kv_head_of(i);
        Tensor kt({n, dk}), vt({n, dk});
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t t = 0; t < dk; ++t) {
            kt.at(j, t) = state.keys_[l][j * kvw + g * dk + t];
            vt.at(j, t) = state.values_[l][j * kvw + g * dk + t];
          }
        trace.head_keys[l].push_back(std::move(kt));
        trace.head_values[l].push_back(std::move(vt));
      }
    }
  }
  return trace;
}

ForwardTrace forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& options) {
  DecodeState state(model.config());
  return forward_incremental(model, state, tokens, options);
}

namespace {

TokenId sample_token(std::span<const float> logits, double temperature, Rng& rng) {
  if (temperature <= 0.0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += p[i];
  }
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return static_cast<TokenId>(i);
    u -= p[i];
  }
  // Rounding left u just above the last bucket.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  return 0;
}

}  // namespace

std::vector<TokenId> generate(const Model& model, std::span<const TokenId> prompt, const GenerateOptions& options) {
  const ModelConfig& c = model.config();
  if (!(options.temperature >= 0.0)) throw ConfigError("generate: temperature must be >= 0");
  if (prompt.empty()) throw ConfigError("generate: empty prompt");
  if (prompt.size() > c.max_seq)
    throw ConfigError("generate: prompt length " + std::to_string(prompt.size()) + " exceeds max_seq " +
                      std::to_string(c.max_seq));

  ForwardOptions fo;
  fo.interventions = options.interventions;
  fo.response_start = prompt.size();

  Rng rng(derive_seed(options.seed, {0x67656eULL}));
  DecodeState state(c);
  std::vector<TokenId> out;
  ForwardTrace step = forward_incremental(model, state, prompt, fo);
  const std::size_t budget = std::min(options.max_new, c.max_seq - prompt.size());
  while (out.size() < budget) {
    const TokenId next = sample_token(step.logits.row(step.n_positions - 1), options.temperature, rng);
    if (options.stop_at_eos && next == Tokenizer::kEos) break;
    out.push_back(next);
    if (out.size() == budget) break;
    const TokenId one[1] = {next};
    step = forward_incremental(model, state, one, fo);
  }
  return out;
}

std::vector<double> token_nlls(const Model& model, std::span<const TokenId> prompt,
                               std::span<const TokenId> response) {
  if (prompt.empty()) throw ConfigError("sequence_nll: the prompt must hold at least one token");
  if (response.empty()) throw ConfigError("sequence_nll: empty response");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  if (seq.size() > model.config().max_seq)
    throw ConfigError("sequence_nll: prompt + response exceeds max_seq");

  // Only rows P-1 .. P+R-2 predict response tokens; the last row is unused.
  ForwardTrace t = forward(model, std::span<const TokenId>(seq).first(seq.size() - 1));
  std::vector<double> out;
  out.reserve(response.size());
  for (std::size_t j = 0; j < response.size(); ++j) {
    auto row = t.logits.row(prompt.size() - 1 + j);
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    out.push_back(-(static_cast<double>(row[response[j]]) - mx - std::log(z)));
  }
  return out;
}

double sequence_nll(const Model& model, std::span<const TokenId> prompt, std::span<const TokenId> response) {
  auto nll = token_nlls(model, prompt, response);
  double s = 0.0;
  for (double v : nll) s += v;
  return s / static_cast<double>(nll.size());
}

}  // namespace headsteer
