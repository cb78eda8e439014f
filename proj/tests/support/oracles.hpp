#pragma once

// Test-side reference computations, written independently of the library's
// forward pass: plain loops in double precision over the raw weight tensors.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "headsteer/model.hpp"
#include "headsteer/rng.hpp"
#include "headsteer/tokenizer.hpp"

namespace oracle {

using headsteer::ModelConfig;
using headsteer::TokenId;
using headsteer::WeightStore;
using Mat = std::vector<std::vector<double>>;

struct Options {
  std::set<std::pair<std::size_t, std::size_t>> zero_heads;  // (layer, head), every position
  bool no_attention = false;                                  // drop every attention sub-layer
  std::map<std::size_t, std::vector<double>> attn_output_add;  // layer -> d-vector
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> head_add;  // -> d_k-vector
  std::size_t add_from = 0;  // additions apply at positions >= add_from
};

struct Result {
  Mat logits;                             // [n][vocab]
  std::vector<Mat> attn_output;           // [layer][n][d]
  std::vector<std::vector<Mat>> heads;    // [layer][head][n][d_k]
  std::vector<Mat> resid_post_mlp;        // [layer][n][d]
};

inline double w(const WeightStore& ws, const std::string& name, std::size_t r, std::size_t c) {
  return ws.get(name).at(r, c);
}

inline std::vector<double> rms(const std::vector<double>& x, const WeightStore& ws, const std::string& g,
                               double eps) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double s = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] * s * ws.get(g).data[j];
  return out;
}

inline std::vector<double> matvec(const std::vector<double>& x, const WeightStore& ws, const std::string& name) {
  const auto& t = ws.get(name);
  std::vector<double> out(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[j] += x[i] * t.at(i, j);
  return out;
}

// Rotates pairs (j, j + d/2) by pos * base^(-2j/d).
inline void rope(double* v, std::size_t dk, std::size_t pos, double base) {
  const std::size_t half = dk / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double ang = static_cast<double>(pos) * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dk));
    const double a = v[j], b = v[j + half];
    v[j] = a * std::cos(ang) - b * std::sin(ang);
    v[j + half] = a * std::sin(ang) + b * std::cos(ang);
  }
}

inline Result forward(const ModelConfig& c, const WeightStore& ws, const std::vector<TokenId>& tokens,
                      const Options& opt = {}) {
  namespace wn = headsteer::weight_names;
  const std::size_t n = tokens.size(), d = c.d_model, dk = c.d_head, H = c.n_heads;
  const std::size_t group = H / c.n_kv_heads;
  Mat h(n, std::vector<double>(d));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < d; ++j) h[p][j] = w(ws, wn::embedding(), tokens[p], j);

  Result res;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    Mat q(n), k(n), v(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto x = rms(h[p], ws, wn::attn_norm(l), c.norm_eps);
      q[p] = matvec(x, ws, wn::wq(l));
      k[p] = matvec(x, ws, wn::wk(l));
      v[p] = matvec(x, ws, wn::wv(l));
      for (std::size_t i = 0; i < H; ++i) rope(q[p].data() + i * dk, dk, p, c.rope_base);
      for (std::size_t g = 0; g < c.n_kv_heads; ++g) rope(k[p].data() + g * dk, dk, p, c.rope_base);
    }
    std::vector<Mat> heads(H, Mat(n, std::vector<double>(dk, 0.0)));
    for (std::size_t i = 0; i < H; ++i) {
      const std::size_t g = i / group;
      for (std::size_t p = 0; p < n; ++p) {
        std::vector<double> s(p + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= p; ++j) {
          double dot = 0.0;
          for (std::size_t t = 0; t < dk; ++t) dot += q[p][i * dk + t] * k[j][g * dk + t];
          s[j] = dot / std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& x : s) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j <= p; ++j)
          for (std::size_t t = 0; t < dk; ++t) heads[i][p][t] += s[j] / z * v[j][g * dk + t];
        if (opt.zero_heads.count({l, i}))
          for (double& x : heads[i][p]) x = 0.0;
        auto ha = opt.head_add.find({l, i});
        if (ha != opt.head_add.end() && p >= opt.add_from)
          for (std::size_t t = 0; t < dk; ++t) heads[i][p][t] += ha->second[t];
      }
    }
    Mat attn(n, std::vector<double>(d, 0.0));
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t t = 0; t < dk; ++t)
          for (std::size_t j = 0; j < d; ++j) attn[p][j] += heads[i][p][t] * w(ws, wn::wo(l), i * dk + t, j);
      auto aa = opt.attn_output_add.find(l);
      if (aa != opt.attn_output_add.end() && p >= opt.add_from)
        for (std::size_t j = 0; j < d; ++j) attn[p][j] += aa->second[j];
      if (opt.no_attention) std::fill(attn[p].begin(), attn[p].end(), 0.0);
      for (std::size_t j = 0; j < d; ++j) h[p][j] += attn[p][j];
      const auto x = rms(h[p], ws, wn::mlp_norm(l), c.norm_eps);
      const auto gate = matvec(x, ws, wn::w_gate(l));
      const auto up = matvec(x, ws, wn::w_up(l));
      std::vector<double> act(c.d_ff);
      for (std::size_t j = 0; j < c.d_ff; ++j) act[j] = gate[j] / (1.0 + std::exp(-gate[j])) * up[j];
      const auto down = matvec(act, ws, wn::w_down(l));
      for (std::size_t j = 0; j < d; ++j) h[p][j] += down[j];
    }
    res.attn_output.push_back(attn);
    res.heads.push_back(heads);
    res.resid_post_mlp.push_back(h);
  }
  for (std::size_t p = 0; p < n; ++p) {
    const auto x = rms(h[p], ws, headsteer::weight_names::final_norm(), c.norm_eps);
    res.logits.push_back(matvec(x, ws, headsteer::weight_names::unembedding()));
  }
  return res;
}

// Largest |a - b| over all entries divided by the largest |b|.
template <typename A, typename B>
double rel_err(const A& a, const B& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::fabs(static_cast<double>(b[i])));
  }
  return den == 0.0 ? num : num / den;
}

// Random architecture drawn from the ranges the tests sweep.
inline ModelConfig random_config(headsteer::Rng& rng, std::size_t max_layers = 4) {
  static const std::size_t heads[] = {2, 4, 8};
  static const std::size_t groups[] = {1, 2, 4};
  ModelConfig c;
  c.n_layers = 1 + static_cast<std::size_t>(headsteer::uniform01(rng) * static_cast<double>(max_layers));
  c.n_heads = heads[static_cast<std::size_t>(headsteer::uniform01(rng) * 3)];
  std::size_t g;
  do g = groups[static_cast<std::size_t>(headsteer::uniform01(rng) * 3)];
  while (c.n_heads % g != 0);
  c.n_kv_heads = g;
  c.d_head = 4 + 2 * static_cast<std::size_t>(headsteer::uniform01(rng) * 3);
  c.d_model = 8 + 4 * static_cast<std::size_t>(headsteer::uniform01(rng) * 4);
  c.d_ff = 2 * c.d_model;
  c.vocab_size = headsteer::Tokenizer::kByteLevelSize;
  c.max_seq = 64;
  return c;
}

inline std::vector<TokenId> random_tokens(headsteer::Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(headsteer::uniform01(rng) * static_cast<double>(vocab));
  return t;
}

inline std::vector<float> random_vector(headsteer::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(scale * headsteer::normal01(rng));
  return v;
}

}  // namespace oracle
