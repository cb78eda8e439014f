#include "headsteer/localization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "headsteer/errors.hpp"
#include "headsteer/forward.hpp"

namespace headsteer {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityMatrix layer_similarity(const VectorSet& vectors, std::span<const Site> sites) {
  SimilarityMatrix m;
  m.labels.assign(sites.begin(), sites.end());
  std::vector<const SteeringVector*> vs;
  for (const Site& s : sites) {
    auto it = vectors.find(s);
    if (it == vectors.end()) throw ConfigError("layer_similarity: no vector for " + to_string(s));
    if (!vs.empty() && it->second.persona != vs.front()->persona)
      throw ConfigError("layer_similarity: vectors from different personas");
    vs.push_back(&it->second);
  }
  const std::size_t n = vs.size();
  m.values.assign(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    const bool zero = std::all_of(vs[a]->direction.begin(), vs[a]->direction.end(), [](float x) { return x == 0.0f; });
    if (zero) m.zero_norm.push_back(m.labels[a]);
    for (std::size_t b = a; b < n; ++b) {
      double c = a == b && !zero ? 1.0 : cosine_similarity(vs[a]->direction, vs[b]->direction);
      m.values[a * n + b] = m.values[b * n + a] = c;
    }
  }
  return m;
}

std::string SimilarityMatrix::to_csv() const {
  std::ostringstream os;
  os << "site";
  for (const auto& l : labels) os << ',' << to_string(l);
  os << '\n';
  for (std::size_t a = 0; a < size(); ++a) {
    os << to_string(labels[a]);
    for (std::size_t b = 0; b < size(); ++b) os << ',' << format_double(at(a, b));
    os << '\n';
  }
  return os.str();
}

nlohmann::json SimilarityMatrix::to_json() const {
  nlohmann::json j;
  j["labels"] = nlohmann::json::array();
  for (const auto& l : labels) j["labels"].push_back(to_string(l));
  j["values"] = nlohmann::json::object();
  for (std::size_t a = 0; a < size(); ++a) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t b = 0; b < size(); ++b) row[to_string(labels[b])] = at(a, b);
    j["values"][to_string(labels[a])] = row;
  }
  j["zero_norm"] = nlohmann::json::array();
  for (const auto& z : zero_norm) j["zero_norm"].push_back(to_string(z));
  return j;
}

std::vector<Site> residual_input_sites(const ModelConfig& config) {
  std::vector<Site> out;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    out.push_back(Site::attn_input(l));
    out.push_back(Site::mlp_input(l));
  }
  return out;
}

std::optional<std::size_t> transition_index(const SimilarityMatrix& matrix, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("transition threshold must lie in (0, 1), got " + format_double(threshold));
  const std::size_t n = matrix.size();
  if (n < 2) return std::nullopt;
  // Grow the block upwards from the bottom-right corner; the first failure
  // fixes the earliest start.
  std::optional<std::size_t> best;
  for (std::size_t k = n - 1; k-- > 0;) {
    bool ok = true;
    for (std::size_t b = k + 1; b < n && ok; ++b) ok = matrix.at(k, b) > threshold;
    if (!ok) break;
    best = k;
  }
  return best;
}

std::optional<std::size_t> transition_layer(const SimilarityMatrix& matrix, double threshold) {
  auto idx = transition_index(matrix, threshold);
  if (!idx) return std::nullopt;
  return matrix.labels[*idx].layer;
}

std::vector<double> head_contributions(std::span<const float> head_concat_vector,
                                       std::span<const float> attn_output_vector, std::size_t layer,
                                       const Model& model) {
  const ModelConfig& c = model.config();
  if (attn_output_vector.size() != c.d_model) throw ShapeError("head_contributions: AttnOutput vector width");
  auto heads = head_concat_split(head_concat_vector, c.n_heads, c.d_head);
  std::vector<double> scores(c.n_heads);
  for (std::size_t i = 0; i < c.n_heads; ++i) {
    auto proj = project_head(model, layer, i, heads[i]);
    double s = 0.0;
    for (std::size_t j = 0; j < proj.size(); ++j) s += static_cast<double>(proj[j]) * attn_output_vector[j];
    scores[i] = s;
  }
  return scores;
}

std::vector<double> head_contributions(const ActivationBank& bank, std::size_t layer, const Model& model) {
  const ModelConfig& c = model.config();
  auto concat = diff_in_means(bank, Site::head_concat(layer), c);
  auto mha = diff_in_means(bank, Site::attn_output(layer), c);
  return head_contributions(concat.direction, mha.direction, layer, model);
}

ContributionTable contribution_table(const ActivationBank& bank, std::span<const std::size_t> layers,
                                     const Model& model) {
  ContributionTable t;
  t.persona = bank.persona;
  for (std::size_t l : layers) {
    const auto mha = diff_in_means(bank, Site::attn_output(l), model.config());
    const auto concat = diff_in_means(bank, Site::head_concat(l), model.config());
    double n2 = 0.0;
    for (float x : mha.direction) n2 += static_cast<double>(x) * x;
    t.layers.push_back(l);
    t.scores.push_back(head_contributions(concat.direction, mha.direction, l, model));
    t.aggregate_norm_sq.push_back(n2);
  }
  return t;
}

std::string ContributionTable::to_csv() const {
  std::ostringstream os;
  os << "layer,head,score\n";
  for (std::size_t r = 0; r < layers.size(); ++r)
    for (std::size_t h = 0; h < scores[r].size(); ++h) os << layers[r] << ',' << h << ',' << format_double(scores[r][h]) << '\n';
  return os.str();
}

nlohmann::json ContributionTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < layers.size(); ++r)
    rows.push_back({{"layer", layers[r]}, {"scores", scores[r]}, {"aggregate_norm_sq", aggregate_norm_sq[r]}});
  return {{"persona", persona}, {"rows", rows}};
}

HeadSelection select_heads(std::span<const double> scores, std::size_t layer, std::size_t k_pos, std::size_t k_neg) {
  const std::size_t h = scores.size();
  if (k_pos == 0) throw ConfigError("select_heads: k_pos must be at least 1");
  if (k_pos > h || k_neg > h)
    throw ConfigError("select_heads: k exceeds the " + std::to_string(h) + " available heads");
  std::vector<std::size_t> order(h);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  HeadSelection sel;
  sel.k_pos = k_pos;
  sel.k_neg = k_neg;
  std::vector<bool> taken(h, false);
  for (std::size_t r = 0; r < k_pos; ++r) {
    sel.correlated.push_back({layer, order[r]});
    taken[order[r]] = true;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  for (std::size_t idx : order) {
    if (sel.anti_correlated.size() == k_neg) break;
    if (taken[idx] || !(scores[idx] < 0.0)) continue;
    sel.anti_correlated.push_back({layer, idx});
  }
  return sel;
}

nlohmann::json HeadSelection::to_json() const {
  auto list = [](const std::vector<HeadRef>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : v) a.push_back({{"layer", r.layer}, {"head", r.head}});
    return a;
  };
  return {{"correlated", list(correlated)}, {"anti_correlated", list(anti_correlated)}, {"k_pos", k_pos}, {"k_neg", k_neg}};
}

HeadSelection HeadSelection::from_json(const nlohmann::json& j) {
  auto list = [](const nlohmann::json& a) {
    std::vector<HeadRef> v;
    for (const auto& r : a) v.push_back({r.at("layer").get<std::size_t>(), r.at("head").get<std::size_t>()});
    return v;
  };
  try {
    HeadSelection s;
    s.correlated = list(j.at("correlated"));
    s.anti_correlated = list(j.value("anti_correlated", nlohmann::json::array()));
    s.k_pos = j.value("k_pos", s.correlated.size());
    s.k_neg = j.value("k_neg", s.anti_correlated.size());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("head selection: ") + e.what());
  }
}

}  // namespace headsteer
