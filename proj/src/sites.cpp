#include "headsteer/sites.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include "headsteer/errors.hpp"
#include "headsteer/model.hpp"

namespace headsteer {

namespace {

constexpr std::array<std::pair<SiteKind, std::string_view>, 8> kKindNames = {{
    {SiteKind::AttnInput, "attn_input"},
    {SiteKind::MlpInput, "mlp_input"},
    {SiteKind::AttnOutput, "attn_output"},
    {SiteKind::MlpOutput, "mlp_output"},
    {SiteKind::ResidualPostAttn, "resid_post_attn"},
    {SiteKind::ResidualPostMlp, "resid_post_mlp"},
    {SiteKind::HeadConcat, "head_concat"},
    {SiteKind::Head, "head"},
}};

std::size_t parse_index(std::string_view text, std::string_view whole) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("malformed site '" + std::string(whole) + "'");
  return v;
}

}  // namespace

std::string_view kind_name(SiteKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

SiteKind parse_site_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError("unknown site kind '" + std::string(name) + "'");
}

std::string to_string(const Site& site) {
  std::string s = std::string(kind_name(site.kind)) + ":" + std::to_string(site.layer);
  if (site.is_head()) s += ":" + std::to_string(site.head);
  return s;
}

Site parse_site(std::string_view text) {
  auto first = text.find(':');
  if (first == std::string_view::npos) throw ConfigError("malformed site '" + std::string(text) + "'");
  Site site;
  site.kind = parse_site_kind(text.substr(0, first));
  auto rest = text.substr(first + 1);
  auto second = rest.find(':');
  if (site.is_head()) {
    if (second == std::string_view::npos)
      throw ConfigError("head site needs layer and head: '" + std::string(text) + "'");
    site.layer = parse_index(rest.substr(0, second), text);
    site.head = parse_index(rest.substr(second + 1), text);
  } else {
    if (second != std::string_view::npos) throw ConfigError("malformed site '" + std::string(text) + "'");
    site.layer = parse_index(rest, text);
  }
  return site;
}

std::size_t site_dim(const Site& site, const ModelConfig& config) {
  switch (site.kind) {
    case SiteKind::Head:
      return config.d_head;
    case SiteKind::HeadConcat:
      return config.concat_width();
    default:
      return config.d_model;
  }
}

void validate_site(const Site& site, const ModelConfig& config) {
  if (site.layer >= config.n_layers)
    throw ConfigError("site " + to_string(site) + ": layer out of range (n_layers=" +
                      std::to_string(config.n_layers) + ")");
  if (site.is_head() && site.head >= config.n_heads)
    throw ConfigError("site " + to_string(site) + ": head out of range (n_heads=" +
                      std::to_string(config.n_heads) + ")");
}

std::vector<Site> layer_sites(const ModelConfig& config) {
  std::vector<Site> out;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    out.push_back(Site::attn_input(l));
    out.push_back(Site::head_concat(l));
    out.push_back(Site::attn_output(l));
    out.push_back(Site::resid_post_attn(l));
    out.push_back(Site::mlp_input(l));
    out.push_back(Site::mlp_output(l));
    out.push_back(Site::resid_post_mlp(l));
  }
  return out;
}

std::vector<Site> head_sites(const ModelConfig& config) {
  std::vector<Site> out;
  for (std::size_t l = 0; l < config.n_layers; ++l)
    for (std::size_t i = 0; i < config.n_heads; ++i) out.push_back(Site::attention_head(l, i));
  return out;
}

Intervention Intervention::add(Site site, std::vector<float> v, float alpha, InterventionScope scope) {
  return Intervention{site, std::move(v), alpha, InterventionMode::Add, scope};
}

Intervention Intervention::zero(Site site, InterventionScope scope) {
  return Intervention{site, {}, 0.0f, InterventionMode::Zero, scope};
}

void validate_intervention(const Intervention& iv, const ModelConfig& config) {
  validate_site(iv.site, config);
  if (iv.mode == InterventionMode::Zero) return;
  if (iv.vector.size() != site_dim(iv.site, config))
    throw ShapeError("intervention at " + to_string(iv.site) + ": vector has " + std::to_string(iv.vector.size()) +
                     " entries, site needs " + std::to_string(site_dim(iv.site, config)));
  if (!std::isfinite(iv.coefficient)) throw NumericError("intervention at " + to_string(iv.site) + ": non-finite coefficient");
  for (float v : iv.vector)
    if (!std::isfinite(v)) throw NumericError("intervention at " + to_string(iv.site) + ": non-finite vector");
}

void apply_in_place(std::span<float> value, const Intervention& iv) {
  if (iv.mode == InterventionMode::Zero) {
    std::fill(value.begin(), value.end(), 0.0f);
    return;
  }
  if (iv.vector.size() != value.size())
    throw ShapeError("intervention at " + to_string(iv.site) + ": vector has " + std::to_string(iv.vector.size()) +
                     " entries, value has " + std::to_string(value.size()));
  for (std::size_t j = 0; j < value.size(); ++j) value[j] += iv.coefficient * iv.vector[j];
}

std::vector<float> apply(std::span<const float> value, const Intervention& iv) {
  std::vector<float> out(value.begin(), value.end());
  apply_in_place(out, iv);
  return out;
}

}  // namespace headsteer
