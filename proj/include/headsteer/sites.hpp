#pragma once

// Where in the network a vector is read from or written to, and the
// interventions that write there.
//
// Per layer l the forward pass visits, in order:
//   attn_input:l        normalised input of the attention sub-layer      [d]
//   head:l:i            output o_{l,i} of head i before W^O              [d_k]
//   head_concat:l       [o_{l,1}; ...; o_{l,H}]                          [H*d_k]
//   attn_output:l       concat * W^O, before the residual add            [d]
//   resid_post_attn:l   h'_l = h_l + attn_output                         [d]
//   mlp_input:l         normalised input of the MLP sub-layer            [d]
//   mlp_output:l        MLP output, before the residual add              [d]
//   resid_post_mlp:l    h_{l+1} = h'_l + mlp_output                      [d]

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace headsteer {

struct ModelConfig;

enum class SiteKind { AttnInput, MlpInput, AttnOutput, MlpOutput, ResidualPostAttn, ResidualPostMlp, HeadConcat, Head };

std::string_view kind_name(SiteKind kind);
SiteKind parse_site_kind(std::string_view name);

struct Site {
  SiteKind kind = SiteKind::AttnOutput;
  std::size_t layer = 0;
  std::size_t head = 0;  // meaningful only for SiteKind::Head

  static Site attn_input(std::size_t l) { return {SiteKind::AttnInput, l, 0}; }
  static Site mlp_input(std::size_t l) { return {SiteKind::MlpInput, l, 0}; }
  static Site attn_output(std::size_t l) { return {SiteKind::AttnOutput, l, 0}; }
  static Site mlp_output(std::size_t l) { return {SiteKind::MlpOutput, l, 0}; }
  static Site resid_post_attn(std::size_t l) { return {SiteKind::ResidualPostAttn, l, 0}; }
  static Site resid_post_mlp(std::size_t l) { return {SiteKind::ResidualPostMlp, l, 0}; }
  static Site head_concat(std::size_t l) { return {SiteKind::HeadConcat, l, 0}; }
  static Site attention_head(std::size_t l, std::size_t i) { return {SiteKind::Head, l, i}; }

  bool is_head() const { return kind == SiteKind::Head; }

  friend auto operator<=>(const Site& a, const Site& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    if (auto c = a.kind <=> b.kind; c != 0) return c;
    return a.is_head() ? a.head <=> b.head : std::strong_ordering::equal;
  }
  friend bool operator==(const Site& a, const Site& b) { return (a <=> b) == 0; }
};

// `kind:layer` or `head:layer:head`, e.g. "attn_output:3", "head:20:5".
std::string to_string(const Site& site);
// Throws ConfigError on malformed input.
Site parse_site(std::string_view text);

std::size_t site_dim(const Site& site, const ModelConfig& config);
// Throws ConfigError if the layer/head index is out of range.
void validate_site(const Site& site, const ModelConfig& config);

// Every non-head site of every layer (seven kinds), in forward order.
std::vector<Site> layer_sites(const ModelConfig& config);
// Every Head(l, i) site.
std::vector<Site> head_sites(const ModelConfig& config);

enum class InterventionMode { Add, Zero };
enum class InterventionScope { ResponseOnly, AllTokens };

struct Intervention {
  Site site;
  std::vector<float> vector;  // ignored in Zero mode
  float coefficient = 1.0f;
  InterventionMode mode = InterventionMode::Add;
  InterventionScope scope = InterventionScope::ResponseOnly;

  static Intervention add(Site site, std::vector<float> v, float alpha,
                          InterventionScope scope = InterventionScope::ResponseOnly);
  // Zero ablation hits prompt and response tokens alike.
  static Intervention zero(Site site, InterventionScope scope = InterventionScope::AllTokens);

  bool active_at(std::size_t position, std::size_t response_start) const {
    return scope == InterventionScope::AllTokens || position >= response_start;
  }
};

// Throws ShapeError on a dimension mismatch, NumericError on a non-finite
// vector, ConfigError on an invalid site.
void validate_intervention(const Intervention& iv, const ModelConfig& config);

// value + alpha * vector in Add mode, zeros in Zero mode. For a Head site the
// value is that head's d_k slice of the concat.
std::vector<float> apply(std::span<const float> value, const Intervention& iv);
void apply_in_place(std::span<float> value, const Intervention& iv);

}  // namespace headsteer
