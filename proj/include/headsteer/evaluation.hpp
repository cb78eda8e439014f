#pragma once

// Pareto frontiers of (trait, coherency) points and the constrained envelope
// area score, plus the offline synthetic judge.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headsteer/records.hpp"

namespace headsteer {

enum class ScoreKind { Trait, Coherency };
enum class JudgeMethod { LlmLogitWeighted, Synthetic };

std::string_view score_kind_name(ScoreKind kind);

struct JudgeScore {
  double value = 0.0;  // [0, 100]
  ScoreKind kind = ScoreKind::Trait;
  JudgeMethod method = JudgeMethod::Synthetic;
};

// Case-insensitive, non-overlapping occurrences of every keyword, summed.
std::size_t count_keyword_hits(std::string_view text, std::span<const std::string> keywords);

// trait: 100 * min(1, hits / saturation). Throws ConfigError for an empty
// keyword list or zero saturation.
JudgeScore synthetic_trait(std::string_view response, std::span<const std::string> keywords,
                           std::size_t saturation = 5);
// coherency: 100 * exp(-lambda * max(0, nll_steered - nll_base)).
JudgeScore synthetic_coherency(double nll_steered, double nll_base, double lambda = 1.0);

struct ParetoPoint {
  double trait = 0.0;
  double coherency = 0.0;
  double coefficient = 0.0;
  std::string label;
};

struct Frontier {
  std::string label;
  std::vector<ParetoPoint> points;

  double max_coherency() const;  // throws ConfigError when empty
  nlohmann::json to_json() const;
};

enum class EnvelopeVariant { Upper, Lower };

// Piecewise-constant function of coherency. Segment k covers (lo_k, hi_k],
// the first one [0, hi_0]; the function changes value only at point
// coherencies and is undefined above the last hi.
struct StepFunction {
  struct Segment {
    double lo = 0.0;
    double hi = 0.0;
    double value = 0.0;
  };
  std::vector<Segment> segments;

  double domain_end() const { return segments.empty() ? 0.0 : segments.back().hi; }
  // nullopt for c outside [0, domain_end()].
  std::optional<double> at(double c) const;
  // Exact integral over [a, b] within the domain.
  double integral(double a, double b) const;
};

// Upper: t(c) = max{t' : (t', c') in P, c' >= c}; lower uses min.
// Throws ConfigError for an empty frontier.
StepFunction envelope(const Frontier& frontier, EnvelopeVariant variant = EnvelopeVariant::Upper);
StepFunction upper_envelope(const Frontier& frontier);

// Smallest maximum coherency over `frontiers` and `target`.
double common_max_coherency(std::span<const Frontier> frontiers, const Frontier& target);

inline constexpr double kDefaultTau = 80.0;

// Mean of the target's envelope over [tau, c_common], integrated exactly.
// Throws ConfigError when tau >= c_common (no common safe range) or a
// frontier is empty.
double envelope_score(std::span<const Frontier> frontiers, const Frontier& target, double tau = kDefaultTau,
                      EnvelopeVariant variant = EnvelopeVariant::Upper);

// One point per distinct coefficient holding the run means of trait and
// coherency. Records must share persona and site set; throws ConfigError on
// empty or mixed input. Output is sorted by coefficient and does not depend on
// record order.
Frontier build_frontier(std::span<const RunRecord> records);

// Frontier plot as a standalone SVG document, with tau marked.
std::string frontier_svg(std::span<const Frontier> frontiers, double tau = kDefaultTau);

}  // namespace headsteer
