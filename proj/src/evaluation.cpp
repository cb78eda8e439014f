#include "headsteer/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "headsteer/errors.hpp"

namespace headsteer {

std::string_view score_kind_name(ScoreKind kind) { return kind == ScoreKind::Trait ? "trait" : "coherency"; }

std::size_t count_keyword_hits(std::string_view text, std::span<const std::string> keywords) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
  };
  const std::string hay = lower(text);
  std::size_t hits = 0;
  for (const auto& kw : keywords) {
    if (kw.empty()) continue;
    const std::string needle = lower(kw);
    for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size()))
      ++hits;
  }
  return hits;
}

JudgeScore synthetic_trait(std::string_view response, std::span<const std::string> keywords, std::size_t saturation) {
  if (keywords.empty()) throw ConfigError("synthetic trait judge needs at least one keyword");
  if (saturation == 0) throw ConfigError("synthetic trait judge saturation must be positive");
  const double hits = static_cast<double>(count_keyword_hits(response, keywords));
  return {100.0 * std::min(1.0, hits / static_cast<double>(saturation)), ScoreKind::Trait, JudgeMethod::Synthetic};
}

JudgeScore synthetic_coherency(double nll_steered, double nll_base, double lambda) {
  const double excess = std::max(0.0, nll_steered - nll_base);
  return {100.0 * std::exp(-lambda * excess), ScoreKind::Coherency, JudgeMethod::Synthetic};
}

double Frontier::max_coherency() const {
  if (points.empty()) throw ConfigError("frontier '" + label + "' is empty");
  double m = points.front().coherency;
  for (const auto& p : points) m = std::max(m, p.coherency);
  return m;
}

nlohmann::json Frontier::to_json() const {
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : points) ps.push_back({{"coefficient", p.coefficient}, {"trait", p.trait}, {"coherency", p.coherency}});
  return {{"label", label}, {"points", ps}};
}

std::optional<double> StepFunction::at(double c) const {
  if (segments.empty() || c < 0.0 || c > domain_end()) return std::nullopt;
  for (const auto& s : segments)
    if (c <= s.hi) return s.value;
  return std::nullopt;
}

double StepFunction::integral(double a, double b) const {
  double total = 0.0;
  for (const auto& s : segments) {
    const double lo = std::max(a, s.lo);
    const double hi = std::min(b, s.hi);
    if (hi > lo) total += s.value * (hi - lo);
  }
  return total;
}

StepFunction envelope(const Frontier& frontier, EnvelopeVariant variant) {
  if (frontier.points.empty()) throw ConfigError("frontier '" + frontier.label + "' is empty");
  // Best trait per distinct coherency, then a suffix max/min from the top.
  std::map<double, double> best;
  for (const auto& p : frontier.points) {
    auto [it, fresh] = best.emplace(p.coherency, p.trait);
    if (!fresh)
      it->second = variant == EnvelopeVariant::Upper ? std::max(it->second, p.trait) : std::min(it->second, p.trait);
  }
  std::vector<std::pair<double, double>> levels(best.begin(), best.end());
  for (std::size_t k = levels.size() - 1; k-- > 0;) {
    const double next = levels[k + 1].second;
    levels[k].second = variant == EnvelopeVariant::Upper ? std::max(levels[k].second, next) : std::min(levels[k].second, next);
  }
  StepFunction f;
  double lo = 0.0;
  for (const auto& [c, t] : levels) {
    if (c < 0.0) continue;
    if (!f.segments.empty() && f.segments.back().value == t)
      f.segments.back().hi = c;
    else
      f.segments.push_back({lo, c, t});
    lo = c;
  }
  if (f.segments.empty()) throw ConfigError("frontier '" + frontier.label + "' has no point with coherency >= 0");
  return f;
}

StepFunction upper_envelope(const Frontier& frontier) { return envelope(frontier, EnvelopeVariant::Upper); }

double common_max_coherency(std::span<const Frontier> frontiers, const Frontier& target) {
  double c = target.max_coherency();
  for (const auto& f : frontiers) c = std::min(c, f.max_coherency());
  return c;
}

double envelope_score(std::span<const Frontier> frontiers, const Frontier& target, double tau, EnvelopeVariant variant) {
  const double c_common = common_max_coherency(frontiers, target);
  if (!(tau < c_common)) {
    std::ostringstream os;
    os << "no common safe range: tau " << tau << " >= common max coherency " << c_common;
    throw ConfigError(os.str());
  }
  const StepFunction f = envelope(target, variant);
  return f.integral(tau, c_common) / (c_common - tau);
}

Frontier build_frontier(std::span<const RunRecord> records) {
  if (records.empty()) throw ConfigError("build_frontier: no records");
  const auto& first = records.front();
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : records) {
    if (r.persona != first.persona || r.site_set != first.site_set)
      throw ConfigError("build_frontier: records mix personas or site sets");
    auto& g = groups[r.coefficient];
    g.first.push_back(r.mean_trait);
    g.second.push_back(r.mean_coherency);
  }
  auto mean = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  Frontier f;
  f.label = first.site_set;
  for (auto& [coef, g] : groups) f.points.push_back({mean(g.first), mean(g.second), coef, first.site_set});
  return f;
}

std::string frontier_svg(std::span<const Frontier> frontiers, double tau) {
  constexpr double W = 480, H = 360, M = 48;
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  auto x = [&](double coherency) { return M + (W - 2 * M) * coherency / 100.0; };
  auto y = [&](double trait) { return H - M - (H - 2 * M) * trait / 100.0; };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\"" << H - 2 * M
     << "\" fill=\"none\" stroke=\"#000\"/>\n";
  os << "<line x1=\"" << x(tau) << "\" y1=\"" << M << "\" x2=\"" << x(tau) << "\" y2=\"" << H - M
     << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">coherency</text>\n";
  os << "<text x=\"14\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << H / 2
     << ")\" text-anchor=\"middle\">trait</text>\n";
  for (std::size_t k = 0; k < frontiers.size(); ++k) {
    const auto& fr = frontiers[k];
    const char* color = kColors[k % std::size(kColors)];
    if (fr.points.empty()) continue;
    const StepFunction env = upper_envelope(fr);
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (auto it = env.segments.rbegin(); it != env.segments.rend(); ++it)
      os << x(it->hi) << ',' << y(it->value) << ' ' << x(it->lo) << ',' << y(it->value) << ' ';
    os << "\"/>\n";
    for (const auto& p : fr.points)
      os << "<circle cx=\"" << x(p.coherency) << "\" cy=\"" << y(p.trait) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << W - M + 4 << "\" y=\"" << M + 14 * (k + 1) << "\" font-size=\"10\" fill=\"" << color << "\">"
       << fr.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace headsteer
