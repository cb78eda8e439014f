#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "headsteer/errors.hpp"
#include "headsteer/evaluation.hpp"
#include "headsteer/rng.hpp"

using namespace headsteer;

namespace {

Frontier frontier(std::initializer_list<std::pair<double, double>> tc, std::string label = "f") {
  Frontier f;
  f.label = label;
  double k = 0.0;
  for (auto [t, c] : tc) f.points.push_back({t, c, k++, label});
  return f;
}

// t(c) straight from the definition.
double envelope_by_definition(const Frontier& f, double c, bool upper) {
  bool any = false;
  double best = 0.0;
  for (const auto& p : f.points)
    if (p.coherency >= c) {
      best = !any ? p.trait : (upper ? std::max(best, p.trait) : std::min(best, p.trait));
      any = true;
    }
  return best;
}

// Midpoint Riemann sum with n samples on [tau, c_common].
double riemann_score(const std::vector<Frontier>& all, const Frontier& target, double tau, bool upper,
                     std::size_t n = 100000) {
  double tmax = -1.0;
  for (const auto& p : target.points) tmax = std::max(tmax, p.coherency);
  double fmin = tmax;
  for (const auto& f : all) {
    double m = -1.0;
    for (const auto& p : f.points) m = std::max(m, p.coherency);
    fmin = std::min(fmin, m);
  }
  const double width = fmin - tau;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += envelope_by_definition(target, tau + (i + 0.5) * width / n, upper);
  return sum / static_cast<double>(n);
}

RunRecord record(double coef, std::size_t run, double trait, double coh) {
  RunRecord r;
  r.persona = "p";
  r.site_set = "s";
  r.configuration = "neutral_plus_alpha";
  r.coefficient = coef;
  r.run = run;
  SampleRecord s;
  s.id = "p0/q0";
  s.trait = trait;
  s.coherency = coh;
  r.samples.push_back(s);
  r.aggregate();
  return r;
}

}  // namespace

TEST_CASE("keyword counting") {
  const std::vector<std::string> kw{"ha", "lol"};
  CHECK(count_keyword_hits("HaHa LOL", kw) == 3);
  CHECK(count_keyword_hits("hhaa", kw) == 1);
  CHECK(count_keyword_hits("hahaha", std::vector<std::string>{"haha"}) == 1);
  CHECK(count_keyword_hits("nothing", kw) == 0);
}

TEST_CASE("synthetic trait and coherency") {
  const std::vector<std::string> kw{"~"};
  CHECK(synthetic_trait("plain text", kw).value == 0.0);
  CHECK(synthetic_trait("a ~ b ~", kw).value == doctest::Approx(40.0));
  CHECK(synthetic_trait("~~~~~~~~", kw).value == 100.0);
  CHECK(synthetic_trait("~~", kw, 2).value == 100.0);
  CHECK(synthetic_trait("~", kw).kind == ScoreKind::Trait);
  CHECK_THROWS_AS(synthetic_trait("x", std::vector<std::string>{}), ConfigError);
  CHECK_THROWS_AS(synthetic_trait("x", kw, 0), ConfigError);

  CHECK(synthetic_coherency(2.0, 2.0).value == 100.0);
  CHECK(synthetic_coherency(1.0, 2.0).value == 100.0);
  CHECK(synthetic_coherency(2.0 + std::log(2.0), 2.0).value == doctest::Approx(50.0));
  CHECK(synthetic_coherency(2.0 + std::log(2.0), 2.0, 2.0).value == doctest::Approx(25.0));
  CHECK(synthetic_coherency(1.0, 0.0).kind == ScoreKind::Coherency);
}

TEST_CASE("upper envelope examples") {
  SUBCASE("single point") {
    const auto e = upper_envelope(frontier({{40, 90}}));
    CHECK(e.at(0.0) == 40.0);
    CHECK(e.at(90.0) == 40.0);
    CHECK_FALSE(e.at(90.5).has_value());
    CHECK(e.domain_end() == 90.0);
  }
  SUBCASE("two points") {
    const auto e = upper_envelope(frontier({{10, 95}, {60, 70}}));
    CHECK(e.at(50.0) == 60.0);
    CHECK(e.at(70.0) == 60.0);
    CHECK(e.at(70.001) == 10.0);
    CHECK(e.at(95.0) == 10.0);
  }
  SUBCASE("a dominated point changes nothing") {
    const auto a = upper_envelope(frontier({{10, 95}, {60, 70}}));
    const auto b = upper_envelope(frontier({{10, 95}, {60, 70}, {5, 50}}));
    for (double c = 0.0; c <= 95.0; c += 0.5) CHECK(a.at(c) == b.at(c));
  }
  CHECK_THROWS_AS(upper_envelope(Frontier{}), ConfigError);
}

TEST_CASE("envelope score examples") {
  const Frontier constant = frontier({{50, 100}, {50, 85}});
  const Frontier list1[] = {constant};
  CHECK(envelope_score(list1, constant, 80.0) == doctest::Approx(50.0));
  CHECK(envelope_score(list1, constant, 20.0) == doctest::Approx(50.0));

  // 60 on [80, 85], 10 on (85, 90].
  const Frontier two = frontier({{60, 85}, {10, 90}});
  const Frontier list2[] = {two};
  CHECK(envelope_score(list2, two, 80.0) == doctest::Approx(35.0));
  CHECK(envelope_score(list2, two, 80.0, EnvelopeVariant::Lower) == doctest::Approx(10.0));

  // The common range stops at the lowest maximum coherency.
  const Frontier other = frontier({{0, 85}});
  const Frontier list3[] = {two, other};
  CHECK(common_max_coherency(list3, two) == 85.0);
  CHECK(envelope_score(list3, two, 80.0) == doctest::Approx(60.0));
  CHECK_THROWS_AS(envelope_score(list3, two, 85.0), ConfigError);
  CHECK_THROWS_AS(envelope_score(list3, two, 90.0), ConfigError);
  const Frontier with_empty[] = {two, Frontier{}};
  CHECK_THROWS_AS(envelope_score(with_empty, two, 10.0), ConfigError);
}

TEST_CASE("envelope score agrees with a Riemann sum on random frontiers") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Frontier> all;
    for (int k = 0; k < 3; ++k) {
      Frontier f;
      f.label = "f" + std::to_string(k);
      const int n = 1 + static_cast<int>(uniform01(rng) * 8);
      for (int i = 0; i < n; ++i) f.points.push_back({100.0 * uniform01(rng), 100.0 * uniform01(rng), double(i), f.label});
      f.points.push_back({100.0 * uniform01(rng), 90.0 + 10.0 * uniform01(rng), 99.0, f.label});
      all.push_back(f);
    }
    const double tau = 50.0 + 30.0 * uniform01(rng);
    for (const auto& target : all) {
      const double up = envelope_score(all, target, tau);
      const double lo = envelope_score(all, target, tau, EnvelopeVariant::Lower);
      CHECK(std::fabs(up - riemann_score(all, target, tau, true)) <= 0.05);
      CHECK(std::fabs(lo - riemann_score(all, target, tau, false)) <= 0.05);
      CHECK(up >= lo);
    }
  }
}

TEST_CASE("score is unchanged by duplicated or dominated points") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    Frontier f;
    for (int i = 0; i < 6; ++i) f.points.push_back({100.0 * uniform01(rng), 60.0 + 40.0 * uniform01(rng), double(i), "f"});
    f.points.push_back({50.0, 99.0, 7.0, "f"});
    const Frontier one[] = {f};
    const double base = envelope_score(one, f, 55.0);

    Frontier dup = f;
    dup.points.push_back(f.points[static_cast<std::size_t>(uniform01(rng) * 6)]);
    const Frontier d1[] = {dup};
    CHECK(envelope_score(d1, dup, 55.0) == doctest::Approx(base).epsilon(1e-12));

    Frontier dom = f;
    const auto& p = f.points[static_cast<std::size_t>(uniform01(rng) * 6)];
    dom.points.push_back({p.trait * uniform01(rng), p.coherency * uniform01(rng), 8.0, "f"});
    const Frontier d2[] = {dom};
    CHECK(envelope_score(d2, dom, 55.0) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("step function integral") {
  const auto e = upper_envelope(frontier({{60, 85}, {10, 90}}));
  CHECK(e.integral(80.0, 90.0) == doctest::Approx(350.0));
  CHECK(e.integral(0.0, 85.0) == doctest::Approx(85.0 * 60.0));
  CHECK(e.integral(86.0, 88.0) == doctest::Approx(20.0));
}

TEST_CASE("build_frontier averages runs per coefficient") {
  std::vector<RunRecord> recs;
  for (double coef : {0.5, 1.0, 2.0})
    for (std::size_t run = 0; run < 5; ++run) recs.push_back(record(coef, run, coef * 10 + run, 100 - coef * 5 - run));
  const auto f = build_frontier(recs);
  REQUIRE(f.points.size() == 3);
  CHECK(f.label == "s");
  CHECK(f.points[0].coefficient == 0.5);
  CHECK(f.points[0].trait == doctest::Approx(5.0 + 2.0));
  CHECK(f.points[2].coherency == doctest::Approx(90.0 - 2.0));

  std::vector<RunRecord> shuffled(recs.rbegin(), recs.rend());
  std::swap(shuffled[1], shuffled[7]);
  const auto g = build_frontier(shuffled);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.points[i].trait == f.points[i].trait);
    CHECK(g.points[i].coherency == f.points[i].coherency);
  }

  const std::vector<RunRecord> single{record(3.0, 0, 42.0, 77.0)};
  const auto s = build_frontier(single);
  REQUIRE(s.points.size() == 1);
  CHECK(s.points[0].trait == 42.0);
  CHECK(s.points[0].coherency == 77.0);

  CHECK_THROWS_AS(build_frontier(std::vector<RunRecord>{}), ConfigError);
  std::vector<RunRecord> mixed{record(1.0, 0, 1, 1), record(1.0, 1, 1, 1)};
  mixed[1].site_set = "other";
  CHECK_THROWS_AS(build_frontier(mixed), ConfigError);
}

TEST_CASE("run record aggregates and JSON lines") {
  RunRecord r = record(1.0, 0, 0, 0);
  SampleRecord s2;
  s2.id = "p0/q1";
  s2.trait = 40.0;
  s2.coherency = 60.0;
  s2.nll = 1.5;
  s2.text = "bytes \xff\xfe";
  r.samples.push_back(s2);
  r.aggregate();
  CHECK(r.mean_trait == doctest::Approx(20.0));
  CHECK(r.mean_coherency == doctest::Approx(30.0));
  const auto back = from_jsonl(to_jsonl({r, r}));
  REQUIRE(back.size() == 2);
  CHECK(back[1].mean_trait == r.mean_trait);
  CHECK(back[1].samples.size() == 2);
}

TEST_CASE("frontier svg") {
  const Frontier fs[] = {frontier({{60, 85}, {10, 90}}, "head_cor"), frontier({{20, 95}}, "mlp_residual")};
  const auto svg = frontier_svg(fs, 80.0);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("head_cor") != std::string::npos);
  CHECK(svg.find("mlp_residual") != std::string::npos);
}
