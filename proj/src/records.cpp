#include "headsteer/records.hpp"

#include <algorithm>
#include <sstream>

#include "headsteer/errors.hpp"

namespace headsteer {

void RunRecord::aggregate() {
  std::vector<const SampleRecord*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; });
  double t = 0.0, c = 0.0, n = 0.0;
  for (const auto* s : order) {
    t += s->trait;
    c += s->coherency;
    n += s->nll;
  }
  const double k = order.empty() ? 1.0 : static_cast<double>(order.size());
  mean_trait = t / k;
  mean_coherency = c / k;
  mean_nll = n / k;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json ss = nlohmann::json::array();
  for (const auto& s : samples)
    ss.push_back({{"id", s.id},
                  {"pair", s.pair},
                  {"question", s.question},
                  {"question_text", s.question_text},
                  {"system_prompt", s.system_prompt},
                  {"text", s.text},
                  {"n_tokens", s.n_tokens},
                  {"trait", s.trait},
                  {"coherency", s.coherency},
                  {"nll", s.nll},
                  {"nll_base", s.nll_base}});
  return {{"persona", persona},
          {"configuration", configuration},
          {"site_set", site_set},
          {"coefficient", coefficient},
          {"coefficient_index", coefficient_index},
          {"run", run},
          {"seed", seed},
          {"mean_trait", mean_trait},
          {"mean_coherency", mean_coherency},
          {"mean_nll", mean_nll},
          {"samples", ss}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.persona = j.at("persona").get<std::string>();
    r.configuration = j.at("configuration").get<std::string>();
    r.site_set = j.at("site_set").get<std::string>();
    r.coefficient = j.at("coefficient").get<double>();
    r.coefficient_index = j.at("coefficient_index").get<std::size_t>();
    r.run = j.at("run").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mean_trait = j.at("mean_trait").get<double>();
    r.mean_coherency = j.at("mean_coherency").get<double>();
    r.mean_nll = j.at("mean_nll").get<double>();
    for (const auto& s : j.at("samples")) {
      SampleRecord x;
      x.id = s.at("id").get<std::string>();
      x.pair = s.at("pair").get<std::size_t>();
      x.question = s.at("question").get<std::size_t>();
      x.question_text = s.at("question_text").get<std::string>();
      x.system_prompt = s.at("system_prompt").get<std::string>();
      x.text = s.at("text").get<std::string>();
      x.n_tokens = s.at("n_tokens").get<std::size_t>();
      x.trait = s.at("trait").get<double>();
      x.coherency = s.at("coherency").get<double>();
      x.nll = s.at("nll").get<double>();
      x.nll_base = s.at("nll_base").get<double>();
      r.samples.push_back(std::move(x));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run record: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<RunRecord> from_jsonl(const std::string& text) {
  std::vector<RunRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("run records: ") + e.what());
    }
    out.push_back(RunRecord::from_json(j));
  }
  return out;
}

}  // namespace headsteer
