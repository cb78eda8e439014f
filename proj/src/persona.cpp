#include "headsteer/persona.hpp"

#include <set>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"

namespace headsteer {

std::string_view condition_name(Condition c) { return c == Condition::Target ? "target" : "neutral"; }

void PersonaSpec::validate() const {
  if (name.empty()) throw ConfigError("persona: name is empty");
  if (prompt_pairs.empty()) throw ConfigError("persona '" + name + "': needs at least one prompt pair");
  if (extraction_questions.empty()) throw ConfigError("persona '" + name + "': no extraction questions");
  if (eval_questions.empty()) throw ConfigError("persona '" + name + "': no evaluation questions");
  std::set<std::string> extraction(extraction_questions.begin(), extraction_questions.end());
  for (const auto& q : eval_questions)
    if (extraction.count(q)) throw ConfigError("persona '" + name + "': question used for both extraction and evaluation: " + q);
  if (synthetic.saturation == 0) throw ConfigError("persona '" + name + "': synthetic saturation must be >= 1");
  if (!(synthetic.lambda >= 0.0)) throw ConfigError("persona '" + name + "': synthetic lambda must be >= 0");
}

std::string PersonaSpec::system_prompt(Condition condition, std::size_t pair) const {
  const auto& pre = condition == Condition::Target ? target_preamble : neutral_preamble;
  const auto& body = condition == Condition::Target ? prompt_pairs.at(pair).target : prompt_pairs.at(pair).neutral;
  if (pre.empty()) return body;
  if (body.empty()) return pre;
  return pre + " " + body;
}

nlohmann::json PersonaSpec::to_json() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : prompt_pairs) pairs.push_back({{"target", p.target}, {"neutral", p.neutral}});
  return {{"name", name},
          {"definition", definition},
          {"target_preamble", target_preamble},
          {"neutral_preamble", neutral_preamble},
          {"prompt_pairs", pairs},
          {"extraction_questions", extraction_questions},
          {"eval_questions", eval_questions},
          {"synthetic_judge",
           {{"keywords", synthetic.keywords}, {"saturation", synthetic.saturation}, {"lambda", synthetic.lambda}}}};
}

PersonaSpec PersonaSpec::from_json(const nlohmann::json& j) {
  PersonaSpec p;
  try {
    p.name = j.at("name").get<std::string>();
    p.definition = j.value("definition", "");
    p.target_preamble = j.value("target_preamble", "");
    p.neutral_preamble = j.value("neutral_preamble", "");
    for (const auto& pair : j.at("prompt_pairs"))
      p.prompt_pairs.push_back({pair.at("target").get<std::string>(), pair.at("neutral").get<std::string>()});
    p.extraction_questions = j.at("extraction_questions").get<std::vector<std::string>>();
    p.eval_questions = j.at("eval_questions").get<std::vector<std::string>>();
    if (j.contains("synthetic_judge")) {
      const auto& s = j.at("synthetic_judge");
      p.synthetic.keywords = s.value("keywords", std::vector<std::string>{});
      p.synthetic.saturation = s.value("saturation", std::size_t{5});
      p.synthetic.lambda = s.value("lambda", 1.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("persona: ") + e.what());
  }
  p.validate();
  return p;
}

PersonaSpec load_persona(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("persona file not found: " + path.string());
  return PersonaSpec::from_json(read_json_file(path));
}

void save_persona(const std::filesystem::path& path, const PersonaSpec& persona) {
  persona.validate();
  write_json_file(path, persona.to_json());
}

}  // namespace headsteer
