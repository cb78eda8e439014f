#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace headsteer {

enum class Condition { Target, Neutral };

std::string_view condition_name(Condition c);

struct PromptPair {
  std::string target;
  std::string neutral;
};

// Marker strings the offline judge counts, and its two constants.
struct SyntheticJudgeParams {
  std::vector<std::string> keywords;
  std::size_t saturation = 5;  // K: hits needed for a full trait score
  double lambda = 1.0;         // coherency decay per nat of excess NLL
};

// Contrastive prompt set for one persona.
struct PersonaSpec {
  std::string name;
  std::string definition;
  // Prepended to every system prompt of the matching condition, e.g.
  // "You are a Evil assistant." / "You are a helpful assistant.".
  std::string target_preamble;
  std::string neutral_preamble;
  std::vector<PromptPair> prompt_pairs;
  std::vector<std::string> extraction_questions;
  std::vector<std::string> eval_questions;
  SyntheticJudgeParams synthetic;

  // Throws ConfigError: needs >= 1 pair, >= 1 question per set, and disjoint
  // extraction / evaluation questions.
  void validate() const;

  std::string system_prompt(Condition condition, std::size_t pair) const;

  nlohmann::json to_json() const;
  static PersonaSpec from_json(const nlohmann::json& j);
};

PersonaSpec load_persona(const std::filesystem::path& path);
void save_persona(const std::filesystem::path& path, const PersonaSpec& persona);

}  // namespace headsteer
