#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace headsteer {

struct SampleRecord {
  std::string id;  // "p<pair>/q<question>"
  std::size_t pair = 0;
  std::size_t question = 0;
  std::string question_text;
  std::string system_prompt;
  std::string text;
  std::size_t n_tokens = 0;
  double trait = 0.0;
  double coherency = 0.0;
  double nll = 0.0;       // clean-model NLL of the steered response
  double nll_base = 0.0;  // same for the unsteered response of this sample
};

// One (site set, coefficient, run) cell of a sweep.
struct RunRecord {
  std::string persona;
  std::string configuration;
  std::string site_set;
  double coefficient = 0.0;  // as configured, before the configuration's sign
  std::size_t coefficient_index = 0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> samples;
  double mean_trait = 0.0;
  double mean_coherency = 0.0;
  double mean_nll = 0.0;

  // Fills the means from `samples` (summed in id order).
  void aggregate();

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

// One JSON object per line.
std::string to_jsonl(const std::vector<RunRecord>& records);
std::vector<RunRecord> from_jsonl(const std::string& text);

}  // namespace headsteer
