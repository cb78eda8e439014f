#pragma once

// Judges turn a steered response into trait and coherency scores in [0, 100].

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <semaphore>
#include <string>

#include <json.hpp>

#include "headsteer/evaluation.hpp"
#include "headsteer/persona.hpp"

namespace headsteer {

struct JudgeInput {
  std::string sample_id;
  std::string question;
  std::string response;
  double nll_steered = 0.0;  // clean-model NLL of the response
  double nll_base = 0.0;     // same for the unsteered response to this sample
};

struct JudgeResult {
  JudgeScore trait;
  JudgeScore coherency;
};

class Judge {
 public:
  virtual ~Judge() = default;
  // Thread-safe. Throws JudgeError naming the sample on failure.
  virtual JudgeResult judge(const JudgeInput& input) const = 0;
};

class SyntheticJudge final : public Judge {
 public:
  // Throws ConfigError when the persona has no keywords.
  explicit SyntheticJudge(SyntheticJudgeParams params);
  JudgeResult judge(const JudgeInput& input) const override;

 private:
  SyntheticJudgeParams params_;
};

// POST transport. Returns the response body of a 2xx reply, throws
// JudgeError otherwise. Must be safe to call from several threads.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual std::string post_json(const std::string& path, const std::string& body,
                                const std::map<std::string, std::string>& headers) = 0;
};

// cpp-httplib client for `base_url` (http:// or https://).
std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout);

struct LlmJudgeConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4.1-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t top_logprobs = 20;
  std::size_t max_retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
  std::size_t max_in_flight = 4;
  std::chrono::seconds timeout{60};

  nlohmann::json to_json() const;
  static LlmJudgeConfig from_json(const nlohmann::json& j);
};

// Judge prompts. The trait prompt is built from the persona's name and
// definition; both ask for a bare integer between 0 and 100.
std::string trait_judge_prompt(const PersonaSpec& persona, const std::string& question, const std::string& response);
std::string coherency_judge_prompt(const std::string& question, const std::string& response);

// True for "0".."100" written without sign, leading zeros or decimals;
// surrounding whitespace is ignored.
bool parse_score_token(const std::string& token, int& value);

// Logit-weighted score from a chat-completion reply: the top log-probs of the
// first generated token, restricted to integer tokens 0..100, renormalized.
// Throws JudgeError when the reply is malformed or holds no integer token.
double logit_weighted_score(const std::string& reply_body);

class LlmJudge final : public Judge {
 public:
  // Reads the API key from the environment when the judge is built; throws
  // ConfigError when it is unset.
  LlmJudge(LlmJudgeConfig config, PersonaSpec persona, std::shared_ptr<HttpTransport> transport);
  // For tests and keyless endpoints.
  LlmJudge(LlmJudgeConfig config, PersonaSpec persona, std::shared_ptr<HttpTransport> transport, std::string api_key);

  JudgeResult judge(const JudgeInput& input) const override;
  // One scored prompt, with retries and the in-flight bound applied.
  double score_prompt(const std::string& prompt) const;
  nlohmann::json request_body(const std::string& prompt) const;

 private:
  LlmJudgeConfig config_;
  PersonaSpec persona_;
  std::shared_ptr<HttpTransport> transport_;
  std::string api_key_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

}  // namespace headsteer
