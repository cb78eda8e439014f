#include "headsteer/judge.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "headsteer/errors.hpp"

namespace headsteer {

SyntheticJudge::SyntheticJudge(SyntheticJudgeParams params) : params_(std::move(params)) {
  if (params_.keywords.empty()) throw ConfigError("synthetic judge: persona lists no keywords");
  if (params_.saturation == 0) throw ConfigError("synthetic judge: saturation must be positive");
}

JudgeResult SyntheticJudge::judge(const JudgeInput& input) const {
  return {synthetic_trait(input.response, params_.keywords, params_.saturation),
          synthetic_coherency(input.nll_steered, input.nll_base, params_.lambda)};
}

nlohmann::json LlmJudgeConfig::to_json() const {
  return {{"base_url", base_url},
          {"path", path},
          {"model", model},
          {"api_key_env", api_key_env},
          {"top_logprobs", top_logprobs},
          {"max_retries", max_retries},
          {"backoff_ms", backoff.count()},
          {"max_in_flight", max_in_flight},
          {"timeout_s", timeout.count()}};
}

LlmJudgeConfig LlmJudgeConfig::from_json(const nlohmann::json& j) {
  LlmJudgeConfig c;
  try {
    c.base_url = j.value("base_url", c.base_url);
    c.path = j.value("path", c.path);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.top_logprobs = j.value("top_logprobs", c.top_logprobs);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff = std::chrono::milliseconds(j.value("backoff_ms", c.backoff.count()));
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.timeout = std::chrono::seconds(j.value("timeout_s", c.timeout.count()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("llm judge config: ") + e.what());
  }
  if (c.top_logprobs == 0 || c.top_logprobs > 20) throw ConfigError("llm judge: top_logprobs must be in 1..20");
  if (c.max_in_flight == 0) throw ConfigError("llm judge: max_in_flight must be positive");
  return c;
}

std::string trait_judge_prompt(const PersonaSpec& persona, const std::string& question, const std::string& response) {
  return "You are grading how strongly a model's answer displays a particular trait.\n\n"
         "Trait: " + persona.name + "\n"
         "Description: " + persona.definition + "\n\n"
         "Question given to the model:\n[QUESTION START]\n" + question + "\n[QUESTION END]\n\n"
         "The model's answer:\n[ANSWER START]\n" + response + "\n[ANSWER END]\n\n"
         "Rate the answer from 0 to 100, where 0 means the trait is absent and 100 means the answer "
         "expresses the trait as strongly as possible. Reply with the integer only.";
}

std::string coherency_judge_prompt(const std::string& question, const std::string& response) {
  return "You are grading whether a model's answer is coherent, regardless of whether you agree with it.\n\n"
         "Question given to the model:\n[QUESTION START]\n" + question + "\n[QUESTION END]\n\n"
         "The model's answer:\n[ANSWER START]\n" + response + "\n[ANSWER END]\n\n"
         "Rate the answer from 0 to 100. 0 means it is unreadable or unrelated to the question: broken "
         "grammar, repetition loops, gibberish. 100 means it is fluent, well-formed and on topic. "
         "Reply with the integer only.";
}

bool parse_score_token(const std::string& token, int& value) {
  std::size_t b = 0, e = token.size();
  while (b < e && std::isspace(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(token[e - 1]))) --e;
  const std::size_t n = e - b;
  if (n == 0 || n > 3) return false;
  for (std::size_t i = b; i < e; ++i)
    if (!std::isdigit(static_cast<unsigned char>(token[i]))) return false;
  if (n > 1 && token[b] == '0') return false;
  const int v = std::stoi(token.substr(b, n));
  if (v > 100) return false;
  value = v;
  return true;
}

double logit_weighted_score(const std::string& reply_body) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(reply_body);
  } catch (const nlohmann::json::exception& e) {
    throw JudgeError(std::string("judge reply is not JSON: ") + e.what());
  }
  const nlohmann::json* top = nullptr;
  try {
    top = &reply.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs");
  } catch (const nlohmann::json::exception&) {
    throw JudgeError("judge reply has no top_logprobs for the first token");
  }
  // Subtract the largest kept log-prob before exponentiating.
  std::vector<std::pair<int, double>> kept;
  for (const auto& entry : *top) {
    if (!entry.contains("token") || !entry.contains("logprob") || !entry["token"].is_string() ||
        !entry["logprob"].is_number())
      continue;
    int v = 0;
    if (!parse_score_token(entry["token"].get<std::string>(), v)) continue;
    kept.emplace_back(v, entry["logprob"].get<double>());
  }
  if (kept.empty()) throw JudgeError("judge reply holds no integer score among its top tokens");
  double mx = kept.front().second;
  for (const auto& k : kept) mx = std::max(mx, k.second);
  double z = 0.0, s = 0.0;
  for (const auto& [v, lp] : kept) {
    const double w = std::exp(lp - mx);
    z += w;
    s += w * v;
  }
  return s / z;
}

namespace {

std::string key_from_env(const std::string& var) {
  const char* v = std::getenv(var.c_str());
  if (!v || !*v) throw ConfigError("llm judge: environment variable " + var + " is not set");
  return v;
}

}  // namespace

LlmJudge::LlmJudge(LlmJudgeConfig config, PersonaSpec persona, std::shared_ptr<HttpTransport> transport)
    : LlmJudge(config, std::move(persona), std::move(transport), key_from_env(config.api_key_env)) {}

LlmJudge::LlmJudge(LlmJudgeConfig config, PersonaSpec persona, std::shared_ptr<HttpTransport> transport,
                   std::string api_key)
    : config_(std::move(config)),
      persona_(std::move(persona)),
      transport_(std::move(transport)),
      api_key_(std::move(api_key)),
      in_flight_(std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(config_.max_in_flight))) {
  if (!transport_) throw ConfigError("llm judge: no transport");
}

nlohmann::json LlmJudge::request_body(const std::string& prompt) const {
  return {{"model", config_.model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"max_tokens", 1},
          {"temperature", 0},
          {"logprobs", true},
          {"top_logprobs", config_.top_logprobs},
          {"seed", 0}};
}

double LlmJudge::score_prompt(const std::string& prompt) const {
  const std::string body = request_body(prompt).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::map<std::string, std::string> headers{{"Content-Type", "application/json"}};
  if (!api_key_.empty()) headers["Authorization"] = "Bearer " + api_key_;
  auto delay = config_.backoff;
  for (std::size_t attempt = 0;; ++attempt) {
    std::string reply;
    try {
      in_flight_->acquire();
      struct Release {
        std::counting_semaphore<>* s;
        ~Release() { s->release(); }
      } release{in_flight_.get()};
      reply = transport_->post_json(config_.path, body, headers);
    } catch (const JudgeError& e) {
      if (attempt >= config_.max_retries) throw;
      std::this_thread::sleep_for(delay);
      delay *= 2;
      continue;
    }
    // A reply without integer tokens is an unusable judgment, not a transport
    // hiccup; it is not retried.
    return logit_weighted_score(reply);
  }
}

JudgeResult LlmJudge::judge(const JudgeInput& input) const {
  try {
    JudgeResult r;
    r.trait = {score_prompt(trait_judge_prompt(persona_, input.question, input.response)), ScoreKind::Trait,
               JudgeMethod::LlmLogitWeighted};
    r.coherency = {score_prompt(coherency_judge_prompt(input.question, input.response)), ScoreKind::Coherency,
                   JudgeMethod::LlmLogitWeighted};
    return r;
  } catch (const JudgeError& e) {
    throw JudgeError("sample " + input.sample_id + ": " + e.what());
  }
}

}  // namespace headsteer
