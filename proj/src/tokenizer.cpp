#include "headsteer/tokenizer.hpp"

#include <algorithm>

#include "headsteer/archive.hpp"
#include "headsteer/errors.hpp"

namespace headsteer {

Tokenizer::Tokenizer(std::vector<std::string> extra_tokens) : extra_(std::move(extra_tokens)) {
  for (const auto& t : extra_)
    if (t.size() < 2) throw ConfigError("vocabulary entries must span at least two bytes: '" + t + "'");
}

Tokenizer Tokenizer::from_vocabulary_file(const std::filesystem::path& path) {
  auto doc = read_json_file(path);
  const auto& list = doc.is_object() ? doc.at("tokens") : doc;
  if (!list.is_array()) throw ConfigError(path.string() + ": expected an array of tokens");
  return Tokenizer(list.get<std::vector<std::string>>());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best_len = 0;
    TokenId best = 0;
    for (std::size_t i = 0; i < extra_.size(); ++i) {
      const auto& tok = extra_[i];
      if (tok.size() > best_len && text.substr(pos, tok.size()) == tok) {
        best_len = tok.size();
        best = static_cast<TokenId>(kByteLevelSize + i);
      }
    }
    if (best_len == 0) {
      out.push_back(static_cast<unsigned char>(text[pos]));
      ++pos;
    } else {
      out.push_back(best);
      pos += best_len;
    }
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t < 256) {
      out.push_back(static_cast<char>(t));
    } else if (t >= kByteLevelSize && t - kByteLevelSize < extra_.size()) {
      out += extra_[t - kByteLevelSize];
    }
  }
  return out;
}

std::vector<TokenId> Tokenizer::chat_prompt(std::string_view system, std::string_view user) const {
  std::vector<TokenId> out{kBos};
  auto append = [&](std::string_view s) {
    auto ids = encode(s);
    out.insert(out.end(), ids.begin(), ids.end());
  };
  if (!system.empty()) {
    out.push_back(kSystem);
    append(system);
    out.push_back(kEndOfTurn);
  }
  out.push_back(kUser);
  append(user);
  out.push_back(kEndOfTurn);
  out.push_back(kAssistant);
  return out;
}

}  // namespace headsteer
