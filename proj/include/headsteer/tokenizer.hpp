#pragma once

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by a handful of
// control tokens, followed by an optional list of multi-byte vocabulary
// entries matched greedily (longest first).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace headsteer {

using TokenId = std::uint32_t;

class Tokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kSystem = 258;
  static constexpr TokenId kUser = 259;
  static constexpr TokenId kAssistant = 260;
  static constexpr TokenId kEndOfTurn = 261;
  static constexpr std::size_t kByteLevelSize = 262;

  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> extra_tokens);

  // JSON file holding either an array of strings or {"tokens": [...]}.
  static Tokenizer from_vocabulary_file(const std::filesystem::path& path);

  std::size_t size() const { return kByteLevelSize + extra_.size(); }

  std::vector<TokenId> encode(std::string_view text) const;
  // Control tokens and ids outside the vocabulary decode to nothing.
  std::string decode(std::span<const TokenId> tokens) const;

  // <bos> <system> system <end> <user> user <end> <assistant>
  // An empty system prompt omits the system turn.
  std::vector<TokenId> chat_prompt(std::string_view system, std::string_view user) const;

 private:
  std::vector<std::string> extra_;
};

}  // namespace headsteer
