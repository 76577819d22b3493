#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace chanlab::lm {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Word-level vocabulary. Tokens are whitespace-delimited words; a line break
// in text maps to the newline token. Reserved tokens come first, in the order
// given, followed by corpus words in order of first appearance.
class Vocab {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kBos = "<bos>";
  // The content-free input used for calibration; its surface is what the
  // tokenizer sees when a text reads "N/A".
  static constexpr std::string_view kNull = "N/A";
  static constexpr std::string_view kNewline = "<nl>";
  static constexpr std::string_view kUnknown = "<unk>";

  static std::vector<std::string> default_reserved();

  // Throws ConfigError on an empty corpus or when PAD, BOS or the null marker
  // is missing from `reserved`.
  static Vocab build(std::span<const std::string> corpus,
                     std::span<const std::string> reserved);
  static Vocab build(std::span<const std::string> corpus) {
    const auto reserved = default_reserved();
    return build(corpus, reserved);
  }

  // Reconstructs a vocabulary from its serialized form (one "token\tcount"
  // line per entry, reserved tokens first).
  static Vocab from_entries(std::vector<std::string> tokens,
                            std::vector<std::uint64_t> frequency,
                            std::size_t reserved_count);

  std::size_t size() const { return tokens_.size(); }
  std::size_t reserved_count() const { return reserved_count_; }
  bool is_reserved(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < reserved_count_;
  }

  std::optional<TokenId> find(std::string_view token) const;
  // Throws ConfigError when the token is absent.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const;
  std::span<const std::string> tokens() const { return tokens_; }
  std::span<const std::uint64_t> frequencies() const { return frequency_; }

  TokenId pad() const { return pad_; }
  TokenId bos() const { return bos_; }
  TokenId null_marker() const { return null_; }
  std::optional<TokenId> newline() const { return newline_; }

  // All token ids ordered by descending corpus frequency; ties by index.
  std::vector<TokenId> by_frequency() const;
  // The `limit` most frequent non-reserved tokens.
  std::vector<TokenId> top_frequent(std::size_t limit) const;

  // Unknown words map to <unk> when the vocabulary has it, otherwise the
  // call throws ConfigError naming the word.
  TokenSequence encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  Vocab() = default;
  void index();

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequency_;
  std::size_t reserved_count_ = 0;
  std::unordered_map<std::string, TokenId> lookup_;
  TokenId pad_ = -1;
  TokenId bos_ = -1;
  TokenId null_ = -1;
  std::optional<TokenId> newline_;
  std::optional<TokenId> unknown_;
};

// Splits text on whitespace; line breaks become a standalone "\n" word.
std::vector<std::string_view> split_words(std::string_view text);

}  // namespace chanlab::lm
