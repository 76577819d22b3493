#include <chanlab/lm/vocab.hpp>

#include <chanlab/common/errors.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace chanlab::lm {

std::vector<std::string> Vocab::default_reserved() {
  return {std::string(kPad), std::string(kBos), std::string(kNull), std::string(kNewline),
          std::string(kUnknown)};
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      words.push_back(text.substr(i, 1));
      ++i;
    } else if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\r' &&
             text[j] != '\n') {
        ++j;
      }
      words.push_back(text.substr(i, j - i));
      i = j;
    }
  }
  return words;
}

void Vocab::index() {
  lookup_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!lookup_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
  auto require = [&](std::string_view tok) {
    auto it = lookup_.find(std::string(tok));
    if (it == lookup_.end() || static_cast<std::size_t>(it->second) >= reserved_count_) {
      throw ConfigError("reserved token '" + std::string(tok) + "' is missing");
    }
    return it->second;
  };
  pad_ = require(kPad);
  bos_ = require(kBos);
  null_ = require(kNull);
  newline_ = find(kNewline);
  unknown_ = find(kUnknown);
}

Vocab Vocab::build(std::span<const std::string> corpus, std::span<const std::string> reserved) {
  if (corpus.empty()) {
    throw ConfigError("cannot build a vocabulary from an empty corpus");
  }
  Vocab v;
  v.reserved_count_ = reserved.size();
  for (const std::string& r : reserved) {
    v.tokens_.push_back(r);
    v.frequency_.push_back(0);
  }
  v.index();
  for (const std::string& doc : corpus) {
    for (std::string_view word : split_words(doc)) {
      const std::string key = word == "\n" ? std::string(kNewline) : std::string(word);
      auto [it, inserted] = v.lookup_.emplace(key, static_cast<TokenId>(v.tokens_.size()));
      if (inserted) {
        v.tokens_.push_back(key);
        v.frequency_.push_back(0);
      }
      ++v.frequency_[static_cast<std::size_t>(it->second)];
    }
  }
  return v;
}

Vocab Vocab::from_entries(std::vector<std::string> tokens, std::vector<std::uint64_t> frequency,
                          std::size_t reserved_count) {
  if (tokens.size() != frequency.size() || reserved_count > tokens.size()) {
    throw SchemaError("inconsistent vocabulary entries");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.frequency_ = std::move(frequency);
  v.reserved_count_ = reserved_count;
  v.index();
  return v;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) {
    return std::nullopt;
  }
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  if (auto id = find(token)) {
    return *id;
  }
  throw ConfigError("token '" + std::string(token) + "' is not in the vocabulary");
}

const std::string& Vocab::token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

std::uint64_t Vocab::frequency(TokenId id) const {
  return frequency_.at(static_cast<std::size_t>(id));
}

std::vector<TokenId> Vocab::by_frequency() const {
  std::vector<TokenId> ids(tokens_.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
    return frequency_[static_cast<std::size_t>(a)] > frequency_[static_cast<std::size_t>(b)];
  });
  return ids;
}

std::vector<TokenId> Vocab::top_frequent(std::size_t limit) const {
  std::vector<TokenId> out;
  for (TokenId id : by_frequency()) {
    if (out.size() == limit) {
      break;
    }
    if (!is_reserved(id)) {
      out.push_back(id);
    }
  }
  return out;
}

TokenSequence Vocab::encode(std::string_view text) const {
  TokenSequence ids;
  for (std::string_view word : split_words(text)) {
    if (word == "\n") {
      if (!newline_) {
        throw ConfigError("vocabulary has no newline token");
      }
      ids.push_back(*newline_);
      continue;
    }
    if (auto id = find(word)) {
      ids.push_back(*id);
    } else if (unknown_) {
      ids.push_back(*unknown_);
    } else {
      throw ConfigError("word '" + std::string(word) + "' is not in the vocabulary");
    }
  }
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  bool line_start = true;
  for (TokenId id : ids) {
    if (newline_ && id == *newline_) {
      out += '\n';
      line_start = true;
      continue;
    }
    if (!line_start) {
      out += ' ';
    }
    out += token(id);
    line_start = false;
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write vocabulary to " + path);
  }
  out << "# chanlab-vocab v1 reserved=" << reserved_count_ << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << frequency_[i] << '\n';
  }
  if (!out) {
    throw IoError("failed writing vocabulary to " + path);
  }
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read vocabulary from " + path);
  }
  std::string header;
  std::getline(in, header);
  const std::string marker = "# chanlab-vocab v1 reserved=";
  if (header.rfind(marker, 0) != 0) {
    throw SchemaError(path + ": not a chanlab vocabulary file");
  }
  const std::size_t reserved = std::stoul(header.substr(marker.size()));
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> freq;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected token<TAB>count");
    }
    tokens.push_back(line.substr(0, tab));
    freq.push_back(std::stoull(line.substr(tab + 1)));
  }
  return from_entries(std::move(tokens), std::move(freq), reserved);
}

}  // namespace chanlab::lm
