#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memcap/tensor.hpp"

namespace memcap {

inline constexpr std::string_view kBosSurface = "<bos>";
inline constexpr std::string_view kUnkSurface = "<unk>";

/// Dense id <-> token-string table with optional reserved BOS/UNK ids.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, std::optional<TokenId> bos, std::optional<TokenId> unk);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  std::optional<TokenId> bos() const { return bos_; }
  std::optional<TokenId> unk() const { return unk_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  /// GPT-2 style encoder JSON: {"token": id, ...}. Ids must be dense.
  static Vocabulary from_token_map(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::optional<TokenId> bos_;
  std::optional<TokenId> unk_;
};

/// Whitespace-delimited surface forms with every ASCII punctuation character
/// split into its own form. The literals "<bos>" and "<unk>" stay whole.
std::vector<std::string> split_words(std::string_view text);

/// BOS, UNK, then the (target_size - 2) most frequent surface forms of
/// `corpus`, ties broken lexicographically.
Vocabulary build_word_vocab(std::string_view corpus, std::size_t target_size);

std::vector<TokenId> encode_words(const Vocabulary& vocab, std::string_view text);
/// Canonical detokenization: single spaces between words, none before closing
/// punctuation. encode_words(decode_words(ids)) == ids for any valid ids.
std::string decode_words(const Vocabulary& vocab, std::span<const TokenId> ids);

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual const Vocabulary& vocab() const = 0;
};

class WordTokenizer final : public Tokenizer {
 public:
  explicit WordTokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}
  std::vector<TokenId> encode(std::string_view text) const override { return encode_words(vocab_, text); }
  std::string decode(std::span<const TokenId> ids) const override { return decode_words(vocab_, ids); }
  const Vocabulary& vocab() const override { return vocab_; }

 private:
  Vocabulary vocab_;
};

/// Ordered merge list plus the GPT-2 byte <-> printable-unicode table.
class BpeMerges {
 public:
  BpeMerges() = default;
  explicit BpeMerges(std::vector<std::pair<std::string, std::string>> merges);

  /// Merges text: one space-separated pair per line in rank order. A leading
  /// "#version" line is skipped.
  static BpeMerges parse(std::string_view text);

  std::optional<std::size_t> rank(const std::string& left, const std::string& right) const;
  std::size_t size() const { return merges_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

/// UTF-8 encoding of the printable code point GPT-2 assigns to each byte.
const std::vector<std::string>& byte_to_unicode();
/// Inverse of byte_to_unicode, keyed by UTF-8 string.
const std::unordered_map<std::string, unsigned char>& unicode_to_byte();

/// GPT-2 style pre-tokenization: contractions, optional-space + letters,
/// optional-space + digits, optional-space + other, whitespace runs. Bytes
/// >= 0x80 count as letters.
std::vector<std::string> bpe_pretokenize(std::string_view text);

std::vector<TokenId> bpe_encode(const BpeMerges& merges, const Vocabulary& vocab, std::string_view text);
std::string bpe_decode(const Vocabulary& vocab, std::span<const TokenId> ids);

class BpeTokenizer final : public Tokenizer {
 public:
  BpeTokenizer(BpeMerges merges, Vocabulary vocab) : merges_(std::move(merges)), vocab_(std::move(vocab)) {}
  /// Loads encoder JSON (token -> id) and merges text.
  static BpeTokenizer load(const std::string& vocab_json_path, const std::string& merges_path);

  std::vector<TokenId> encode(std::string_view text) const override { return bpe_encode(merges_, vocab_, text); }
  std::string decode(std::span<const TokenId> ids) const override { return bpe_decode(vocab_, ids); }
  const Vocabulary& vocab() const override { return vocab_; }

 private:
  BpeMerges merges_;
  Vocabulary vocab_;
};

}  // namespace memcap
