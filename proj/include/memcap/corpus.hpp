#pragma once

// Text sources for compression experiments: sentence-aligned passages from a
// natural-language corpus and sequences of uniformly random words.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memcap/tokenizer.hpp"

namespace memcap {

enum class SourceKind { kNatural, kRandom };

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view s);

struct TextSample {
  std::string id;
  SourceKind source = SourceKind::kNatural;
  std::vector<TokenId> tokens;
  /// File and byte offset for natural passages; seed and index for random texts.
  std::string provenance;

  std::size_t n() const { return tokens.size(); }
  nlohmann::json manifest_entry() const;
};

struct CorpusFile {
  std::string name;
  std::string text;
};

/// Reads every path in order. Throws IoError on unreadable files.
std::vector<CorpusFile> load_corpus_files(const std::vector<std::string>& paths);
/// The bundled corpus under the data directory.
std::vector<std::string> bundled_corpus_paths();
std::string bundled_word_list_path();

/// All corpus files joined with blank lines (training text).
std::string join_corpus(const std::vector<CorpusFile>& files);

/// Offsets of the first non-space character after each sentence terminator
/// ('.', '!' or '?' followed by whitespace) and of the first non-space
/// character of the text.
std::vector<std::size_t> sentence_starts(std::string_view text);

/// `count` distinct passages of exactly `n` tokens, each starting at a
/// sentence start chosen uniformly at random. Throws ConfigError when the
/// corpus cannot supply that many.
std::vector<TextSample> sample_natural_passages(const std::vector<CorpusFile>& corpus, const Tokenizer& tokenizer,
                                                std::size_t n, std::size_t count, std::uint64_t seed);

/// One word per line; trims whitespace and drops blanks and duplicates
/// (first occurrence wins). Throws ConfigError on an empty list.
std::vector<std::string> load_word_list(const std::string& path);
std::vector<std::string> parse_word_list(std::string_view text);

/// Words whose tokenization holds no unknown-token id.
std::vector<std::string> known_words(std::span<const std::string> words, const Tokenizer& tokenizer);

/// Words drawn i.i.d. uniformly from `words`, joined by spaces, tokenized and
/// truncated to exactly `n` tokens.
std::vector<TextSample> generate_random_word_texts(std::span<const std::string> words, const Tokenizer& tokenizer,
                                                   std::size_t n, std::size_t count, std::uint64_t seed);

}  // namespace memcap
