#include "memcap/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#ifndef MEMCAP_DATA_DIR
#define MEMCAP_DATA_DIR "data"
#endif

namespace memcap {

std::string to_string(SourceKind kind) { return kind == SourceKind::kNatural ? "natural" : "random"; }

SourceKind source_kind_from_string(std::string_view s) {
  if (s == "natural") return SourceKind::kNatural;
  if (s == "random") return SourceKind::kRandom;
  throw ConfigError("unknown text source '" + std::string(s) + "'");
}

nlohmann::json TextSample::manifest_entry() const {
  return {{"id", id}, {"source", to_string(source)}, {"n", tokens.size()}, {"provenance", provenance}, {"tokens", tokens}};
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '\f' || c == '\v'; }

}  // namespace

std::vector<CorpusFile> load_corpus_files(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("corpus: no files given");
  std::vector<CorpusFile> out;
  for (const auto& p : paths) {
    const auto slash = p.find_last_of('/');
    out.push_back({slash == std::string::npos ? p : p.substr(slash + 1), read_file(p)});
  }
  return out;
}

std::vector<std::string> bundled_corpus_paths() {
  const std::string dir = std::string(MEMCAP_DATA_DIR) + "/corpus/";
  return {dir + "alice29.txt", dir + "asyoulik.txt", dir + "lcet10.txt", dir + "plrabn12.txt"};
}

std::string bundled_word_list_path() { return std::string(MEMCAP_DATA_DIR) + "/words_en.txt"; }

std::string join_corpus(const std::vector<CorpusFile>& files) {
  std::string out;
  for (const auto& f : files) {
    out += f.text;
    out += "\n\n";
  }
  return out;
}

std::vector<std::size_t> sentence_starts(std::string_view text) {
  std::vector<std::size_t> out;
  auto skip_space = [&](std::size_t i) {
    while (i < text.size() && is_space(text[i])) ++i;
    return i;
  };
  std::size_t first = skip_space(0);
  if (first < text.size()) out.push_back(first);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    const std::size_t j = i + 1;
    if (j >= text.size() || !is_space(text[j])) continue;
    const std::size_t start = skip_space(j);
    if (start < text.size() && (out.empty() || out.back() != start)) out.push_back(start);
  }
  return out;
}

std::vector<TextSample> sample_natural_passages(const std::vector<CorpusFile>& corpus, const Tokenizer& tokenizer,
                                                std::size_t n, std::size_t count, std::uint64_t seed) {
  if (n == 0) throw ConfigError("natural passages: length must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> candidates;  // (file, offset)
  for (std::size_t f = 0; f < corpus.size(); ++f) {
    for (auto off : sentence_starts(corpus[f].text)) candidates.emplace_back(f, off);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<TextSample> out;
  std::set<std::vector<TokenId>> seen;
  for (const auto& [f, off] : candidates) {
    if (out.size() == count) break;
    const std::string_view text = corpus[f].text;
    std::vector<TokenId> tokens;
    for (std::size_t window = 8 * n + 64;; window *= 2) {
      tokens = tokenizer.encode(text.substr(off, window));
      if (tokens.size() > n || off + window >= text.size()) break;
    }
    // Windows end mid-word; needing one spare token (or the end of the file)
    // guarantees every kept token is whole.
    if (tokens.size() < n) continue;
    tokens.resize(n);
    if (!seen.insert(tokens).second) continue;
    TextSample s;
    s.id = "natural-" + std::to_string(n) + "-" + std::to_string(out.size());
    s.source = SourceKind::kNatural;
    s.tokens = std::move(tokens);
    s.provenance = corpus[f].name + ":" + std::to_string(off);
    out.push_back(std::move(s));
  }
  if (out.size() < count) {
    throw ConfigError("natural passages: corpus yields only " + std::to_string(out.size()) + " distinct passages of " +
                      std::to_string(n) + " tokens, " + std::to_string(count) + " requested");
  }
  return out;
}

std::vector<std::string> parse_word_list(std::string_view text) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    while (!line.empty() && is_space(line.front())) line.remove_prefix(1);
    while (!line.empty() && is_space(line.back())) line.remove_suffix(1);
    if (!line.empty() && seen.insert(std::string(line)).second) out.emplace_back(line);
    pos = nl + 1;
  }
  if (out.empty()) throw ConfigError("word list is empty");
  return out;
}

std::vector<std::string> load_word_list(const std::string& path) { return parse_word_list(read_file(path)); }

std::vector<std::string> known_words(std::span<const std::string> words, const Tokenizer& tokenizer) {
  const auto unk = tokenizer.vocab().unk();
  std::vector<std::string> out;
  for (const auto& w : words) {
    const auto ids = tokenizer.encode(w);
    if (ids.empty()) continue;
    if (unk && std::find(ids.begin(), ids.end(), *unk) != ids.end()) continue;
    out.push_back(w);
  }
  return out;
}

std::vector<TextSample> generate_random_word_texts(std::span<const std::string> words, const Tokenizer& tokenizer,
                                                   std::size_t n, std::size_t count, std::uint64_t seed) {
  if (words.empty()) throw ConfigError("random texts: empty word list");
  if (n == 0) throw ConfigError("random texts: length must be positive");
  std::vector<TextSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (i + 1));
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    std::string text;
    std::vector<TokenId> tokens;
    std::size_t guard = 0;
    // One spare word guards against a final word whose tokens merge with
    // the separator that would follow it.
    while (tokens.size() <= n) {
      for (std::size_t w = 0; w < n / 2 + 1; ++w) {
        if (!text.empty()) text += ' ';
        text += words[pick(rng)];
      }
      tokens = tokenizer.encode(text);
      if (++guard > 64 + n) throw ConfigError("random texts: words produce no tokens");
    }
    tokens.resize(n);
    TextSample s;
    s.id = "random-" + std::to_string(n) + "-" + std::to_string(i);
    s.source = SourceKind::kRandom;
    s.tokens = std::move(tokens);
    s.provenance = "seed=" + std::to_string(seed) + ",index=" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace memcap
