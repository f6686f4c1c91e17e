#include "memcap/tokenizer.hpp"

#include <algorithm>
#include <cctype>

namespace memcap {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::optional<TokenId> bos, std::optional<TokenId> unk)
    : tokens_(std::move(tokens)), bos_(bos), unk_(unk) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  for (auto special : {bos_, unk_}) {
    if (special && *special >= tokens_.size()) throw ConfigError("vocabulary: reserved id out of range");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw ShapeError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["bos"] = bos_ ? nlohmann::json(*bos_) : nlohmann::json(nullptr);
  j["unk"] = unk_ ? nlohmann::json(*unk_) : nlohmann::json(nullptr);
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<TokenId> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<TokenId>();
  };
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>(), opt("bos"), opt("unk"));
}

Vocabulary Vocabulary::from_token_map(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("BPE vocabulary must be a JSON object of token -> id");
  std::vector<std::string> tokens(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [token, id_json] : j.items()) {
    const auto id = id_json.get<std::size_t>();
    if (id >= tokens.size() || seen[id]) throw ParseError("BPE vocabulary ids are not dense 0..|V|-1");
    tokens[id] = token;
    seen[id] = true;
  }
  std::optional<TokenId> bos;
  if (j.contains("<|endoftext|>")) bos = j["<|endoftext|>"].get<TokenId>();
  return Vocabulary(std::move(tokens), bos, std::nullopt);
}

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '<') {
      const auto rest = text.substr(i);
      if (rest.starts_with(kBosSurface) || rest.starts_with(kUnkSurface)) {
        flush();
        out.emplace_back(rest.substr(0, 5));
        i += 4;
        continue;
      }
    }
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocabulary build_word_vocab(std::string_view corpus, std::size_t target_size) {
  if (target_size < 3) throw ConfigError("build_word_vocab: target size must be at least 3");
  if (corpus.empty()) throw ConfigError("build_word_vocab: empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (auto& w : split_words(corpus)) {
    if (w == kBosSurface || w == kUnkSurface) continue;
    ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens{std::string(kBosSurface), std::string(kUnkSurface)};
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < target_size; ++i) {
    tokens.push_back(ranked[i].first);
  }
  return Vocabulary(std::move(tokens), TokenId{0}, TokenId{1});
}

std::vector<TokenId> encode_words(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    if (auto id = vocab.find(w)) {
      ids.push_back(*id);
    } else if (w == kBosSurface && vocab.bos()) {
      ids.push_back(*vocab.bos());
    } else if (vocab.unk()) {
      ids.push_back(*vocab.unk());
    } else {
      throw ConfigError("encode: out-of-vocabulary word '" + w + "' and no UNK id");
    }
  }
  return ids;
}

std::string decode_words(const Vocabulary& vocab, std::span<const TokenId> ids) {
  static constexpr std::string_view kNoSpaceBefore = ",.;:!?)]}'-";
  static constexpr std::string_view kNoSpaceAfter = "([{`'-";
  std::string out;
  std::string_view prev;
  for (auto id : ids) {
    const std::string& tok = vocab.token(id);
    if (!out.empty()) {
      const bool glue_left = tok.size() == 1 && kNoSpaceBefore.find(tok[0]) != std::string_view::npos;
      const bool glue_right = prev.size() == 1 && kNoSpaceAfter.find(prev[0]) != std::string_view::npos;
      if (!glue_left && !glue_right) out.push_back(' ');
    }
    out += tok;
    prev = tok;
  }
  return out;
}

}  // namespace memcap
