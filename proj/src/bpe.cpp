#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "memcap/tokenizer.hpp"

namespace memcap {

namespace {

std::string utf8_encode(unsigned cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return s;
}

// Splits a UTF-8 string into code-point substrings.
std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

const std::vector<std::string>& byte_to_unicode() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t(256);
    std::vector<bool> printable(256, false);
    for (unsigned b = '!'; b <= '~'; ++b) printable[b] = true;
    for (unsigned b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (unsigned b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    unsigned extra = 0;
    for (unsigned b = 0; b < 256; ++b) t[b] = utf8_encode(printable[b] ? b : 256 + extra++);
    return t;
  }();
  return table;
}

const std::unordered_map<std::string, unsigned char>& unicode_to_byte() {
  static const std::unordered_map<std::string, unsigned char> table = [] {
    std::unordered_map<std::string, unsigned char> t;
    const auto& fwd = byte_to_unicode();
    for (unsigned b = 0; b < 256; ++b) t.emplace(fwd[b], static_cast<unsigned char>(b));
    return t;
  }();
  return table;
}

BpeMerges::BpeMerges(std::vector<std::pair<std::string, std::string>> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) ranks_.emplace(merges_[i], i);
}

BpeMerges BpeMerges::parse(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || (line_no == 1 && line.starts_with("#version"))) continue;
    const auto space = line.find(' ');
    if (space == std::string_view::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string_view::npos) {
      throw ParseError("merges line " + std::to_string(line_no) + ": expected two space-separated symbols");
    }
    merges.emplace_back(std::string(line.substr(0, space)), std::string(line.substr(space + 1)));
  }
  return BpeMerges(std::move(merges));
}

std::optional<std::size_t> BpeMerges::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find({left, right});
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> bpe_pretokenize(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < n) {
    if (text[i] == '\'') {
      bool matched = false;
      for (std::string_view suffix : {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"}) {
        if (text.substr(i).starts_with(suffix)) {
          pieces.emplace_back(suffix);
          i += suffix.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    std::size_t start = i;
    std::size_t j = i;
    if (at(j) == ' ' && j + 1 < n && !is_space(at(j + 1))) ++j;
    if (j < n && is_letter(at(j))) {
      while (j < n && is_letter(at(j))) ++j;
    } else if (j < n && is_digit(at(j))) {
      while (j < n && is_digit(at(j))) ++j;
    } else if (j < n && !is_space(at(j))) {
      while (j < n && !is_space(at(j)) && !is_letter(at(j)) && !is_digit(at(j))) ++j;
    } else {
      // Whitespace run; leave the final space to prefix the next word.
      j = i;
      while (j < n && is_space(at(j))) ++j;
      if (j < n && j - i > 1) --j;
    }
    pieces.emplace_back(text.substr(start, j - start));
    i = j;
  }
  return pieces;
}

std::vector<TokenId> bpe_encode(const BpeMerges& merges, const Vocabulary& vocab, std::string_view text) {
  const auto& byte_map = byte_to_unicode();
  std::vector<TokenId> ids;
  for (const auto& piece : bpe_pretokenize(text)) {
    std::vector<std::string> symbols;
    for (unsigned char c : piece) symbols.push_back(byte_map[c]);
    while (symbols.size() > 1) {
      std::size_t best_rank = std::numeric_limits<std::size_t>::max();
      std::pair<std::string, std::string> best;
      for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
        if (auto r = merges.rank(symbols[k], symbols[k + 1]); r && *r < best_rank) {
          best_rank = *r;
          best = {symbols[k], symbols[k + 1]};
        }
      }
      if (best_rank == std::numeric_limits<std::size_t>::max()) break;
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      for (std::size_t k = 0; k < symbols.size();) {
        if (k + 1 < symbols.size() && symbols[k] == best.first && symbols[k + 1] == best.second) {
          merged.push_back(symbols[k] + symbols[k + 1]);
          k += 2;
        } else {
          merged.push_back(symbols[k]);
          ++k;
        }
      }
      symbols = std::move(merged);
    }
    for (const auto& s : symbols) {
      auto id = vocab.find(s);
      if (!id) throw ConfigError("bpe_encode: token '" + s + "' missing from vocabulary");
      ids.push_back(*id);
    }
  }
  return ids;
}

std::string bpe_decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  const auto& inverse = unicode_to_byte();
  std::string out;
  for (auto id : ids) {
    for (const auto& ch : utf8_chars(vocab.token(id))) {
      auto it = inverse.find(ch);
      if (it == inverse.end()) throw ParseError("bpe_decode: symbol outside the byte mapping");
      out.push_back(static_cast<char>(it->second));
    }
  }
  return out;
}

BpeTokenizer BpeTokenizer::load(const std::string& vocab_json_path, const std::string& merges_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(vocab_json_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(vocab_json_path + ": " + e.what());
  }
  return BpeTokenizer(BpeMerges::parse(read_file(merges_path)), Vocabulary::from_token_map(j));
}

}  // namespace memcap
