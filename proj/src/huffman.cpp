#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>

#include "memcap/codecs.hpp"

namespace memcap {

void BitWriter::put(bool bit) {
  if (bits_ % 8 == 0) bytes_.push_back(0);
  if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
  ++bits_;
}

void BitWriter::put_bits(std::uint64_t value, unsigned count) {
  for (unsigned i = count; i-- > 0;) put((value >> i) & 1u);
}

BitReader::BitReader(std::span<const std::uint8_t> bytes, std::size_t bit_count)
    : bytes_(bytes), bit_count_(bit_count) {
  if (bit_count > bytes.size() * 8) throw ParseError("bitstream: bit count exceeds buffer");
}

bool BitReader::get() {
  if (pos_ >= bit_count_) throw ParseError("bitstream: read past end");
  const bool bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
  ++pos_;
  return bit;
}

bool BitReader::get_or_zero() {
  if (pos_ >= bit_count_) {
    ++overrun_;
    return false;
  }
  return get();
}

std::size_t HuffmanTable::symbol_count() const {
  return static_cast<std::size_t>(std::count_if(lengths.begin(), lengths.end(), [](auto l) { return l > 0; }));
}

double HuffmanTable::kraft_sum() const {
  double s = 0.0;
  for (auto l : lengths) {
    if (l > 0) s += std::ldexp(1.0, -static_cast<int>(l));
  }
  return s;
}

std::vector<std::uint8_t> HuffmanTable::serialize() const {
  const auto n = static_cast<std::uint16_t>(symbol_count());
  std::vector<std::uint8_t> out{static_cast<std::uint8_t>(n & 0xff), static_cast<std::uint8_t>(n >> 8)};
  for (std::size_t s = 0; s < 256; ++s) {
    if (lengths[s] == 0) continue;
    out.push_back(static_cast<std::uint8_t>(s));
    out.push_back(lengths[s]);
  }
  return out;
}

namespace {

// Canonical assignment: codes increase with (length, symbol).
void assign_canonical_codes(HuffmanTable& t) {
  std::vector<std::pair<std::uint8_t, std::size_t>> order;
  for (std::size_t s = 0; s < 256; ++s) {
    if (t.lengths[s] > 0) order.emplace_back(t.lengths[s], s);
  }
  std::sort(order.begin(), order.end());
  std::uint64_t code = 0;
  std::uint8_t prev = order.empty() ? 0 : order.front().first;
  for (const auto& [len, s] : order) {
    code <<= (len - prev);
    t.codes[s] = code++;
    prev = len;
  }
}

}  // namespace

HuffmanTable HuffmanTable::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw ParseError("huffman: truncated table header");
  const std::size_t n = bytes[0] | (static_cast<std::size_t>(bytes[1]) << 8);
  if (n == 0 || n > 256 || bytes.size() != 2 + 2 * n) throw ParseError("huffman: malformed table header");
  HuffmanTable t;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = bytes[2 + 2 * i];
    const auto l = bytes[3 + 2 * i];
    if (l == 0 || l > 63 || t.lengths[s] != 0) throw ParseError("huffman: malformed table entry");
    t.lengths[s] = l;
  }
  if (n > 1 && std::abs(t.kraft_sum() - 1.0) > 1e-12) throw ParseError("huffman: code lengths are not complete");
  assign_canonical_codes(t);
  return t;
}

HuffmanTable build_huffman_table(std::span<const std::uint64_t, 256> frequencies) {
  HuffmanTable t;
  // Nodes: leaves 0..255, internal nodes appended. Ties break on the smallest
  // symbol contained in the subtree, which makes the tree deterministic.
  struct Node {
    std::uint64_t weight;
    std::size_t min_symbol;
    std::size_t left, right;  // SIZE_MAX for leaves
  };
  std::vector<Node> nodes;
  using Item = std::tuple<std::uint64_t, std::size_t, std::size_t>;  // weight, min symbol, node
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t s = 0; s < 256; ++s) {
    if (frequencies[s] == 0) continue;
    nodes.push_back({frequencies[s], s, SIZE_MAX, SIZE_MAX});
    heap.emplace(frequencies[s], s, nodes.size() - 1);
  }
  if (nodes.empty()) throw ConfigError("huffman: no symbols to code");
  if (nodes.size() == 1) {
    t.lengths[nodes[0].min_symbol] = 1;
    assign_canonical_codes(t);
    return t;
  }
  while (heap.size() > 1) {
    auto [wa, sa, a] = heap.top();
    heap.pop();
    auto [wb, sb, b] = heap.top();
    heap.pop();
    nodes.push_back({wa + wb, std::min(sa, sb), a, b});
    heap.emplace(wa + wb, std::min(sa, sb), nodes.size() - 1);
  }
  std::vector<std::pair<std::size_t, std::uint8_t>> stack{{std::get<2>(heap.top()), 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    if (nodes[node].left == SIZE_MAX) {
      if (depth > 63) throw ConfigError("huffman: code length exceeds 63 bits");
      t.lengths[nodes[node].min_symbol] = depth;
      continue;
    }
    stack.emplace_back(nodes[node].left, depth + 1);
    stack.emplace_back(nodes[node].right, depth + 1);
  }
  assign_canonical_codes(t);
  return t;
}

HuffmanTable build_huffman_table(std::span<const std::uint8_t> data) {
  std::array<std::uint64_t, 256> freq{};
  for (auto b : data) ++freq[b];
  return build_huffman_table(std::span<const std::uint64_t, 256>(freq));
}

HuffmanEncoded huffman_encode(std::span<const std::uint8_t> data) {
  if (data.empty()) throw ConfigError("huffman: empty input");
  HuffmanEncoded out;
  out.table = build_huffman_table(data);
  BitWriter w;
  for (auto b : data) w.put_bits(out.table.codes[b], out.table.lengths[b]);
  out.payload = w.bytes();
  out.payload_bits = w.bit_count();
  return out;
}

std::vector<std::uint8_t> huffman_decode(const HuffmanTable& table, std::span<const std::uint8_t> payload,
                                         std::size_t payload_bits, std::size_t symbol_count) {
  // Per length: first canonical code and the symbols in canonical order.
  std::array<std::vector<std::uint8_t>, 64> by_length;
  for (std::size_t s = 0; s < 256; ++s) {
    if (table.lengths[s] > 0) by_length[table.lengths[s]].push_back(static_cast<std::uint8_t>(s));
  }
  std::array<std::uint64_t, 64> first{};
  std::uint64_t code = 0;
  for (std::size_t len = 1; len < 64; ++len) {
    code <<= 1;
    first[len] = code;
    code += by_length[len].size();
  }
  BitReader in(payload, payload_bits);
  std::vector<std::uint8_t> out;
  out.reserve(symbol_count);
  while (out.size() < symbol_count) {
    std::uint64_t c = 0;
    std::size_t len = 0;
    for (;;) {
      if (in.position() >= in.bit_count()) throw ParseError("huffman: bitstream exhausted before all symbols");
      c = (c << 1) | in.get();
      ++len;
      if (len >= 64) throw ParseError("huffman: invalid code in bitstream");
      if (c - first[len] < by_length[len].size() && c >= first[len]) {
        out.push_back(by_length[len][c - first[len]]);
        break;
      }
    }
  }
  return out;
}

}  // namespace memcap
