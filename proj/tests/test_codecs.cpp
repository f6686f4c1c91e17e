#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "memcap/codecs.hpp"
#include "test_util.hpp"

namespace memcap {
namespace {

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

// Smallest cost sum(freq_i * len_i) over every length assignment satisfying
// Kraft's inequality: the optimum over all prefix codes.
std::uint64_t brute_force_prefix_cost(const std::vector<std::uint64_t>& freq) {
  const std::size_t n = freq.size();
  if (n == 1) return freq[0];
  std::uint64_t best = UINT64_MAX;
  std::vector<unsigned> len(n, 1);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == n) {
      double kraft = 0.0;
      std::uint64_t cost = 0;
      for (std::size_t j = 0; j < n; ++j) {
        kraft += std::ldexp(1.0, -static_cast<int>(len[j]));
        cost += freq[j] * len[j];
      }
      if (kraft <= 1.0 + 1e-12) best = std::min(best, cost);
      return;
    }
    for (unsigned l = 1; l <= n; ++l) {
      len[i] = l;
      rec(i + 1);
    }
  };
  rec(0);
  return best;
}

TEST(Huffman, AbracadabraPayloadIs23Bits) {
  const auto data = bytes_of("abracadabra");
  const auto enc = huffman_encode(data);
  EXPECT_EQ(enc.payload_bits, 23u);
  EXPECT_EQ(huffman_decode(enc.table, enc.payload, enc.payload_bits, data.size()), data);
  EXPECT_DOUBLE_EQ(enc.table.kraft_sum(), 1.0);
}

TEST(Huffman, OptimalAgainstBruteForce) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t symbols = 1 + trial % 5;
    std::vector<std::uint64_t> freq(symbols);
    std::array<std::uint64_t, 256> table{};
    for (std::size_t s = 0; s < symbols; ++s) {
      freq[s] = 1 + rng() % 40;
      table[s * 37 + 3] = freq[s];
    }
    const HuffmanTable h = build_huffman_table(std::span<const std::uint64_t, 256>(table));
    std::uint64_t cost = 0;
    for (std::size_t s = 0; s < symbols; ++s) cost += freq[s] * h.lengths[s * 37 + 3];
    EXPECT_EQ(cost, brute_force_prefix_cost(freq)) << "trial " << trial;
  }
}

TEST(Huffman, RoundTripsRandomizedInputs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const unsigned alphabet = trial % 4 == 0 ? 1 : trial % 4 == 1 ? 256 : 2 + rng() % 20;
    std::vector<std::uint8_t> data(n);
    // Skewed draws exercise long codes; uniform draws the maximum-entropy case.
    std::geometric_distribution<unsigned> skew(0.3);
    for (auto& b : data) b = static_cast<std::uint8_t>(trial % 2 ? rng() % alphabet : skew(rng) % alphabet);
    const auto enc = huffman_encode(data);
    ASSERT_EQ(huffman_decode(enc.table, enc.payload, enc.payload_bits, n), data) << "trial " << trial;
    const HuffmanTable back = HuffmanTable::deserialize(enc.table.serialize());
    ASSERT_EQ(back.lengths, enc.table.lengths);
  }
}

TEST(Huffman, SingleSymbolAndErrors) {
  const auto data = bytes_of("aaaa");
  const auto enc = huffman_encode(data);
  EXPECT_EQ(enc.payload_bits, 4u);
  EXPECT_EQ(huffman_decode(enc.table, enc.payload, enc.payload_bits, 4), data);
  EXPECT_THROW(huffman_encode(std::vector<std::uint8_t>{}), ConfigError);
  EXPECT_THROW(huffman_decode(enc.table, enc.payload, 2, 4), ParseError);
  EXPECT_THROW(HuffmanTable::deserialize(std::vector<std::uint8_t>{0, 5, 1}), ParseError);
}

TEST(ArithmeticCoding, QuantizationKeepsTotalAndFloor) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto probs = testing::random_values(17, rng);
    double z = 0.0;
    for (auto& p : probs) z += (p = std::exp(4.0f * p));
    for (auto& p : probs) p = static_cast<float>(p / z);
    const auto table = quantize_distribution(probs, 1 << 16);
    EXPECT_EQ(table.total, 1u << 16);
    EXPECT_EQ(table.cumulative.back(), table.total);
    for (auto f : table.freq) EXPECT_GE(f, 1u);
  }
}

TEST(ArithmeticCoding, RoundTripsUnderAdaptiveModel) {
  // Order-0 adaptive counts: the model depends on the full history.
  const std::size_t alphabet = 7;
  SequenceModel model = [&](std::span<const std::uint32_t> history) {
    std::vector<std::uint32_t> freq(alphabet, 1);
    for (auto s : history) freq[s] += 3;
    return FrequencyTable(freq);
  };
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::uint32_t> symbols(rng() % 200);
    for (auto& s : symbols) s = static_cast<std::uint32_t>(rng() % (trial % 3 == 0 ? 1 : alphabet));
    std::size_t bits = 0;
    const auto payload = arith_encode(symbols, model, &bits);
    ASSERT_EQ(arith_decode(payload, symbols.size(), model), symbols) << "trial " << trial;
    ASSERT_LE(bits, payload.size() * 8);
  }
}

TEST(LmArithmetic, RoundTripsAndTracksCrossEntropy) {
  const ModelWeights w = testing::tiny_model(3, 1, 16, 32, 5.0f);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = testing::random_tokens(1 + trial, 32, rng);
    const auto enc = lm_arith_encode(w, tokens);
    EXPECT_EQ(lm_arith_decode(w, enc.bytes, tokens.size()), tokens);
    const double ce = sequence_cross_entropy(w, nullptr, tokens);
    EXPECT_LE(std::abs(static_cast<double>(enc.payload_bits) - ce), 2.0 + 0.02 * tokens.size());
    EXPECT_EQ(enc.bytes.size(), LmEncoded::kHeaderBytes + (enc.payload_bits + 7) / 8);
  }
}

TEST(LmArithmetic, RejectsForeignOrDamagedStreams) {
  const ModelWeights w = testing::tiny_model(3, 1, 16, 32, 5.0f);
  const ModelWeights other = testing::tiny_model(4, 1, 16, 32, 5.0f);
  const std::vector<TokenId> tokens = {1, 2, 3, 4, 5};
  auto enc = lm_arith_encode(w, tokens);
  EXPECT_THROW(lm_arith_decode(other, enc.bytes), ParseError);
  EXPECT_THROW(lm_arith_decode(w, enc.bytes, 6), ParseError);
  auto truncated = enc.bytes;
  truncated.resize(10);
  EXPECT_THROW(lm_arith_decode(w, truncated), ParseError);
  EXPECT_TRUE(lm_arith_decode(w, lm_arith_encode(w, std::vector<TokenId>{}).bytes).empty());
}

TEST(Codecs, CompressionRatio) {
  EXPECT_DOUBLE_EQ(compression_ratio(800, 400), 2.0);
  EXPECT_THROW(compression_ratio(8, 0), ConfigError);
}

TEST(ExternalCodecs, IdentityAndMissingCommands) {
  const std::string text = "some text to pass through unchanged\n";
  const auto size = run_external_codec({"identity", "cat"}, text);
  ASSERT_TRUE(size.has_value());
  EXPECT_DOUBLE_EQ(compression_ratio(8.0 * text.size(), 8.0 * static_cast<double>(*size)), 1.0);
  EXPECT_FALSE(run_external_codec({"missing", "memcap-no-such-command-xyz"}, text).has_value());
  EXPECT_THROW(run_external_codec({"fails", "false"}, text), IoError);
}

TEST(ExternalCodecs, ParsesSpecification) {
  const auto codecs = parse_external_codecs(" id = cat ; gz=gzip -9 -c;");
  ASSERT_EQ(codecs.size(), 2u);
  EXPECT_EQ(codecs[0].name, "id");
  EXPECT_EQ(codecs[0].command, "cat");
  EXPECT_EQ(codecs[1].command, "gzip -9 -c");
  EXPECT_THROW(parse_external_codecs("nocommand"), ConfigError);
}

}  // namespace
}  // namespace memcap
