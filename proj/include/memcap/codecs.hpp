#pragma once

// Baseline codecs for comparison with mem-vector compression: canonical
// Huffman over bytes, an LM-driven arithmetic coder over tokens, and
// external compressors invoked as shell commands.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memcap/model.hpp"

namespace memcap {

/// Append-only bit buffer, most significant bit first within each byte.
class BitWriter {
 public:
  void put(bool bit);
  void put_bits(std::uint64_t value, unsigned count);
  std::size_t bit_count() const { return bits_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t bits_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::size_t bit_count);
  /// Throws ParseError past the end.
  bool get();
  /// Past the end, returns 0 and counts the overrun instead of throwing.
  bool get_or_zero();
  std::size_t position() const { return pos_; }
  std::size_t overrun() const { return overrun_; }
  std::size_t bit_count() const { return bit_count_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t bit_count_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
};

// --- Huffman -----------------------------------------------------------------

struct HuffmanTable {
  std::array<std::uint8_t, 256> lengths{};  // 0 = symbol absent
  std::array<std::uint64_t, 256> codes{};

  std::size_t symbol_count() const;
  /// Sum of 2^-length over present symbols; exactly 1 for a complete code.
  double kraft_sum() const;
  /// Header layout: u16 symbol count, then (symbol, length) byte pairs.
  std::vector<std::uint8_t> serialize() const;
  static HuffmanTable deserialize(std::span<const std::uint8_t> bytes);
};

/// Canonical code lengths for byte frequencies. A lone symbol gets a 1-bit code.
/// Throws ConfigError when every frequency is zero.
HuffmanTable build_huffman_table(std::span<const std::uint64_t, 256> frequencies);
HuffmanTable build_huffman_table(std::span<const std::uint8_t> data);

struct HuffmanEncoded {
  HuffmanTable table;
  std::vector<std::uint8_t> payload;
  std::size_t payload_bits = 0;
  std::size_t header_bits() const { return table.serialize().size() * 8; }
};

HuffmanEncoded huffman_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> huffman_decode(const HuffmanTable& table, std::span<const std::uint8_t> payload,
                                         std::size_t payload_bits, std::size_t symbol_count);

// --- Arithmetic coding -------------------------------------------------------

/// Integer frequencies summing to exactly `total`, every entry at least 1.
struct FrequencyTable {
  std::vector<std::uint32_t> freq;
  std::vector<std::uint64_t> cumulative;  // size freq.size() + 1
  std::uint64_t total = 0;

  explicit FrequencyTable(std::vector<std::uint32_t> frequencies);
};

/// freq_i = 1 + floor(p_i * (total - V)); the remainder goes one unit at a
/// time to the largest fractional parts, ties to the lowest id.
FrequencyTable quantize_distribution(std::span<const float> probs, std::uint64_t total);

class ArithmeticEncoder {
 public:
  explicit ArithmeticEncoder(BitWriter& out) : out_(out) {}
  void encode(const FrequencyTable& table, std::uint32_t symbol);
  void finish();

 private:
  void emit(bool bit);
  BitWriter& out_;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = (std::uint64_t{1} << 32) - 1;
  std::uint64_t pending_ = 0;
};

class ArithmeticDecoder {
 public:
  explicit ArithmeticDecoder(BitReader& in);
  std::uint32_t decode(const FrequencyTable& table);

 private:
  bool next_bit();
  BitReader& in_;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = (std::uint64_t{1} << 32) - 1;
  std::uint64_t value_ = 0;
};

/// Model-agnostic coding of a symbol sequence; `model(history)` returns the
/// table for the next symbol.
using SequenceModel = std::function<FrequencyTable(std::span<const std::uint32_t> history)>;
std::vector<std::uint8_t> arith_encode(std::span<const std::uint32_t> symbols, const SequenceModel& model,
                                       std::size_t* payload_bits = nullptr);
std::vector<std::uint32_t> arith_decode(std::span<const std::uint8_t> payload, std::size_t count,
                                        const SequenceModel& model);

struct LmCodecOptions {
  /// Total of every quantized distribution; at most 2^30.
  std::uint64_t scale = std::uint64_t{1} << 24;
};

struct LmEncoded {
  /// u64 token count, u64 weight hash, then the payload bytes.
  std::vector<std::uint8_t> bytes;
  std::size_t payload_bits = 0;
  static constexpr std::size_t kHeaderBytes = 16;
};

/// Arithmetic coding of `tokens` under the model's next-token distribution
/// after [BOS, t_1..t_{i-1}]. The model must be the one used for decoding.
LmEncoded lm_arith_encode(const ModelWeights& model, std::span<const TokenId> tokens,
                          const LmCodecOptions& options = {});
/// Throws ParseError on a truncated frame, a weight-hash mismatch, a token
/// count differing from `expected_count` (when given) or a bitstream underrun.
std::vector<TokenId> lm_arith_decode(const ModelWeights& model, std::span<const std::uint8_t> framed,
                                     std::optional<std::size_t> expected_count = std::nullopt,
                                     const LmCodecOptions& options = {});

/// original / compressed; throws ConfigError when compressed is not positive.
double compression_ratio(double original_bits, double compressed_bits);

// --- External compressors ----------------------------------------------------

struct ExternalCodec {
  std::string name;
  std::string command;  // reads stdin, writes the compressed stream to stdout
};

/// Parses "name=command;name=command".
std::vector<ExternalCodec> parse_external_codecs(std::string_view spec);
/// From MEMCAP_EXTERNAL_CODECS if set, else gzip/bzip2/xz at maximum level.
std::vector<ExternalCodec> default_external_codecs();

/// Compressed size in bytes, or nullopt when the command is unavailable
/// (exit status 127). Other failures throw IoError.
std::optional<std::size_t> run_external_codec(const ExternalCodec& codec, std::string_view input);

}  // namespace memcap
