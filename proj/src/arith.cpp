#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "memcap/codecs.hpp"

namespace memcap {

namespace {

constexpr unsigned kPrecision = 32;
constexpr std::uint64_t kTop = (std::uint64_t{1} << kPrecision) - 1;
constexpr std::uint64_t kHalf = std::uint64_t{1} << (kPrecision - 1);
constexpr std::uint64_t kQuarter = std::uint64_t{1} << (kPrecision - 2);
constexpr std::uint64_t kMaxTotal = kQuarter;

void narrow(std::uint64_t& low, std::uint64_t& high, const FrequencyTable& t, std::uint32_t symbol) {
  const std::uint64_t range = high - low + 1;
  high = low + range * t.cumulative[symbol + 1] / t.total - 1;
  low = low + range * t.cumulative[symbol] / t.total;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}

}  // namespace

FrequencyTable::FrequencyTable(std::vector<std::uint32_t> frequencies) : freq(std::move(frequencies)) {
  if (freq.empty()) throw ConfigError("frequency table: no symbols");
  cumulative.assign(freq.size() + 1, 0);
  for (std::size_t i = 0; i < freq.size(); ++i) {
    if (freq[i] == 0) throw ConfigError("frequency table: zero frequency for symbol " + std::to_string(i));
    cumulative[i + 1] = cumulative[i] + freq[i];
  }
  total = cumulative.back();
  if (total > kMaxTotal) throw ConfigError("frequency table: total exceeds 2^30");
}

FrequencyTable quantize_distribution(std::span<const float> probs, std::uint64_t total) {
  const std::size_t v = probs.size();
  if (v == 0) throw ConfigError("quantize: empty distribution");
  if (total < v || total > kMaxTotal) throw ConfigError("quantize: total must lie in [V, 2^30]");
  double mass = 0.0;
  for (float p : probs) {
    if (!std::isfinite(p) || p < 0.0f) throw NumericError("quantize: probabilities must be finite and non-negative");
    mass += p;
  }
  if (!(mass > 0.0)) throw NumericError("quantize: distribution has zero mass");
  const double spread = static_cast<double>(total - v);
  std::vector<std::uint32_t> freq(v);
  std::vector<double> frac(v);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < v; ++i) {
    const double share = static_cast<double>(probs[i]) / mass * spread;
    const double whole = std::floor(share);
    freq[i] = 1 + static_cast<std::uint32_t>(whole);
    frac[i] = share - whole;
    assigned += freq[i];
  }
  if (assigned > total) throw NumericError("quantize: rounding overshoot");
  std::uint64_t remainder = total - assigned;
  if (remainder > 0) {
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; remainder > 0; i = (i + 1) % v, --remainder) ++freq[order[i]];
  }
  return FrequencyTable(std::move(freq));
}

void ArithmeticEncoder::emit(bool bit) {
  out_.put(bit);
  for (; pending_ > 0; --pending_) out_.put(!bit);
}

void ArithmeticEncoder::encode(const FrequencyTable& table, std::uint32_t symbol) {
  if (symbol >= table.freq.size()) throw ConfigError("arithmetic coder: symbol outside the table");
  narrow(low_, high_, table, symbol);
  for (;;) {
    if (high_ < kHalf) {
      emit(false);
    } else if (low_ >= kHalf) {
      emit(true);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kHalf + kQuarter) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
  }
}

void ArithmeticEncoder::finish() {
  ++pending_;
  emit(low_ >= kQuarter);
}

ArithmeticDecoder::ArithmeticDecoder(BitReader& in) : in_(in) {
  for (unsigned i = 0; i < kPrecision; ++i) value_ = (value_ << 1) | next_bit();
}

bool ArithmeticDecoder::next_bit() {
  const bool bit = in_.get_or_zero();
  // The encoder's tail leaves implicit zeros; a full register of them means
  // the stream ended long before the message did.
  if (in_.overrun() > kPrecision) throw ParseError("arithmetic decoder: bitstream underrun");
  return bit;
}

std::uint32_t ArithmeticDecoder::decode(const FrequencyTable& table) {
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t target = ((value_ - low_ + 1) * table.total - 1) / range;
  const auto it = std::upper_bound(table.cumulative.begin(), table.cumulative.end(), target);
  if (it == table.cumulative.begin() || it == table.cumulative.end()) {
    throw ParseError("arithmetic decoder: corrupt bitstream");
  }
  const auto symbol = static_cast<std::uint32_t>(it - table.cumulative.begin() - 1);
  narrow(low_, high_, table, symbol);
  for (;;) {
    if (high_ < kHalf) {
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      value_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kHalf + kQuarter) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      value_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
    value_ = (value_ << 1) | next_bit();
  }
  return symbol;
}

std::vector<std::uint8_t> arith_encode(std::span<const std::uint32_t> symbols, const SequenceModel& model,
                                       std::size_t* payload_bits) {
  BitWriter w;
  ArithmeticEncoder enc(w);
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(model(symbols.first(i)), symbols[i]);
  enc.finish();
  if (payload_bits) *payload_bits = w.bit_count();
  return w.bytes();
}

std::vector<std::uint32_t> arith_decode(std::span<const std::uint8_t> payload, std::size_t count,
                                        const SequenceModel& model) {
  BitReader in(payload, payload.size() * 8);
  ArithmeticDecoder dec(in);
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dec.decode(model(out)));
  return out;
}

namespace {

SequenceModel lm_sequence_model(const ModelWeights& model, const LmCodecOptions& options) {
  return [&model, options](std::span<const std::uint32_t> history) {
    const auto probs = next_token_probs(model, history);
    return quantize_distribution(probs, options.scale);
  };
}

}  // namespace

LmEncoded lm_arith_encode(const ModelWeights& model, std::span<const TokenId> tokens, const LmCodecOptions& options) {
  for (TokenId t : tokens) {
    if (t >= model.config.vocab_size) throw ConfigError("lm codec: token id outside the vocabulary");
  }
  if (tokens.size() > model.config.max_positions) throw ConfigError("lm codec: sequence exceeds max_positions");
  LmEncoded out;
  put_u64(out.bytes, tokens.size());
  put_u64(out.bytes, model.hash());
  const auto payload = arith_encode(tokens, lm_sequence_model(model, options), &out.payload_bits);
  out.bytes.insert(out.bytes.end(), payload.begin(), payload.end());
  return out;
}

std::vector<TokenId> lm_arith_decode(const ModelWeights& model, std::span<const std::uint8_t> framed,
                                     std::optional<std::size_t> expected_count, const LmCodecOptions& options) {
  if (framed.size() < LmEncoded::kHeaderBytes) throw ParseError("lm codec: truncated frame header");
  const std::uint64_t count = get_u64(framed, 0);
  const std::uint64_t hash = get_u64(framed, 8);
  if (hash != model.hash()) throw ParseError("lm codec: frame was encoded with different model weights");
  if (expected_count && *expected_count != count) {
    throw ParseError("lm codec: frame holds " + std::to_string(count) + " tokens, expected " +
                     std::to_string(*expected_count));
  }
  if (count > model.config.max_positions) throw ParseError("lm codec: token count exceeds max_positions");
  return arith_decode(framed.subspan(LmEncoded::kHeaderBytes), count, lm_sequence_model(model, options));
}

double compression_ratio(double original_bits, double compressed_bits) {
  if (!(compressed_bits > 0.0)) throw ConfigError("compression ratio: compressed size must be positive");
  return original_bits / compressed_bits;
}

}  // namespace memcap
