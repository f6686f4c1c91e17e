#pragma once

// Capacity measures: theoretical bound, token/information gain, and the
// decoding-capacity search over a grid of text lengths.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memcap/compressor.hpp"

namespace memcap {

struct CapacityParams {
  std::size_t d_model = 0;
  unsigned bits_per_element = 16;
  std::size_t vocab_size = 0;
};

/// floor(d * b / log2 |V|): how many uniformly chosen tokens fit in one
/// vector of d elements at b bits each. Exact at integer boundaries.
std::size_t theoretical_capacity(const CapacityParams& params);
std::size_t theoretical_capacity(std::size_t d_model, unsigned bits_per_element, std::size_t vocab_size);

/// Correctly predicted tokens with mem minus without. Throws if a count exceeds n.
long token_gain(std::size_t correct_with_mem, std::size_t correct_without_mem, std::size_t n);

/// H_LM - H_LM+mem in bits. Throws NumericError on negative or non-finite input.
double information_gain(double h_lm, double h_lm_mem);

/// Token gain over the theoretical capacity of `k` vectors (b = 16 by default).
double capacity_utilization(double token_gain, const CapacityParams& params, std::size_t k = 1);

enum class Aggregation {
  kMean,      // mean per-text accuracy
  kQuantile,  // per-text accuracy at `quantile` (e.g. 0.1: 90% of texts do at least this well)
};

struct CapacitySearchConfig {
  std::vector<std::size_t> lengths = {64, 80, 96, 128, 160, 192, 256, 384, 512,
                                      768, 1024, 1280, 1568, 2048, 2560, 3072};
  std::size_t texts_per_length = 50;
  double threshold = 0.99;
  Aggregation aggregation = Aggregation::kMean;
  double quantile = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static CapacitySearchConfig from_json(const nlohmann::json& j);
};

/// Aggregate accuracy of one length under the configured rule.
double aggregate_accuracy(std::span<const double> accuracies, const CapacitySearchConfig& config);

/// Largest length, scanning in ascending order, whose aggregate accuracy
/// strictly exceeds `threshold`; the scan stops at the first failing length.
/// Returns 0 when the first length already fails.
std::size_t select_l_max(std::span<const std::pair<std::size_t, double>> aggregate_by_length, double threshold);

struct LengthStats {
  std::size_t length = 0;
  std::size_t texts = 0;
  std::size_t failed_jobs = 0;
  std::size_t lossless = 0;
  double aggregate_accuracy = 0.0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_token_gain = 0.0;
  double std_token_gain = 0.0;
  double mean_information_gain = 0.0;
  double std_information_gain = 0.0;
  double mean_h_lm = 0.0;
  double mean_h_lm_mem = 0.0;
  double mean_baseline_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Population mean and standard deviation (accumulated in double).
MeanStd mean_std(std::span<const double> values);

struct CapacityReport {
  std::string source;
  std::size_t k = 1;
  double threshold = 0.99;
  std::vector<LengthStats> per_length;
  std::size_t l_max = 0;
  /// Largest per-length mean token gain and its spread across texts.
  MeanStd token_gain;
  /// Largest per-length mean information gain (bits) and its spread.
  MeanStd information_gain;
  /// Information gain over all texts that were not compressed losslessly:
  /// the saturated regime, where it measures the vectors' cutoff in bits.
  std::optional<MeanStd> entropy_cutoff;
  double utilization = 0.0;
  std::vector<std::string> anomalies;

  nlohmann::json to_json() const;
  /// length,aggregate_accuracy,mean_accuracy,std_accuracy,... one row per length.
  std::string curve_csv() const;
};

/// Summarizes per-text results. `results` may span several lengths; lengths
/// are taken in ascending order. Failed jobs are counted per length.
CapacityReport summarize_capacity(const std::vector<CompressionResult>& results,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& failed_by_length,
                                  const CapacitySearchConfig& search, const CapacityParams& params, std::size_t k,
                                  std::string source);

/// Produces the texts of one length; texts must have exactly that many tokens.
using TextProvider = std::function<std::vector<std::pair<std::string, std::vector<TokenId>>>(std::size_t length,
                                                                                             std::size_t count)>;
/// Compresses each text; may run jobs in parallel and record failures.
struct LengthOutcome {
  std::vector<CompressionResult> results;
  std::size_t failed = 0;
};
using LengthEvaluator =
    std::function<LengthOutcome(std::size_t length, const std::vector<std::pair<std::string, std::vector<TokenId>>>&)>;

struct CapacitySearchResult {
  CapacityReport report;
  std::vector<CompressionResult> results;
};

/// Scans lengths in ascending order until the first length whose aggregate
/// accuracy does not exceed the threshold (that length is still reported).
/// Throws ConfigError on reaching a length that plus K exceeds max_positions.
CapacitySearchResult decoding_capacity_search(const CapacitySearchConfig& search, const CapacityParams& params,
                                              std::size_t k, std::size_t max_positions, const std::string& source,
                                              const TextProvider& texts, const LengthEvaluator& evaluate);

/// Convenience evaluator: sequential compress() calls against `model`.
LengthEvaluator sequential_evaluator(const ModelWeights& model, const CompressionConfig& config);

}  // namespace memcap
