#include <gtest/gtest.h>

#include <cmath>

#include "memcap/metrics.hpp"

namespace memcap {
namespace {

CompressionResult make_result(std::size_t n, std::size_t correct, std::size_t baseline, double h, double hm) {
  CompressionResult r;
  r.text_id = "t";
  r.n = n;
  r.k = 1;
  r.correct_with_mem = correct;
  r.correct_without_mem = baseline;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  r.lossless = correct == n;
  r.h_lm = h;
  r.h_lm_mem = hm;
  return r;
}

TEST(TheoreticalCapacity, HeadlineValue) { EXPECT_EQ(theoretical_capacity(2048, 16, 128256), 1931u); }

TEST(TheoreticalCapacity, ExactAtIntegerBoundaries) {
  EXPECT_EQ(theoretical_capacity(1, 16, 1u << 16), 1u);
  EXPECT_EQ(theoretical_capacity(3, 16, 256), 6u);
  EXPECT_EQ(theoretical_capacity(128, 16, 2048), 186u);
  EXPECT_EQ(theoretical_capacity(1, 1, 2), 1u);
  EXPECT_EQ(theoretical_capacity(4096, 16, 32000), 4379u);
  EXPECT_THROW(theoretical_capacity(8, 16, 1), ConfigError);
}

TEST(TheoreticalCapacity, MonotoneInDimensionAndBits) {
  for (std::size_t d = 1; d < 200; ++d) {
    EXPECT_LE(theoretical_capacity(d, 16, 50257), theoretical_capacity(d + 1, 16, 50257));
    EXPECT_LE(theoretical_capacity(d, 8, 50257), theoretical_capacity(d, 16, 50257));
  }
}

TEST(Gains, DefinitionsAndErrors) {
  EXPECT_EQ(token_gain(10, 3, 10), 7);
  EXPECT_EQ(token_gain(2, 5, 10), -3);
  EXPECT_THROW(token_gain(11, 3, 10), ConfigError);
  EXPECT_DOUBLE_EQ(information_gain(40.0, 1.5), 38.5);
  EXPECT_THROW(information_gain(-1.0, 0.0), NumericError);
  EXPECT_THROW(information_gain(NAN, 0.0), NumericError);
  EXPECT_DOUBLE_EQ(capacity_utilization(93.0, {128, 16, 2048}, 1), 0.5);
  EXPECT_DOUBLE_EQ(capacity_utilization(93.0, {128, 16, 2048}, 2), 0.25);
}

TEST(CapacitySearch, LMaxScansUntilFirstFailure) {
  const std::vector<std::pair<std::size_t, double>> a = {{16, 1.0}, {32, 0.995}, {64, 0.9}, {96, 1.0}};
  EXPECT_EQ(select_l_max(a, 0.99), 32u);
  const std::vector<std::pair<std::size_t, double>> b = {{16, 0.5}};
  EXPECT_EQ(select_l_max(b, 0.99), 0u);
  // The threshold must be strictly exceeded.
  const std::vector<std::pair<std::size_t, double>> c = {{16, 0.99}};
  EXPECT_EQ(select_l_max(c, 0.99), 0u);
}

TEST(CapacitySearch, QuantileAggregation) {
  CapacitySearchConfig c;
  const std::vector<double> acc = {1.0, 0.2, 1.0, 1.0, 0.9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  EXPECT_NEAR(aggregate_accuracy(acc, c), 10.1 / 11.0, 1e-12);
  c.aggregation = Aggregation::kQuantile;
  c.quantile = 0.1;
  EXPECT_DOUBLE_EQ(aggregate_accuracy(acc, c), 0.9);
  c.quantile = 0.0;
  EXPECT_DOUBLE_EQ(aggregate_accuracy(acc, c), 0.2);
}

TEST(CapacitySearch, StopsAfterFirstFailingLengthAndReportsIt) {
  CapacitySearchConfig search;
  search.lengths = {4, 8, 16, 32};
  search.texts_per_length = 3;
  std::vector<std::size_t> evaluated;
  TextProvider texts = [](std::size_t n, std::size_t count) {
    std::vector<std::pair<std::string, std::vector<TokenId>>> out;
    for (std::size_t i = 0; i < count; ++i) out.emplace_back("x", std::vector<TokenId>(n, 1));
    return out;
  };
  LengthEvaluator evaluate = [&](std::size_t n, const auto& batch) {
    evaluated.push_back(n);
    LengthOutcome o;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t correct = n <= 8 ? n : n / 2;
      o.results.push_back(make_result(n, correct, 1, 2.0 * n, n <= 8 ? 0.1 : 10.0));
    }
    return o;
  };
  const auto result = decoding_capacity_search(search, {128, 16, 2048}, 1, 512, "random", texts, evaluate);
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{4, 8, 16}));
  const auto& r = result.report;
  EXPECT_EQ(r.l_max, 8u);
  ASSERT_EQ(r.per_length.size(), 3u);
  EXPECT_DOUBLE_EQ(r.per_length[2].mean_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.token_gain.mean, 7.0);
  EXPECT_DOUBLE_EQ(r.information_gain.mean, 22.0);
  ASSERT_TRUE(r.entropy_cutoff.has_value());
  EXPECT_DOUBLE_EQ(r.entropy_cutoff->mean, 22.0);
  EXPECT_NEAR(r.utilization, 7.0 / 186.0, 1e-12);
  // One header line plus one row per evaluated length.
  const std::string csv = r.curve_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(CapacitySearch, RejectsLengthsBeyondContext) {
  CapacitySearchConfig search;
  search.lengths = {8, 600};
  TextProvider texts = [](std::size_t n, std::size_t count) {
    return std::vector<std::pair<std::string, std::vector<TokenId>>>(count, {"x", std::vector<TokenId>(n, 1)});
  };
  LengthEvaluator evaluate = [](std::size_t n, const auto& batch) {
    LengthOutcome o;
    for (std::size_t i = 0; i < batch.size(); ++i) o.results.push_back(make_result(n, n, 0, 1.0, 0.0));
    return o;
  };
  EXPECT_THROW(decoding_capacity_search(search, {128, 16, 2048}, 1, 512, "random", texts, evaluate), ConfigError);
  search.lengths = {8, 4};
  EXPECT_THROW(search.validate(), ConfigError);
}

TEST(CapacitySearch, FailedJobsBecomeAnomalies) {
  CapacitySearchConfig search;
  search.lengths = {4};
  const std::vector<CompressionResult> results = {make_result(4, 4, 0, 8.0, 0.0)};
  const auto r = summarize_capacity(results, {{4, 2}}, search, {128, 16, 2048}, 1, "natural");
  EXPECT_EQ(r.per_length.at(0).failed_jobs, 2u);
  EXPECT_FALSE(r.anomalies.empty());
  EXPECT_FALSE(r.entropy_cutoff.has_value());
}

TEST(Statistics, MeanStdIsPopulation) {
  const std::vector<double> v = {1.0, 3.0};
  const auto ms = mean_std(v);
  EXPECT_DOUBLE_EQ(ms.mean, 2.0);
  EXPECT_DOUBLE_EQ(ms.std, 1.0);
  EXPECT_EQ(mean_std(std::vector<double>{}).count, 0u);
}

}  // namespace
}  // namespace memcap
