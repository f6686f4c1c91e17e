#include "memcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "memcap/hash.hpp"

namespace memcap {

std::size_t theoretical_capacity(const CapacityParams& p) {
  return theoretical_capacity(p.d_model, p.bits_per_element, p.vocab_size);
}

std::size_t theoretical_capacity(std::size_t d_model, unsigned bits_per_element, std::size_t vocab_size) {
  if (vocab_size < 2) throw ConfigError("theoretical_capacity: vocabulary needs at least 2 tokens");
  if (bits_per_element == 0) throw ConfigError("theoretical_capacity: bits per element must be positive");
  const long double budget = static_cast<long double>(d_model) * bits_per_element;
  const long double per_token = std::log2(static_cast<long double>(vocab_size));
  auto fits = [&](long double l) { return l * per_token <= budget * (1.0L + 1e-15L); };
  auto l = static_cast<std::size_t>(std::floor(budget / per_token));
  while (fits(static_cast<long double>(l + 1))) ++l;
  while (l > 0 && !fits(static_cast<long double>(l))) --l;
  return l;
}

long token_gain(std::size_t correct_with_mem, std::size_t correct_without_mem, std::size_t n) {
  if (correct_with_mem > n || correct_without_mem > n) {
    throw ConfigError("token_gain: correct count exceeds text length " + std::to_string(n));
  }
  return static_cast<long>(correct_with_mem) - static_cast<long>(correct_without_mem);
}

double information_gain(double h_lm, double h_lm_mem) {
  if (!std::isfinite(h_lm) || !std::isfinite(h_lm_mem) || h_lm < 0.0 || h_lm_mem < 0.0) {
    throw NumericError("information_gain: entropies must be finite and non-negative");
  }
  return h_lm - h_lm_mem;
}

double capacity_utilization(double gain, const CapacityParams& params, std::size_t k) {
  const std::size_t capacity = theoretical_capacity(params) * k;
  if (capacity == 0) throw ConfigError("capacity_utilization: theoretical capacity is zero");
  return gain / static_cast<double>(capacity);
}

void CapacitySearchConfig::validate() const {
  if (lengths.empty()) throw ConfigError("capacity search: empty length grid");
  if (!std::is_sorted(lengths.begin(), lengths.end()) ||
      std::adjacent_find(lengths.begin(), lengths.end()) != lengths.end()) {
    throw ConfigError("capacity search: lengths must be strictly ascending");
  }
  if (lengths.front() == 0) throw ConfigError("capacity search: lengths must be positive");
  if (texts_per_length == 0) throw ConfigError("capacity search: texts_per_length must be positive");
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ConfigError("capacity search: threshold must lie in [0, 1)");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw ConfigError("capacity search: quantile must lie in [0, 1]");
}

nlohmann::json CapacitySearchConfig::to_json() const {
  return {{"lengths", lengths},
          {"texts_per_length", texts_per_length},
          {"threshold", threshold},
          {"aggregation", aggregation == Aggregation::kMean ? "mean" : "quantile"},
          {"quantile", quantile}};
}

CapacitySearchConfig CapacitySearchConfig::from_json(const nlohmann::json& j) {
  CapacitySearchConfig c;
  c.lengths = j.value("lengths", c.lengths);
  c.texts_per_length = j.value("texts_per_length", c.texts_per_length);
  c.threshold = j.value("threshold", c.threshold);
  const auto agg = j.value("aggregation", std::string("mean"));
  if (agg == "mean") {
    c.aggregation = Aggregation::kMean;
  } else if (agg == "quantile") {
    c.aggregation = Aggregation::kQuantile;
  } else {
    throw ConfigError("capacity search: unknown aggregation '" + agg + "'");
  }
  c.quantile = j.value("quantile", c.quantile);
  c.validate();
  return c;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.count = values.size();
  if (values.empty()) return out;
  double s = 0.0;
  for (double x : values) s += x;
  out.mean = s / static_cast<double>(values.size());
  double var = 0.0;
  for (double x : values) var += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

double aggregate_accuracy(std::span<const double> accuracies, const CapacitySearchConfig& config) {
  if (accuracies.empty()) return 0.0;
  if (config.aggregation == Aggregation::kMean) return mean_std(accuracies).mean;
  std::vector<double> sorted(accuracies.begin(), accuracies.end());
  std::sort(sorted.begin(), sorted.end());
  // Lower empirical quantile: the value at rank floor(q * (n - 1)).
  const auto idx = static_cast<std::size_t>(std::floor(config.quantile * static_cast<double>(sorted.size() - 1)));
  return sorted[idx];
}

std::size_t select_l_max(std::span<const std::pair<std::size_t, double>> aggregate_by_length, double threshold) {
  std::size_t l_max = 0;
  for (const auto& [length, acc] : aggregate_by_length) {
    if (!(acc > threshold)) break;
    l_max = length;
  }
  return l_max;
}

nlohmann::json LengthStats::to_json() const {
  return {{"length", length},
          {"texts", texts},
          {"failed_jobs", failed_jobs},
          {"lossless", lossless},
          {"aggregate_accuracy", aggregate_accuracy},
          {"mean_accuracy", mean_accuracy},
          {"std_accuracy", std_accuracy},
          {"mean_token_gain", mean_token_gain},
          {"std_token_gain", std_token_gain},
          {"mean_information_gain", mean_information_gain},
          {"std_information_gain", std_information_gain},
          {"mean_h_lm", mean_h_lm},
          {"mean_h_lm_mem", mean_h_lm_mem},
          {"mean_baseline_accuracy", mean_baseline_accuracy}};
}

namespace {

nlohmann::json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; }

}  // namespace

nlohmann::json CapacityReport::to_json() const {
  nlohmann::json lengths = nlohmann::json::array();
  for (const auto& s : per_length) lengths.push_back(s.to_json());
  return {{"source", source},
          {"k", k},
          {"threshold", threshold},
          {"l_max", l_max},
          {"token_gain", mean_std_json(token_gain)},
          {"information_gain", mean_std_json(information_gain)},
          {"entropy_cutoff", entropy_cutoff ? mean_std_json(*entropy_cutoff) : nlohmann::json(nullptr)},
          {"utilization", utilization},
          {"anomalies", anomalies},
          {"per_length", lengths}};
}

std::string CapacityReport::curve_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "length,mean_acc,std_acc,mean_gain_tokens,mean_gain_bits,std_gain_tokens,std_gain_bits,"
         "aggregate_acc,texts,lossless,failed_jobs,mean_h_lm,mean_h_lm_mem,source,k\n";
  for (const auto& s : per_length) {
    out << s.length << ',' << s.mean_accuracy << ',' << s.std_accuracy << ',' << s.mean_token_gain << ','
        << s.mean_information_gain << ',' << s.std_token_gain << ',' << s.std_information_gain << ','
        << s.aggregate_accuracy << ',' << s.texts << ',' << s.lossless << ',' << s.failed_jobs << ','
        << s.mean_h_lm << ',' << s.mean_h_lm_mem << ',' << source << ',' << k << '\n';
  }
  return out.str();
}

CapacityReport summarize_capacity(const std::vector<CompressionResult>& results,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& failed_by_length,
                                  const CapacitySearchConfig& search, const CapacityParams& params, std::size_t k,
                                  std::string source) {
  CapacityReport report;
  report.source = std::move(source);
  report.k = k;
  report.threshold = search.threshold;

  std::map<std::size_t, std::vector<const CompressionResult*>> by_length;
  for (const auto& r : results) by_length[r.n].push_back(&r);
  std::map<std::size_t, std::size_t> failed(failed_by_length.begin(), failed_by_length.end());
  for (const auto& [length, count] : failed) by_length.try_emplace(length);

  std::vector<std::pair<std::size_t, double>> aggregates;
  std::size_t best_gain_length = 0;
  std::vector<double> unsaturated;
  for (const auto& [length, rs] : by_length) {
    LengthStats s;
    s.length = length;
    s.texts = rs.size();
    s.failed_jobs = failed.count(length) ? failed.at(length) : 0;
    std::vector<double> acc, gain, info, h, hm, base;
    for (const auto* r : rs) {
      acc.push_back(r->accuracy);
      gain.push_back(static_cast<double>(r->token_gain()));
      info.push_back(r->information_gain());
      h.push_back(r->h_lm);
      hm.push_back(r->h_lm_mem);
      base.push_back(static_cast<double>(r->correct_without_mem) / static_cast<double>(std::max<std::size_t>(r->n, 1)));
      s.lossless += r->lossless;
      if (!r->lossless) unsaturated.push_back(r->information_gain());
    }
    s.aggregate_accuracy = aggregate_accuracy(acc, search);
    const auto a = mean_std(acc), g = mean_std(gain), i = mean_std(info);
    s.mean_accuracy = a.mean;
    s.std_accuracy = a.std;
    s.mean_token_gain = g.mean;
    s.std_token_gain = g.std;
    s.mean_information_gain = i.mean;
    s.std_information_gain = i.std;
    s.mean_h_lm = mean_std(h).mean;
    s.mean_h_lm_mem = mean_std(hm).mean;
    s.mean_baseline_accuracy = mean_std(base).mean;
    if (s.failed_jobs > 0) {
      report.anomalies.push_back("length " + std::to_string(length) + ": " + std::to_string(s.failed_jobs) +
                                 " failed job(s)");
    }
    if (s.texts == 0) {
      report.anomalies.push_back("length " + std::to_string(length) + ": no successful texts");
    }
    if (!aggregates.empty() && s.aggregate_accuracy > aggregates.back().second + 0.01) {
      report.anomalies.push_back("length " + std::to_string(length) + ": accuracy rises with length");
    }
    aggregates.emplace_back(length, s.aggregate_accuracy);
    if (s.texts > 0) {
      if (best_gain_length == 0 || g.mean > report.token_gain.mean) {
        best_gain_length = length;
        report.token_gain = g;
      }
      if (report.information_gain.count == 0 || i.mean > report.information_gain.mean) report.information_gain = i;
    }
    report.per_length.push_back(s);
  }
  report.l_max = select_l_max(aggregates, search.threshold);
  if (!unsaturated.empty()) report.entropy_cutoff = mean_std(unsaturated);
  if (params.vocab_size >= 2 && params.d_model > 0) {
    report.utilization = capacity_utilization(report.token_gain.mean, params, k);
  }
  if (report.l_max > 0 && report.l_max == aggregates.back().first) {
    report.anomalies.push_back("every evaluated length passed; the grid may end below capacity");
  }
  return report;
}

CapacitySearchResult decoding_capacity_search(const CapacitySearchConfig& search, const CapacityParams& params,
                                              std::size_t k, std::size_t max_positions, const std::string& source,
                                              const TextProvider& texts, const LengthEvaluator& evaluate) {
  search.validate();
  CapacitySearchResult out;
  std::vector<std::pair<std::size_t, std::size_t>> failed;
  for (std::size_t length : search.lengths) {
    if (length + k > max_positions) {
      throw ConfigError("capacity search: length " + std::to_string(length) + " plus K = " + std::to_string(k) +
                        " exceeds max_positions " + std::to_string(max_positions));
    }
    auto batch = texts(length, search.texts_per_length);
    for (const auto& [id, tokens] : batch) {
      if (tokens.size() != length) {
        throw ConfigError("capacity search: text '" + id + "' has " + std::to_string(tokens.size()) +
                          " tokens, expected " + std::to_string(length));
      }
    }
    auto outcome = evaluate(length, batch);
    std::vector<double> acc;
    for (const auto& r : outcome.results) acc.push_back(r.accuracy);
    out.results.insert(out.results.end(), outcome.results.begin(), outcome.results.end());
    if (outcome.failed) failed.emplace_back(length, outcome.failed);
    if (!(aggregate_accuracy(acc, search) > search.threshold)) break;
  }
  out.report = summarize_capacity(out.results, failed, search, params, k, source);
  return out;
}

LengthEvaluator sequential_evaluator(const ModelWeights& model, const CompressionConfig& config) {
  return [&model, config](std::size_t length, const std::vector<std::pair<std::string, std::vector<TokenId>>>& batch) {
    LengthOutcome outcome;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CompressionConfig c = config;
      c.seed = derive_seed(config.seed, "compress." + std::to_string(length), i);
      outcome.results.push_back(compress(model, batch[i].second, c, batch[i].first).second);
    }
    return outcome;
  };
}

}  // namespace memcap
