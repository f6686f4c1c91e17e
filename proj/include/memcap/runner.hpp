#pragma once

// End-to-end experiment orchestration behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "memcap/compressor.hpp"
#include "memcap/corpus.hpp"
#include "memcap/metrics.hpp"
#include "memcap/model.hpp"
#include "memcap/tokenizer.hpp"
#include "memcap/train.hpp"

namespace memcap {

struct TokenizerConfig {
  /// "word" (vocabulary built from the corpus) or "bpe" (vocab.json + merges.txt).
  std::string kind = "word";
  std::string vocab_path;
  std::string merges_path;
};

struct TextSourceConfig {
  std::vector<std::string> corpus_files;  // empty: the bundled corpus
  std::string word_list;                  // empty: the bundled list
  /// Use only the first N words of the list (0 = all).
  std::size_t word_list_top_n = 0;
  /// Drop words the tokenizer maps to the unknown token.
  bool known_words_only = true;
};

struct CapacityExperiment {
  CapacitySearchConfig search;
  std::vector<std::string> sources = {"natural", "random"};
  /// Separate grid for random texts; empty reuses search.lengths.
  std::vector<std::size_t> random_lengths;
  bool save_archives = true;
};

struct ScalingExperiment {
  std::vector<std::size_t> ks = {1, 2, 4};
  std::vector<std::string> sources = {"random"};
};

struct CodecExperiment {
  std::size_t texts = 50;
  std::size_t length = 128;
  std::uint64_t lm_scale = std::uint64_t{1} << 24;
  bool external = true;
  bool verify_roundtrip = true;
};

struct GeometryExperiment {
  std::size_t texts = 16;
  std::size_t length = 64;
  std::size_t restarts = 8;
  std::size_t grid_points = 33;
  /// Extra seeds tried per text when a restart is not lossless.
  std::size_t spare_attempts = 8;
  std::size_t max_pairs_per_text = 0;
};

struct CompressExperiment {
  std::string source = "natural";
  std::size_t length = 32;
  std::size_t count = 1;
  /// Literal text to compress instead of sampled ones.
  std::string text;
};

struct ExperimentConfig {
  std::string name = "default";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out_dir = "runs";
  /// Trained-model cache; empty means <out_dir>/cache.
  std::string cache_dir;
  /// Pre-trained weight archive; empty trains (or reuses a cached) micro LM.
  std::string weights_path;
  ModelConfig model;
  TrainConfig train;
  TokenizerConfig tokenizer;
  TextSourceConfig texts;
  CompressionConfig compression;
  CapacityExperiment capacity;
  ScalingExperiment scaling;
  CodecExperiment codec;
  GeometryExperiment geometry;
  CompressExperiment compress;

  /// Checks ranges and that referenced files exist.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Hash of the snapshot without run-placement keys (workers, out_dir, cache_dir).
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

/// Overlays `patch` on `base`; every key in the patch must already exist in
/// `base` (objects recurse, other values replace).
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");
/// Sets "a.b.c" to `value` (parsed as JSON when possible, else a string).
void apply_override(nlohmann::json& config, const std::string& dotted_key, const std::string& value);
/// Defaults, then the file (if any), then overrides, in that order.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Runs fn(0..n-1) on up to `workers` threads. fn must not throw.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Output directory <out_dir>/<timestamp>-<confighash>/ with results.jsonl,
/// CSVs, archives/ and run.log. Only run.log holds timestamps.
class RunContext {
 public:
  RunContext(const ExperimentConfig& config, const std::string& command);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path archives_dir() const { return dir_ / "archives"; }
  const std::string& config_hash() const { return hash_; }

  /// Appends one JSON line (with "config_hash" added) to results.jsonl.
  void append_result(nlohmann::json row);
  /// Writes a CSV whose first line is "# config_hash=<hash>".
  void write_csv(const std::string& name, const std::string& body) const;
  void write_json(const std::string& name, const nlohmann::json& j) const;
  void log(const std::string& message);

 private:
  std::filesystem::path dir_;
  std::string hash_;
  std::ofstream results_;
  std::ofstream log_;
  std::mutex mutex_;
};

/// Frozen model plus the tokenizer it was trained with.
struct LoadedModel {
  std::unique_ptr<Tokenizer> tokenizer;
  ModelWeights weights;
  std::string source;  // archive path
};

/// Loads config.weights_path, or the cached micro LM for this model/train/
/// tokenizer/corpus configuration, training and caching it when absent.
LoadedModel load_or_train_model(const ExperimentConfig& config, RunContext* ctx = nullptr);

struct CommandOutcome {
  std::filesystem::path run_dir;
  std::size_t jobs = 0;
  std::size_t failed_jobs = 0;
  std::uint64_t weights_hash_before = 0;
  std::uint64_t weights_hash_after = 0;
  nlohmann::json summary;

  /// 0 only when every job succeeded and the weights were left untouched.
  int exit_code() const;
};

CommandOutcome cmd_train_lm(const ExperimentConfig& config);
CommandOutcome cmd_compress(const ExperimentConfig& config);
CommandOutcome cmd_capacity(const ExperimentConfig& config);
CommandOutcome cmd_scaling(const ExperimentConfig& config);
CommandOutcome cmd_codec_bench(const ExperimentConfig& config);
CommandOutcome cmd_geometry(const ExperimentConfig& config);

}  // namespace memcap
