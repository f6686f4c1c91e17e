#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "memcap/archive.hpp"
#include "memcap/runner.hpp"
#include "test_util.hpp"

namespace memcap {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(RunnerConfig, MergeRejectsUnknownKeys) {
  json base = ExperimentConfig{}.to_json();
  merge_config(base, json{{"compression", {{"k", 4}}}});
  EXPECT_EQ(base["compression"]["k"], 4);
  EXPECT_THROW(merge_config(base, json{{"compresion", {{"k", 4}}}}), ConfigError);
  EXPECT_THROW(merge_config(base, json{{"compression", {{"kk", 4}}}}), ConfigError);
}

TEST(RunnerConfig, DottedOverridesParseJsonValues) {
  json base = ExperimentConfig{}.to_json();
  apply_override(base, "compression.k", "4");
  apply_override(base, "capacity.search.lengths", "[4, 8]");
  apply_override(base, "name", "plain string");
  const auto c = ExperimentConfig::from_json(base);
  EXPECT_EQ(c.compression.k, 4u);
  EXPECT_EQ(c.capacity.search.lengths, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(c.name, "plain string");
  EXPECT_THROW(apply_override(base, "model.nope", "1"), ConfigError);
}

TEST(RunnerConfig, FileThenOverridesAndValidation) {
  const auto path = fs::temp_directory_path() / "memcap_config_test.json";
  std::ofstream(path) << R"({"compression": {"k": 2, "max_steps": 7}, "seed": 5})";
  const auto c = load_experiment_config(path.string(), {{"compression.k", "3"}});
  EXPECT_EQ(c.compression.k, 3u);
  EXPECT_EQ(c.compression.max_steps, 7u);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_THROW(load_experiment_config(path.string(), {{"model.n_heads", "5"}}), ConfigError);
  EXPECT_THROW(load_experiment_config(path.string(), {{"weights_path", "\"/no/such/file\""}}), ConfigError);
  fs::remove(path);
}

TEST(RunnerConfig, HashIgnoresPlacement) {
  ExperimentConfig a, b;
  b.workers = 4;
  b.out_dir = "elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash_hex().size(), 16u);
}

TEST(Runner, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

// A small model saved with its vocabulary, so commands run in seconds.
class RunnerCommands : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("memcap_runner_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const auto corpus = load_corpus_files(bundled_corpus_paths());
    const Vocabulary vocab = build_word_vocab(join_corpus(corpus), 64);
    ModelWeights w = testing::tiny_model(5, 1, 16, 64, 3.0f);
    save_weights(w, (dir_ / "w.safetensors").string(), {{"vocab", vocab.to_json().dump()}});
    config_.out_dir = (dir_ / "runs").string();
    config_.weights_path = (dir_ / "w.safetensors").string();
    config_.model = w.config;
    config_.compression.max_steps = 10;
    config_.compression.trace_every = 5;
    config_.compress.count = 2;
    config_.compress.length = 6;
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  ExperimentConfig config_;
};

TEST_F(RunnerCommands, CompressIsReproducible) {
  const auto a = cmd_compress(config_);
  const auto b = cmd_compress(config_);
  EXPECT_EQ(a.jobs, 2u);
  EXPECT_EQ(a.failed_jobs, 0u);
  EXPECT_EQ(a.exit_code(), 0);
  EXPECT_EQ(a.weights_hash_before, a.weights_hash_after);
  EXPECT_NE(a.run_dir, b.run_dir);
  const std::string results = slurp(a.run_dir / "results.jsonl");
  EXPECT_EQ(results, slurp(b.run_dir / "results.jsonl"));
  EXPECT_EQ(line_count(results), 2u);
  const json row = json::parse(results.substr(0, results.find('\n')));
  EXPECT_EQ(row["config_hash"], config_.hash_hex());
  EXPECT_EQ(row["lossless"].get<bool>(), row["accuracy"].get<double>() == 1.0);
  EXPECT_TRUE(fs::exists(a.run_dir / "archives" / "compress-0.safetensors"));
  EXPECT_EQ(load_mem((a.run_dir / "archives" / "compress-1.safetensors").string()).shape(), (Shape{1, 16}));
  EXPECT_NE(slurp(a.run_dir / "run.log").find("command compress"), std::string::npos);
}

TEST_F(RunnerCommands, LiteralTextAndK) {
  config_.compress.text = "Alice was beginning to get very tired";
  config_.compression.k = 3;
  const auto out = cmd_compress(config_);
  const json row = json::parse(slurp(out.run_dir / "results.jsonl"));
  EXPECT_EQ(row["k"], 3);
  EXPECT_EQ(row["source"], "literal");
  EXPECT_EQ(row["n"], 7);
}

TEST_F(RunnerCommands, CapacityWritesCurvesAndScatter) {
  config_.capacity.search.lengths = {2, 4};
  config_.capacity.search.texts_per_length = 2;
  const auto out = cmd_capacity(config_);
  EXPECT_GE(out.jobs, 4u);
  for (const auto* name : {"capacity_natural.json", "capacity_random.json", "capacity_curve_natural.csv",
                           "capacity_curve_random.csv", "capacity_summary.csv", "scatter.csv"}) {
    EXPECT_TRUE(fs::exists(out.run_dir / name)) << name;
  }
  const std::string scatter = slurp(out.run_dir / "scatter.csv");
  EXPECT_EQ(scatter.rfind("# config_hash=" + config_.hash_hex(), 0), 0u);
  // One row per text and evaluated length; the curve has one row per evaluated length.
  EXPECT_EQ(line_count(scatter), 2u + out.jobs);
  std::size_t curve_rows = 0;
  for (const auto* source : {"natural", "random"}) {
    curve_rows += line_count(slurp(out.run_dir / (std::string("capacity_curve_") + source + ".csv"))) - 2;
  }
  EXPECT_EQ(curve_rows * 2, out.jobs);
}

TEST_F(RunnerCommands, ScalingHasARowPerK) {
  config_.capacity.search.lengths = {2};
  config_.capacity.search.texts_per_length = 1;
  config_.scaling.ks = {1, 2};
  const auto out = cmd_scaling(config_);
  EXPECT_EQ(line_count(slurp(out.run_dir / "scaling.csv")), 2u + 2u);
}

TEST_F(RunnerCommands, CodecBenchReportsEveryCodec) {
  config_.codec.texts = 2;
  config_.codec.length = 16;
  setenv("MEMCAP_EXTERNAL_CODECS", "identity=cat;missing=memcap-no-such-command-xyz", 1);
  const auto out = cmd_codec_bench(config_);
  unsetenv("MEMCAP_EXTERNAL_CODECS");
  EXPECT_EQ(out.failed_jobs, 0u);
  const std::string csv = slurp(out.run_dir / "codec_bench.csv");
  for (const auto* codec : {"huffman,", "huffman+header,", "lm-ac,", "lm-ac+header,", "identity,natural,1,0,2"}) {
    EXPECT_NE(csv.find(codec), std::string::npos) << codec << "\n" << csv;
  }
  EXPECT_EQ(csv.find("missing"), std::string::npos);
}

TEST_F(RunnerCommands, GeometryPersistsBankAndStudies) {
  config_.geometry.texts = 2;
  config_.geometry.length = 1;
  config_.geometry.restarts = 2;
  config_.geometry.grid_points = 5;
  config_.compression.max_steps = 200;
  const auto out = cmd_geometry(config_);
  const json summary = json::parse(slurp(out.run_dir / "geometry.json"));
  ASSERT_EQ(summary["bank_texts"], 2) << summary.dump();
  EXPECT_TRUE(fs::exists(out.run_dir / "archives" / "geometry-t1-r1.safetensors"));
  EXPECT_TRUE(fs::exists(out.run_dir / "cosine_histogram.csv"));
  const std::string interp = slurp(out.run_dir / "interpolation.csv");
  EXPECT_GT(line_count(interp), 2u);
}

TEST_F(RunnerCommands, FailedJobsAreRecordedNotFatal) {
  config_.compress.length = 200;  // beyond the model's context
  config_.compress.count = 1;
  config_.model.max_positions = 96;
  const auto out = cmd_compress(config_);
  EXPECT_EQ(out.failed_jobs, 1u);
  EXPECT_EQ(out.exit_code(), 1);
  const json row = json::parse(slurp(out.run_dir / "results.jsonl"));
  EXPECT_EQ(row["status"], "failed");
}

}  // namespace
}  // namespace memcap
