#pragma once

// Per-text optimization of K prefix ("memory") vectors against a frozen model.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memcap/adamw.hpp"
#include "memcap/model.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

enum class InitScale {
  kEmbeddingStd,  // sigma = std of the token-embedding entries
  kFixed,         // sigma = CompressionConfig::fixed_init_std
};

struct CompressionConfig {
  std::size_t k = 1;
  float learning_rate = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.9f;
  float weight_decay = 0.01f;
  float adam_epsilon = 1e-8f;
  std::size_t max_steps = 5000;
  double accuracy_target = 1.0;
  std::size_t eval_every = 1;
  InitScale init_scale_mode = InitScale::kEmbeddingStd;
  float fixed_init_std = 0.02f;
  std::uint64_t seed = 0;
  /// "constant" or "cosine" (decays to 10% of the base rate over max_steps).
  std::string lr_schedule = "constant";
  /// Global-norm gradient clipping; 0 disables.
  float grad_clip = 0.0f;
  /// Loss-trace subsampling interval (0 keeps only the final point).
  std::size_t trace_every = 50;

  void validate() const;
  AdamWParams adamw() const { return {learning_rate, beta1, beta2, weight_decay, adam_epsilon}; }
  nlohmann::json to_json() const;
  static CompressionConfig from_json(const nlohmann::json& j);
};

struct MemState {
  Tensor vectors;  // [K x d_model]
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::uint64_t step = 0;

  std::size_t k() const { return vectors.rows(); }
};

struct CompressionResult {
  std::string text_id;
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t steps_used = 0;
  double accuracy = 0.0;
  std::size_t correct_with_mem = 0;
  std::size_t correct_without_mem = 0;
  double h_lm = 0.0;      // bits, BOS context
  double h_lm_mem = 0.0;  // bits, with the kept mem vectors
  bool lossless = false;
  std::vector<std::pair<std::size_t, double>> loss_trace;

  long token_gain() const;
  double information_gain() const;
  nlohmann::json to_json() const;
  static CompressionResult from_json(const nlohmann::json& j);
};

/// Standard deviation of all token-embedding entries.
double embedding_std(const ModelWeights& model);

MemState init_mem(const CompressionConfig& config, const ModelWeights& model);

/// AdamW on the mem vectors; increments the step counter.
void adamw_step(MemState& state, std::span<const float> grad, const CompressionConfig& config);

/// Fraction of t_1..t_N predicted exactly by argmax under teacher forcing.
/// An empty sequence counts as fully reconstructed.
double teacher_forced_accuracy(const ModelWeights& model, const Tensor* prefix, std::span<const TokenId> tokens);

/// Optimizes mem vectors until teacher-forced accuracy reaches the target or
/// max_steps updates have been applied. Returns the best-accuracy state seen
/// (ties go to lower loss), never the weights' gradients: the model is only read.
std::pair<MemState, CompressionResult> compress(const ModelWeights& model, std::span<const TokenId> tokens,
                                                const CompressionConfig& config, std::string text_id = {});

/// Writes `<stem>.safetensors` with one tensor "mem.{i}" [d_model] per vector
/// and `<stem>.json` carrying the text id, compression config and `extra`.
void save_mem(const std::string& stem, const Tensor& vectors, const CompressionConfig& config,
              const std::string& text_id, const nlohmann::json& extra = nlohmann::json::object());
/// Reads the vectors back as [K x d_model].
Tensor load_mem(const std::string& archive_path);

}  // namespace memcap
