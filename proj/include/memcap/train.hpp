#pragma once

// Pre-training of the micro language model on a token stream.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "memcap/model.hpp"

namespace memcap {

struct TrainConfig {
  std::size_t steps = 30000;
  std::size_t batch_size = 8;
  std::size_t context = 128;
  float learning_rate = 3e-3f;
  float min_lr_ratio = 0.1f;
  std::size_t warmup_steps = 100;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float weight_decay = 0.01f;
  float grad_clip = 1.0f;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossPoint {
  std::size_t step = 0;
  double bits_per_token = 0.0;
};

struct TrainResult {
  ModelWeights weights;  // frozen
  std::vector<LossPoint> curve;
  double uniform_bits_per_token = 0.0;
};

/// Learning rate at `step`: linear warmup, then cosine decay to min_lr_ratio.
float train_learning_rate(const TrainConfig& config, std::size_t step);

/// Trains on random BOS-started windows of `corpus`. Throws ConfigError if the
/// corpus is shorter than one window or holds ids outside the vocabulary.
TrainResult train_lm(const ModelConfig& model_config, std::span<const TokenId> corpus, const TrainConfig& config,
                     const std::function<void(const LossPoint&)>& on_log = {});

/// Mean teacher-forced bits per token over consecutive windows of `tokens`.
double evaluate_bits_per_token(const ModelWeights& weights, std::span<const TokenId> tokens, std::size_t context);

}  // namespace memcap
