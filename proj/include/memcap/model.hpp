#pragma once

// Decoder-only GPT-2-style language model: pre-layernorm blocks, learned
// positional embeddings, tied input/output embeddings. The forward pass can
// take a prefix of raw embedding vectors that bypass the token table.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memcap/tensor.hpp"

namespace memcap {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 2048;
  std::size_t max_positions = 512;
  float layernorm_epsilon = 1e-5f;
  bool tied_embeddings = true;
  /// Prefix vectors receive positional embeddings for positions 0..K-1.
  bool prefix_positions = true;
  /// Token that starts a context when no prefix is given.
  std::optional<TokenId> bos_id = TokenId{0};

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;    // [d x 3d], [3d]
  Tensor proj_weight, proj_bias;  // [d x d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor fc_weight, fc_bias;      // [d x d_ff], [d_ff]
  Tensor out_weight, out_bias;    // [d_ff x d], [d]
};

struct ModelWeights {
  ModelConfig config;
  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [P x d]
  std::vector<LayerWeights> layers;
  Tensor final_gain, final_bias;
  Tensor lm_head;  // [V x d]; only when embeddings are untied
  bool frozen = false;

  /// Archive names in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  /// Expected shape for every archive name.
  std::vector<std::pair<std::string, Shape>> expected_shapes() const;
  const Tensor& output_embedding() const { return config.tied_embeddings ? token_embedding : lm_head; }

  /// Marks every parameter as not requiring grad.
  void freeze();
  void set_trainable(bool trainable);
  /// FNV-1a over names, shapes and raw float bytes.
  std::uint64_t hash() const;
  std::size_t parameter_count() const;
};

/// Weights ~ N(0, 0.02^2), layernorm gains 1 and biases 0. Deterministic in seed.
ModelWeights init_model(const ModelConfig& config, std::uint64_t seed);

/// Logits for every position of [prefix rows; embeddings of tokens], or only
/// rows from `logits_from` on. Requires at least one position in total.
Tensor forward(Tape& tape, const ModelWeights& weights, const Tensor* prefix, std::span<const TokenId> tokens,
               std::size_t logits_from = 0);

/// Teacher-forced logits predicting t_1..t_N, one row each. The context is
/// [prefix, t_1..t_{N-1}] with the prediction for t_1 read at the last prefix
/// position, or [BOS, t_1..t_{N-1}] without a prefix.
Tensor target_logits(Tape& tape, const ModelWeights& weights, const Tensor* prefix,
                     std::span<const TokenId> tokens);

/// Index of the largest entry per row, lowest id on ties.
std::vector<TokenId> argmax_rows(const Tensor& logits);

/// Per-row cross-entropy in bits, accumulated in double.
std::vector<double> row_cross_entropy_bits(const Tensor& logits, std::span<const TokenId> targets);

/// Total teacher-forced cross-entropy of `tokens` in bits.
double sequence_cross_entropy(const ModelWeights& weights, const Tensor* prefix, std::span<const TokenId> tokens);

/// Number of positions where the argmax prediction equals the target.
std::size_t teacher_forced_correct(const ModelWeights& weights, const Tensor* prefix,
                                   std::span<const TokenId> tokens);

/// Argmax decoding of `length` tokens following the prefix (or BOS).
std::vector<TokenId> greedy_decode(const ModelWeights& weights, const Tensor* prefix, std::size_t length);

/// Next-token probabilities after context [BOS, tokens...]. Used by the
/// arithmetic coder; recomputes the whole context each call.
std::vector<float> next_token_probs(const ModelWeights& weights, std::span<const TokenId> context);

}  // namespace memcap
