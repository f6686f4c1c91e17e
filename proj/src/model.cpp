#include "memcap/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "memcap/hash.hpp"

namespace memcap {

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_positions == 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab_size < 2) throw ConfigError("model config: vocabulary needs at least 2 tokens");
  if (!(layernorm_epsilon > 0.0f)) throw ConfigError("model config: layernorm epsilon must be positive");
  if (bos_id && *bos_id >= vocab_size) throw ConfigError("model config: bos id outside vocabulary");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"d_model", d_model},
          {"n_heads", n_heads},
          {"d_ff", d_ff},
          {"vocab_size", vocab_size},
          {"max_positions", max_positions},
          {"layernorm_epsilon", layernorm_epsilon},
          {"tied_embeddings", tied_embeddings},
          {"prefix_positions", prefix_positions},
          {"bos_id", bos_id ? nlohmann::json(*bos_id) : nlohmann::json(nullptr)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.layernorm_epsilon = j.value("layernorm_epsilon", c.layernorm_epsilon);
  c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
  c.prefix_positions = j.value("prefix_positions", c.prefix_positions);
  if (j.contains("bos_id")) {
    c.bos_id = j["bos_id"].is_null() ? std::nullopt : std::optional<TokenId>(j["bos_id"].get<TokenId>());
  }
  return c;
}

std::vector<std::pair<std::string, Tensor>> ModelWeights::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding.token", token_embedding);
  out.emplace_back("embedding.position", position_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "transformer.layer." + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.gain", l.ln1_gain);
    out.emplace_back(p + "ln1.bias", l.ln1_bias);
    out.emplace_back(p + "attn.qkv.weight", l.qkv_weight);
    out.emplace_back(p + "attn.qkv.bias", l.qkv_bias);
    out.emplace_back(p + "attn.proj.weight", l.proj_weight);
    out.emplace_back(p + "attn.proj.bias", l.proj_bias);
    out.emplace_back(p + "ln2.gain", l.ln2_gain);
    out.emplace_back(p + "ln2.bias", l.ln2_bias);
    out.emplace_back(p + "mlp.fc.weight", l.fc_weight);
    out.emplace_back(p + "mlp.fc.bias", l.fc_bias);
    out.emplace_back(p + "mlp.proj.weight", l.out_weight);
    out.emplace_back(p + "mlp.proj.bias", l.out_bias);
  }
  out.emplace_back("ln_final.gain", final_gain);
  out.emplace_back("ln_final.bias", final_bias);
  if (!config.tied_embeddings) out.emplace_back("lm_head", lm_head);
  return out;
}

std::vector<std::pair<std::string, Shape>> ModelWeights::expected_shapes() const {
  const auto& c = config;
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embedding.token", Shape{c.vocab_size, d});
  out.emplace_back("embedding.position", Shape{c.max_positions, d});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "transformer.layer." + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.gain", Shape{d});
    out.emplace_back(p + "ln1.bias", Shape{d});
    out.emplace_back(p + "attn.qkv.weight", Shape{d, 3 * d});
    out.emplace_back(p + "attn.qkv.bias", Shape{3 * d});
    out.emplace_back(p + "attn.proj.weight", Shape{d, d});
    out.emplace_back(p + "attn.proj.bias", Shape{d});
    out.emplace_back(p + "ln2.gain", Shape{d});
    out.emplace_back(p + "ln2.bias", Shape{d});
    out.emplace_back(p + "mlp.fc.weight", Shape{d, c.d_ff});
    out.emplace_back(p + "mlp.fc.bias", Shape{c.d_ff});
    out.emplace_back(p + "mlp.proj.weight", Shape{c.d_ff, d});
    out.emplace_back(p + "mlp.proj.bias", Shape{d});
  }
  out.emplace_back("ln_final.gain", Shape{d});
  out.emplace_back("ln_final.bias", Shape{d});
  if (!c.tied_embeddings) out.emplace_back("lm_head", Shape{c.vocab_size, d});
  return out;
}

void ModelWeights::set_trainable(bool trainable) {
  for (auto& [name, t] : named_tensors()) {
    Tensor handle = t;
    handle.set_requires_grad(trainable);
    if (!trainable) handle.drop_grad();
  }
}

void ModelWeights::freeze() {
  set_trainable(false);
  frozen = true;
}

std::uint64_t ModelWeights::hash() const {
  std::uint64_t h = fnv1a64(std::string_view("memcap-weights"));
  for (const auto& [name, t] : named_tensors()) {
    h = fnv1a64(name, h);
    for (auto dim : t.shape()) {
      const std::uint64_t d = dim;
      h = fnv1a64(std::as_bytes(std::span(&d, 1)), h);
    }
    h = fnv1a64(std::as_bytes(t.values()), h);
  }
  return h;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  auto randn = [&](Shape shape) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = normal(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  auto fill = [](std::size_t n, float value) { return Tensor({n}, std::vector<float>(n, value)); };

  const std::size_t d = config.d_model;
  ModelWeights w;
  w.config = config;
  w.token_embedding = randn({config.vocab_size, d});
  w.position_embedding = randn({config.max_positions, d});
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerWeights l;
    l.ln1_gain = fill(d, 1.0f);
    l.ln1_bias = fill(d, 0.0f);
    l.qkv_weight = randn({d, 3 * d});
    l.qkv_bias = fill(3 * d, 0.0f);
    l.proj_weight = randn({d, d});
    l.proj_bias = fill(d, 0.0f);
    l.ln2_gain = fill(d, 1.0f);
    l.ln2_bias = fill(d, 0.0f);
    l.fc_weight = randn({d, config.d_ff});
    l.fc_bias = fill(config.d_ff, 0.0f);
    l.out_weight = randn({config.d_ff, d});
    l.out_bias = fill(d, 0.0f);
    w.layers.push_back(std::move(l));
  }
  w.final_gain = fill(d, 1.0f);
  w.final_bias = fill(d, 0.0f);
  if (!config.tied_embeddings) w.lm_head = randn({config.vocab_size, d});
  return w;
}

Tensor forward(Tape& tape, const ModelWeights& weights, const Tensor* prefix, std::span<const TokenId> tokens,
               std::size_t logits_from) {
  const auto& c = weights.config;
  const std::size_t d = c.d_model;
  if (prefix && prefix->numel() == 0) prefix = nullptr;
  const std::size_t k = prefix ? prefix->rows() : 0;
  if (prefix && (prefix->rank() != 2 || prefix->cols() != d)) {
    throw ShapeError("forward: prefix " + shape_to_string(prefix->shape()) + " must be [K x " + std::to_string(d) +
                     "]");
  }
  const std::size_t total = k + tokens.size();
  if (total == 0) throw ShapeError("forward: empty context");
  if (total > c.max_positions) {
    throw ConfigError("forward: sequence of " + std::to_string(total) + " positions exceeds max_positions " +
                      std::to_string(c.max_positions));
  }
  if (logits_from >= total) throw ShapeError("forward: logits_from past the end of the sequence");

  std::vector<TokenId> positions(total);
  std::iota(positions.begin(), positions.end(), TokenId{0});

  Tensor x;
  Tensor pos;
  if (prefix) {
    x = tokens.empty() ? *prefix : concat_rows(tape, *prefix, gather_rows(tape, weights.token_embedding, tokens));
    if (c.prefix_positions) {
      pos = gather_rows(tape, weights.position_embedding, positions);
    } else {
      Tensor tail = gather_rows(tape, weights.position_embedding, std::span(positions).subspan(k));
      pos = concat_rows(tape, Tensor::zeros({k, d}), tail);
    }
  } else {
    x = gather_rows(tape, weights.token_embedding, tokens);
    pos = gather_rows(tape, weights.position_embedding, positions);
  }
  x = add(tape, x, pos);

  const float eps = c.layernorm_epsilon;
  for (const auto& l : weights.layers) {
    Tensor h = layernorm(tape, x, l.ln1_gain, l.ln1_bias, eps);
    Tensor qkv = add_bias(tape, matmul(tape, h, l.qkv_weight), l.qkv_bias);
    Tensor att = causal_attention(tape, qkv, c.n_heads);
    x = add(tape, x, add_bias(tape, matmul(tape, att, l.proj_weight), l.proj_bias));
    h = layernorm(tape, x, l.ln2_gain, l.ln2_bias, eps);
    Tensor f = gelu(tape, add_bias(tape, matmul(tape, h, l.fc_weight), l.fc_bias));
    x = add(tape, x, add_bias(tape, matmul(tape, f, l.out_weight), l.out_bias));
  }
  if (logits_from > 0) x = slice_rows(tape, x, logits_from, total);
  x = layernorm(tape, x, weights.final_gain, weights.final_bias, eps);
  return matmul(tape, x, weights.output_embedding(), Transpose::kYes);
}

Tensor target_logits(Tape& tape, const ModelWeights& weights, const Tensor* prefix,
                     std::span<const TokenId> tokens) {
  if (prefix && prefix->numel() == 0) prefix = nullptr;
  if (tokens.empty()) return Tensor::zeros({0, weights.config.vocab_size});
  const auto inputs = tokens.first(tokens.size() - 1);
  if (prefix) return forward(tape, weights, prefix, inputs, prefix->rows() - 1);
  if (!weights.config.bos_id) throw ConfigError("forward: no prefix and the model has no BOS token");
  std::vector<TokenId> context;
  context.reserve(tokens.size());
  context.push_back(*weights.config.bos_id);
  context.insert(context.end(), inputs.begin(), inputs.end());
  return forward(tape, weights, nullptr, context, 0);
}

std::vector<TokenId> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.rows();
  const std::size_t n = logits.cols();
  std::vector<TokenId> out(rows);
  auto v = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = v.data() + r * n;
    out[r] = static_cast<TokenId>(std::max_element(row, row + n) - row);
  }
  return out;
}

std::vector<double> row_cross_entropy_bits(const Tensor& logits, std::span<const TokenId> targets) {
  const std::size_t n = logits.cols();
  if (targets.size() != logits.rows()) throw ShapeError("row_cross_entropy_bits: target count mismatch");
  std::vector<double> out(targets.size());
  auto v = logits.values();
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= n) throw ShapeError("row_cross_entropy_bits: target id out of range");
    const float* row = v.data() + r * n;
    const double max = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(static_cast<double>(row[c]) - max);
    out[r] = (max + std::log(total) - row[targets[r]]) / std::numbers::ln2;
  }
  return out;
}

double sequence_cross_entropy(const ModelWeights& weights, const Tensor* prefix, std::span<const TokenId> tokens) {
  if (tokens.empty()) return 0.0;
  Tape tape;
  const Tensor frozen_prefix = prefix ? prefix->clone() : Tensor();
  Tensor logits = target_logits(tape, weights, prefix ? &frozen_prefix : nullptr, tokens);
  const auto rows = row_cross_entropy_bits(logits, tokens);
  return std::max(0.0, std::accumulate(rows.begin(), rows.end(), 0.0));
}

std::size_t teacher_forced_correct(const ModelWeights& weights, const Tensor* prefix,
                                   std::span<const TokenId> tokens) {
  if (tokens.empty()) return 0;
  Tape tape;
  const Tensor frozen_prefix = prefix ? prefix->clone() : Tensor();
  const auto predicted = argmax_rows(target_logits(tape, weights, prefix ? &frozen_prefix : nullptr, tokens));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) correct += predicted[i] == tokens[i];
  return correct;
}

std::vector<TokenId> greedy_decode(const ModelWeights& weights, const Tensor* prefix, std::size_t length) {
  if (prefix && prefix->numel() == 0) prefix = nullptr;
  const std::size_t k = prefix ? prefix->rows() : 1;
  if (length > weights.config.max_positions - std::min(k, weights.config.max_positions)) {
    throw ConfigError("greedy_decode: length " + std::to_string(length) + " exceeds max_positions - K");
  }
  if (!prefix && !weights.config.bos_id) throw ConfigError("greedy_decode: no prefix and no BOS token");
  // Every step runs the same input shape as teacher forcing over `length`
  // targets; not-yet-decoded slots hold a filler token that causal masking
  // hides from earlier rows. Equal shapes keep the arithmetic bit-identical,
  // so a fully teacher-forced-correct prefix decodes its text exactly.
  const TokenId filler = weights.config.bos_id.value_or(0);
  std::vector<TokenId> targets(length, filler);
  for (std::size_t step = 0; step < length; ++step) {
    Tape tape;
    Tensor logits = target_logits(tape, weights, prefix, targets);
    const std::size_t n = logits.cols();
    const float* row = logits.values().data() + step * n;
    targets[step] = static_cast<TokenId>(std::max_element(row, row + n) - row);
  }
  return targets;
}

std::vector<float> next_token_probs(const ModelWeights& weights, std::span<const TokenId> context) {
  if (!weights.config.bos_id) throw ConfigError("next_token_probs: model has no BOS token");
  std::vector<TokenId> full;
  full.reserve(context.size() + 1);
  full.push_back(*weights.config.bos_id);
  full.insert(full.end(), context.begin(), context.end());
  Tape tape;
  Tensor logits = forward(tape, weights, nullptr, full, full.size() - 1);
  Tensor probs = softmax_rows(tape, logits);
  return std::vector<float>(probs.values().begin(), probs.values().end());
}

}  // namespace memcap
