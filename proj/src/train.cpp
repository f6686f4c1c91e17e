#include "memcap/train.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "memcap/adamw.hpp"

namespace memcap {

void TrainConfig::validate() const {
  if (steps == 0 || batch_size == 0 || context < 2) {
    throw ConfigError("train: steps and batch size must be positive, context at least 2");
  }
  if (!(learning_rate > 0.0f)) throw ConfigError("train: learning rate must be positive");
  if (min_lr_ratio < 0.0f || min_lr_ratio > 1.0f) throw ConfigError("train: min_lr_ratio must lie in [0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"context", context},
          {"learning_rate", learning_rate},
          {"min_lr_ratio", min_lr_ratio},
          {"warmup_steps", warmup_steps},
          {"beta1", beta1},
          {"beta2", beta2},
          {"weight_decay", weight_decay},
          {"grad_clip", grad_clip},
          {"log_every", log_every},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.context = j.value("context", c.context);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.log_every = j.value("log_every", c.log_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

float train_learning_rate(const TrainConfig& config, std::size_t step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<float>(step + 1) / static_cast<float>(config.warmup_steps);
  }
  const std::size_t span = config.steps > config.warmup_steps ? config.steps - config.warmup_steps : 1;
  const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / static_cast<double>(span));
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return config.learning_rate * static_cast<float>(config.min_lr_ratio + (1.0 - config.min_lr_ratio) * cosine);
}

TrainResult train_lm(const ModelConfig& model_config, std::span<const TokenId> corpus, const TrainConfig& config,
                     const std::function<void(const LossPoint&)>& on_log) {
  model_config.validate();
  config.validate();
  if (!model_config.bos_id) throw ConfigError("train: the model needs a BOS token");
  if (config.context > model_config.max_positions) {
    throw ConfigError("train: context " + std::to_string(config.context) + " exceeds max_positions");
  }
  if (corpus.size() < config.context) {
    throw ConfigError("train: corpus has " + std::to_string(corpus.size()) + " tokens, fewer than one window of " +
                      std::to_string(config.context));
  }
  for (TokenId t : corpus) {
    if (t >= model_config.vocab_size) throw ConfigError("train: corpus token id outside the vocabulary");
  }

  TrainResult result;
  result.weights = init_model(model_config, config.seed);
  result.uniform_bits_per_token = std::log2(static_cast<double>(model_config.vocab_size));
  auto params = result.weights.named_tensors();
  result.weights.set_trainable(true);
  std::vector<std::vector<float>> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].second.numel(), 0.0f);
    v[i].assign(params[i].second.numel(), 0.0f);
  }

  std::mt19937_64 rng(config.seed ^ 0x7472'6169'6e00'0000ULL);
  std::uniform_int_distribution<std::size_t> start_dist(0, corpus.size() - config.context);
  const float inv_tokens = 1.0f / static_cast<float>(config.batch_size * config.context);

  for (std::size_t step = 0; step < config.steps; ++step) {
    double batch_bits = 0.0;
    for (auto& [name, t] : params) t.zero_grad();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto window = corpus.subspan(start_dist(rng), config.context);
      Tape tape;
      Tensor logits = target_logits(tape, result.weights, nullptr, window);
      Tensor loss = cross_entropy_bits(tape, logits, window);
      batch_bits += loss.item();
      tape.backward(scale(tape, loss, inv_tokens));
    }
    double norm = 0.0;
    for (auto& [name, t] : params) {
      for (float g : t.grad()) norm += static_cast<double>(g) * g;
    }
    norm = std::sqrt(norm);
    const float clip = config.grad_clip > 0.0f && norm > config.grad_clip
                           ? static_cast<float>(config.grad_clip / norm)
                           : 1.0f;
    AdamWParams hp{train_learning_rate(config, step), config.beta1, config.beta2, config.weight_decay, 1e-8f};
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = params[i].second;
      auto g = t.grad();
      if (clip != 1.0f) {
        for (auto& x : g) x *= clip;
      }
      // Gains and biases are not decayed.
      AdamWParams p = hp;
      if (t.rank() == 1) p.weight_decay = 0.0f;
      adamw_update(t.values(), g, m[i], v[i], step + 1, p);
    }
    const double bpt = batch_bits / static_cast<double>(config.batch_size * config.context);
    if ((config.log_every > 0 && step % config.log_every == 0) || step + 1 == config.steps) {
      result.curve.push_back({step, bpt});
      if (on_log) on_log(result.curve.back());
    }
  }
  result.weights.freeze();
  return result;
}

double evaluate_bits_per_token(const ModelWeights& weights, std::span<const TokenId> tokens, std::size_t context) {
  if (context == 0) throw ConfigError("evaluate: context must be positive");
  double bits = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < tokens.size(); begin += context) {
    const auto window = tokens.subspan(begin, std::min(context, tokens.size() - begin));
    bits += sequence_cross_entropy(weights, nullptr, window);
    count += window.size();
  }
  return count ? bits / static_cast<double>(count) : 0.0;
}

}  // namespace memcap
