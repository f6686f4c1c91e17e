#pragma once

// Shared fixtures and numerical oracles for the unit tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "memcap/model.hpp"
#include "memcap/tensor.hpp"

namespace memcap::testing {

inline ModelConfig tiny_config(std::size_t layers = 2, std::size_t d = 32, std::size_t vocab = 64) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = d;
  c.n_heads = 4;
  c.d_ff = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 96;
  return c;
}

/// Random-init model whose weights are scaled up so that logits depend
/// visibly on the input (the 0.02 init is close to uniform).
inline ModelWeights tiny_model(std::uint64_t seed = 1, std::size_t layers = 2, std::size_t d = 32,
                               std::size_t vocab = 64, float gain = 5.0f) {
  ModelWeights w = init_model(tiny_config(layers, d, vocab), seed);
  for (auto& [name, t] : w.named_tensors()) {
    if (t.rank() == 2) {
      for (float& v : t.values()) v *= gain;
    }
  }
  w.freeze();
  return w;
}

inline std::vector<float> random_values(std::size_t n, std::mt19937_64& rng, float std = 1.0f) {
  std::normal_distribution<float> dist(0.0f, std);
  std::vector<float> out(n);
  for (float& v : out) v = dist(rng);
  return out;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> dist(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

/// Central difference of f along `direction`, evaluated on a copy of x.
inline double directional_difference(const std::function<double(const std::vector<float>&)>& f,
                                     const std::vector<float>& x, const std::vector<float>& direction, double h) {
  std::vector<float> plus = x, minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] = static_cast<float>(x[i] + h * direction[i]);
    minus[i] = static_cast<float>(x[i] - h * direction[i]);
  }
  return (f(plus) - f(minus)) / (2.0 * h);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

}  // namespace memcap::testing
