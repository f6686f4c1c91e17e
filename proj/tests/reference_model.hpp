#pragma once

// Naive double-precision forward pass of the model, written independently of
// the tape: the oracle for logits and for finite-difference gradients.

#include <cmath>
#include <span>
#include <vector>

#include "memcap/model.hpp"

namespace memcap::testing {

using Matrix = std::vector<std::vector<double>>;

inline double weight(const Tensor& t, std::size_t r, std::size_t c) { return t.values()[r * t.cols() + c]; }

inline Matrix ref_linear(const Matrix& x, const Tensor& w, const Tensor& b) {
  const std::size_t out = w.cols();
  Matrix y(x.size(), std::vector<double>(out));
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t j = 0; j < out; ++j) {
      double s = b.values()[j];
      for (std::size_t i = 0; i < x[t].size(); ++i) s += x[t][i] * weight(w, i, j);
      y[t][j] = s;
    }
  }
  return y;
}

inline Matrix ref_layernorm(const Matrix& x, const Tensor& g, const Tensor& b, double eps) {
  Matrix y = x;
  for (auto& row : y) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = (row[i] - mean) / std::sqrt(var + eps) * g.values()[i] + b.values()[i];
    }
  }
  return y;
}

/// Logits for every position of [prefix; embeddings(tokens)].
inline Matrix reference_forward(const ModelWeights& w, const Matrix& prefix, std::span<const TokenId> tokens) {
  const auto& c = w.config;
  const std::size_t d = c.d_model, heads = c.n_heads, hd = d / heads;
  Matrix x = prefix;
  for (TokenId t : tokens) {
    std::vector<double> row(d);
    for (std::size_t i = 0; i < d; ++i) row[i] = weight(w.token_embedding, t, i);
    x.push_back(row);
  }
  const std::size_t k = prefix.size();
  for (std::size_t p = 0; p < x.size(); ++p) {
    if (p < k && !c.prefix_positions) continue;
    for (std::size_t i = 0; i < d; ++i) x[p][i] += weight(w.position_embedding, p, i);
  }
  const std::size_t n = x.size();
  for (const auto& l : w.layers) {
    Matrix qkv = ref_linear(ref_layernorm(x, l.ln1_gain, l.ln1_bias, c.layernorm_epsilon), l.qkv_weight, l.qkv_bias);
    Matrix att(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> s(t + 1);
        double max = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dotp = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dotp += qkv[t][h * hd + i] * qkv[u][d + h * hd + i];
          s[u] = dotp / std::sqrt(static_cast<double>(hd));
          max = std::max(max, s[u]);
        }
        double z = 0.0;
        for (auto& v : s) z += (v = std::exp(v - max));
        for (std::size_t u = 0; u <= t; ++u) {
          for (std::size_t i = 0; i < hd; ++i) att[t][h * hd + i] += s[u] / z * qkv[u][2 * d + h * hd + i];
        }
      }
    }
    Matrix proj = ref_linear(att, l.proj_weight, l.proj_bias);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < d; ++i) x[t][i] += proj[t][i];
    }
    Matrix f = ref_linear(ref_layernorm(x, l.ln2_gain, l.ln2_bias, c.layernorm_epsilon), l.fc_weight, l.fc_bias);
    for (auto& row : f) {
      for (double& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
    }
    Matrix o = ref_linear(f, l.out_weight, l.out_bias);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[t][i];
    }
  }
  x = ref_layernorm(x, w.final_gain, w.final_bias, c.layernorm_epsilon);
  const Tensor& out = w.output_embedding();
  Matrix logits(n, std::vector<double>(c.vocab_size));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += x[t][i] * weight(out, v, i);
      logits[t][v] = s;
    }
  }
  return logits;
}

/// Teacher-forced cross-entropy in bits of tokens after a K-row prefix.
inline double reference_mem_loss(const ModelWeights& w, std::span<const double> mem, std::span<const TokenId> tokens) {
  const std::size_t d = w.config.d_model, k = mem.size() / d;
  Matrix prefix(k, std::vector<double>(d));
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < d; ++i) prefix[r][i] = mem[r * d + i];
  }
  const Matrix logits = reference_forward(w, prefix, tokens.first(tokens.size() - 1));
  double total = 0.0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto& row = logits[k - 1 + j];
    double max = -1e300, z = 0.0;
    for (double v : row) max = std::max(max, v);
    for (double v : row) z += std::exp(v - max);
    total += (max + std::log(z) - row[tokens[j]]) / std::log(2.0);
  }
  return total;
}

}  // namespace memcap::testing
