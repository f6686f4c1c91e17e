#pragma once

// Structure of the space of lossless mem solutions: cosine similarity between
// independently optimized vectors and linear interpolation between them.

#include <span>
#include <string>
#include <vector>

#include "memcap/compressor.hpp"

namespace memcap {

/// R lossless mem states per text, obtained from different initializations.
struct EmbeddingBank {
  std::vector<std::string> text_ids;
  std::vector<std::vector<TokenId>> texts;
  std::vector<std::vector<Tensor>> states;  // [text][restart] -> [K x d]

  void validate() const;
  std::size_t restarts() const { return states.empty() ? 0 : states.front().size(); }
};

/// Cosine of the angle between a and b; throws NumericError on a zero vector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Fixed-width histogram over [lo, hi]; the top edge falls in the last bin.
struct Histogram {
  double lo = -1.0;
  double hi = 1.0;
  double width = 0.05;
  std::vector<std::size_t> counts;

  Histogram();
  Histogram(double lo, double hi, double width);
  void add(double x);
  std::size_t bins() const { return counts.size(); }
  std::size_t total() const;
  double bin_lo(std::size_t i) const { return lo + width * static_cast<double>(i); }
  /// Fraction of values at or above x (bins whose lower edge is >= x).
  double mass_at_or_above(double x) const;
};

struct SimilarityStudy {
  /// Same text, different restarts (flattened K x d states).
  std::vector<double> intra;
  /// Different texts, first restart of each.
  std::vector<double> inter;
  Histogram intra_hist;
  Histogram inter_hist;
  /// Per-vector cosines for intra pairs: (text, restart a, restart b, i, j, cos).
  struct VectorPair {
    std::size_t text, a, b, i, j;
    double cosine;
  };
  std::vector<VectorPair> per_vector;

  double intra_fraction_above(double x) const;
  std::string histogram_csv() const;
};

SimilarityStudy cosine_similarity_study(const EmbeddingBank& bank);

/// Teacher-forced accuracy of (1 - alpha) * a + alpha * b on `tokens`, for each alpha.
std::vector<double> interpolation_sweep(const ModelWeights& model, const Tensor& a, const Tensor& b,
                                        std::span<const TokenId> tokens, std::span<const double> alphas);

/// n evenly spaced points over [0, 1].
std::vector<double> interpolation_grid(std::size_t points = 33);

struct InterpolationStudy {
  std::vector<double> alphas;
  struct Curve {
    std::size_t text, a, b;
    std::vector<double> accuracy;
  };
  std::vector<Curve> curves;
  std::vector<double> min_envelope, max_envelope, mean_envelope;

  /// Lowest accuracy at any interior alpha over all curves.
  double min_interior_accuracy() const;
  std::string csv() const;
};

/// Sweeps every restart pair of every text (or the first `max_pairs_per_text`).
InterpolationStudy interpolation_study(const ModelWeights& model, const EmbeddingBank& bank,
                                       std::span<const double> alphas, std::size_t max_pairs_per_text = 0);

}  // namespace memcap
