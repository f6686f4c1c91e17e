#include "memcap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace memcap {

void EmbeddingBank::validate() const {
  if (texts.size() != states.size() || text_ids.size() != texts.size()) {
    throw ShapeError("embedding bank: texts, ids and states differ in count");
  }
  if (states.empty()) throw ConfigError("embedding bank: no texts");
  const std::size_t r = states.front().size();
  if (r == 0) throw ConfigError("embedding bank: no restarts");
  const Shape shape = states.front().front().shape();
  for (const auto& per_text : states) {
    if (per_text.size() != r) throw ShapeError("embedding bank: restart count differs between texts");
    for (const auto& s : per_text) {
      if (s.shape() != shape) throw ShapeError("embedding bank: state shapes differ");
    }
  }
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: vector lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero vector");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

Histogram::Histogram() : Histogram(-1.0, 1.0, 0.05) {}

Histogram::Histogram(double lo_, double hi_, double width_) : lo(lo_), hi(hi_), width(width_) {
  if (!(hi > lo) || !(width > 0.0)) throw ConfigError("histogram: need hi > lo and positive width");
  counts.assign(static_cast<std::size_t>(std::llround((hi - lo) / width)), 0);
}

void Histogram::add(double x) {
  if (!(x >= lo && x <= hi)) throw ConfigError("histogram: value outside range");
  auto i = static_cast<std::size_t>(std::floor((x - lo) / width + 1e-9));
  counts[std::min(i, counts.size() - 1)]++;
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

double Histogram::mass_at_or_above(double x) const {
  const std::size_t t = total();
  if (t == 0) return 0.0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (bin_lo(i) >= x - 1e-9) above += counts[i];
  }
  return static_cast<double>(above) / static_cast<double>(t);
}

double SimilarityStudy::intra_fraction_above(double x) const {
  if (intra.empty()) return 0.0;
  const auto n = std::count_if(intra.begin(), intra.end(), [x](double c) { return c > x; });
  return static_cast<double>(n) / static_cast<double>(intra.size());
}

std::string SimilarityStudy::histogram_csv() const {
  std::ostringstream out;
  out << "bin_lo,bin_hi,intra,inter\n";
  for (std::size_t i = 0; i < intra_hist.bins(); ++i) {
    out << intra_hist.bin_lo(i) << ',' << intra_hist.bin_lo(i) + intra_hist.width << ',' << intra_hist.counts[i]
        << ',' << inter_hist.counts[i] << '\n';
  }
  return out.str();
}

SimilarityStudy cosine_similarity_study(const EmbeddingBank& bank) {
  bank.validate();
  if (bank.restarts() < 2) throw ConfigError("similarity study: needs at least 2 restarts per text");
  SimilarityStudy s;
  const std::size_t r = bank.restarts();
  const std::size_t k = bank.states.front().front().rows();
  const std::size_t d = bank.states.front().front().cols();
  for (std::size_t t = 0; t < bank.states.size(); ++t) {
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t b = a + 1; b < r; ++b) {
        const auto& x = bank.states[t][a];
        const auto& y = bank.states[t][b];
        const double c = cosine_similarity(x.values(), y.values());
        s.intra.push_back(c);
        s.intra_hist.add(c);
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            s.per_vector.push_back({t, a, b, i, j,
                                    cosine_similarity(x.values().subspan(i * d, d), y.values().subspan(j * d, d))});
          }
        }
      }
    }
  }
  for (std::size_t t = 0; t < bank.states.size(); ++t) {
    for (std::size_t u = t + 1; u < bank.states.size(); ++u) {
      const double c = cosine_similarity(bank.states[t][0].values(), bank.states[u][0].values());
      s.inter.push_back(c);
      s.inter_hist.add(c);
    }
  }
  return s;
}

std::vector<double> interpolation_grid(std::size_t points) {
  if (points < 2) throw ConfigError("interpolation grid needs at least 2 points");
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) out[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return out;
}

std::vector<double> interpolation_sweep(const ModelWeights& model, const Tensor& a, const Tensor& b,
                                        std::span<const TokenId> tokens, std::span<const double> alphas) {
  if (a.shape() != b.shape()) throw ShapeError("interpolation: endpoint shapes differ");
  std::vector<double> out;
  out.reserve(alphas.size());
  std::vector<float> mix(a.numel());
  for (double alpha : alphas) {
    // Endpoints are reproduced exactly rather than through 1*x + 0*y rounding.
    if (alpha == 0.0) {
      std::copy(a.values().begin(), a.values().end(), mix.begin());
    } else if (alpha == 1.0) {
      std::copy(b.values().begin(), b.values().end(), mix.begin());
    } else {
      for (std::size_t i = 0; i < mix.size(); ++i) {
        mix[i] = static_cast<float>((1.0 - alpha) * a.values()[i] + alpha * b.values()[i]);
      }
    }
    const Tensor prefix(a.shape(), mix);
    out.push_back(teacher_forced_accuracy(model, &prefix, tokens));
  }
  return out;
}

double InterpolationStudy::min_interior_accuracy() const {
  double m = 1.0;
  for (const auto& c : curves) {
    for (std::size_t i = 1; i + 1 < c.accuracy.size(); ++i) m = std::min(m, c.accuracy[i]);
  }
  return m;
}

std::string InterpolationStudy::csv() const {
  std::ostringstream out;
  out << "alpha,min,mean,max\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    out << alphas[i] << ',' << min_envelope[i] << ',' << mean_envelope[i] << ',' << max_envelope[i] << '\n';
  }
  return out.str();
}

InterpolationStudy interpolation_study(const ModelWeights& model, const EmbeddingBank& bank,
                                       std::span<const double> alphas, std::size_t max_pairs_per_text) {
  bank.validate();
  InterpolationStudy s;
  s.alphas.assign(alphas.begin(), alphas.end());
  s.min_envelope.assign(alphas.size(), 1.0);
  s.max_envelope.assign(alphas.size(), 0.0);
  s.mean_envelope.assign(alphas.size(), 0.0);
  const std::size_t r = bank.restarts();
  for (std::size_t t = 0; t < bank.states.size(); ++t) {
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t b = a + 1; b < r; ++b) {
        if (max_pairs_per_text && pairs++ >= max_pairs_per_text) break;
        InterpolationStudy::Curve c{t, a, b,
                                    interpolation_sweep(model, bank.states[t][a], bank.states[t][b], bank.texts[t],
                                                        alphas)};
        for (std::size_t i = 0; i < alphas.size(); ++i) {
          s.min_envelope[i] = std::min(s.min_envelope[i], c.accuracy[i]);
          s.max_envelope[i] = std::max(s.max_envelope[i], c.accuracy[i]);
          s.mean_envelope[i] += c.accuracy[i];
        }
        s.curves.push_back(std::move(c));
      }
    }
  }
  if (!s.curves.empty()) {
    for (auto& m : s.mean_envelope) m /= static_cast<double>(s.curves.size());
  }
  return s;
}

}  // namespace memcap
