#include "memcap/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Core>

namespace memcap {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " does not match buffer of " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

std::size_t Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.empty()) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->values[0];
}

std::span<float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values, false); }

void Tape::record(const Tensor& output, Backward backward) {
  entries_.push_back({output, std::move(backward)});
}

bool Tape::contains(const Tensor& t) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.output.id() == t.id(); });
}

void Tape::backward(const Tensor& loss) {
  if (entries_.empty()) return;
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  std::size_t end = entries_.size();
  while (end > 0 && entries_[end - 1].output.id() != loss.id()) --end;
  if (end == 0) throw Error("backward: loss tensor was not recorded on this tape");
  Tensor seed = loss;
  seed.grad()[0] += 1.0f;
  for (std::size_t i = end; i-- > 0;) entries_[i].backward();
}

void check_finite(std::span<const float> values, const char* op) {
  // Exponent bits all set means Inf or NaN; branch-free so it vectorizes.
  std::uint32_t bad = 0;
  for (float v : values) bad |= (std::bit_cast<std::uint32_t>(v) & 0x7f800000u) == 0x7f800000u;
  if (bad) throw NumericError(std::string(op) + ": non-finite value produced");
}

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

using MatrixMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, Transpose tb) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const bool bt = tb == Transpose::kYes;
  const Eigen::Index m = static_cast<Eigen::Index>(a.shape()[0]);
  const Eigen::Index k = static_cast<Eigen::Index>(a.shape()[1]);
  const Eigen::Index bk = static_cast<Eigen::Index>(bt ? b.shape()[1] : b.shape()[0]);
  const Eigen::Index n = static_cast<Eigen::Index>(bt ? b.shape()[0] : b.shape()[1]);
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                     (bt ? " x transpose of " : " x ") + shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
  if (m > 0 && n > 0 && k > 0) {
    ConstMatrixMap av(a.values().data(), m, k);
    MatrixMap ov(out.values().data(), m, n);
    if (bt) {
      ov.noalias() = av * ConstMatrixMap(b.values().data(), n, k).transpose();
    } else {
      ov.noalias() = av * ConstMatrixMap(b.values().data(), k, n);
    }
  }
  check_finite(out.values(), "matmul");
  if (any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out, m, n, k, bt]() {
      ConstMatrixMap dc(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MatrixMap da(a.grad().data(), m, k);
        if (bt) {
          da.noalias() += dc * ConstMatrixMap(b.values().data(), n, k);
        } else {
          da.noalias() += dc * ConstMatrixMap(b.values().data(), k, n).transpose();
        }
      }
      if (b.requires_grad()) {
        ConstMatrixMap av(a.values().data(), m, k);
        if (bt) {
          MatrixMap(b.grad().data(), n, k).noalias() += dc.transpose() * av;
        } else {
          MatrixMap(b.grad().data(), k, n).noalias() += av.transpose() * dc;
        }
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(ov, "add");
  if (any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto tg = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
      }
    });
  }
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (bias.numel() != d) {
    throw ShapeError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match last dimension of " +
                     shape_to_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t r = 0, rows = x.rows(); r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) ov[r * d + c] = xv[r * d + c] + bv[c];
  }
  check_finite(ov, "add_bias");
  if (any_requires_grad({&x, &bias})) {
    out.set_requires_grad(true);
    tape.record(out, [x, bias, out, d]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto bg = bias.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i % d] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(ov, "mul");
  if (any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        auto av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, float factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  check_finite(ov, "scale");
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, out, factor]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out.values(), "sum");
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, float epsilon) {
  const std::size_t d = x.cols();
  const std::size_t rows = x.rows();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layernorm: gain/bias " + shape_to_string(gain.shape()) + "/" +
                     shape_to_string(bias.shape()) + " do not match last dimension of " +
                     shape_to_string(x.shape()));
  }
  if (!(epsilon > 0.0f)) throw ShapeError("layernorm: epsilon must be positive");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> normalized(x.numel());
  std::vector<float> inv_std(rows);
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = row[c] - mean;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = static_cast<float>(inv);
    for (std::size_t c = 0; c < d; ++c) {
      const float n = static_cast<float>((row[c] - mean) * inv);
      normalized[r * d + c] = n;
      ov[r * d + c] = n * gv[c] + bv[c];
    }
  }
  check_finite(ov, "layernorm");
  if (any_requires_grad({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape.record(out, [x, gain, bias, out, d, rows, normalized = std::move(normalized),
                      inv_std = std::move(inv_std)]() mutable {
      auto g = out.grad();
      auto gv = gain.values();
      if (gain.requires_grad() || bias.requires_grad()) {
        std::vector<double> dg(d, 0.0), db(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            dg[c] += static_cast<double>(g[r * d + c]) * normalized[r * d + c];
            db[c] += g[r * d + c];
          }
        }
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (std::size_t c = 0; c < d; ++c) gg[c] += static_cast<float>(dg[c]);
        }
        if (bias.requires_grad()) {
          auto bg = bias.grad();
          for (std::size_t c = 0; c < d; ++c) bg[c] += static_cast<float>(db[c]);
        }
      }
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dn = 0.0, mean_dn_n = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dn = static_cast<double>(g[r * d + c]) * gv[c];
            mean_dn += dn;
            mean_dn_n += dn * normalized[r * d + c];
          }
          mean_dn /= static_cast<double>(d);
          mean_dn_n /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const double dn = static_cast<double>(g[r * d + c]) * gv[c];
            xg[r * d + c] +=
                static_cast<float>(inv_std[r] * (dn - mean_dn - normalized[r * d + c] * mean_dn_n));
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Softmax of one row into `dst`; returns log-sum-exp.
double softmax_row(const float* src, float* dst, std::size_t n) {
  float max = src[0];
  for (std::size_t i = 1; i < n; ++i) max = std::max(max, src[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float e = std::exp(src[i] - max);
    dst[i] = e;
    total += e;
  }
  const float inv = static_cast<float>(1.0 / total);
  for (std::size_t i = 0; i < n; ++i) dst[i] *= inv;
  return static_cast<double>(max) + std::log(total);
}

}  // namespace

Tensor softmax_rows(Tape& tape, const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.rows();
  Tensor out = Tensor::zeros(x.shape());
  if (n > 0) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(x.values().data() + r * n, out.values().data() + r * n, n);
  }
  check_finite(out.values(), "softmax_rows");
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, out, n, rows]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto xg = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += static_cast<double>(g[r * n + c]) * y[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          xg[r * n + c] += static_cast<float>(y[r * n + c] * (g[r * n + c] - dot));
        }
      }
    });
  }
  return out;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  static constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  static constexpr float kA = 0.044715f;
  const auto n = static_cast<Eigen::Index>(x.numel());
  Eigen::Map<const Eigen::ArrayXf> xv(x.values().data(), n);
  // tanh values are kept for the backward pass.
  auto t = std::make_shared<Eigen::ArrayXf>((kC * (xv + kA * xv.cube())).tanh());
  std::vector<float> values(x.numel());
  Eigen::Map<Eigen::ArrayXf>(values.data(), n) = 0.5f * xv * (1.0f + *t);
  Tensor out(x.shape(), std::move(values));
  check_finite(out.values(), "gelu");
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, out, t, n]() {
      Eigen::Map<const Eigen::ArrayXf> g(out.grad().data(), n);
      Eigen::Map<const Eigen::ArrayXf> xv(x.values().data(), n);
      Eigen::Map<Eigen::ArrayXf> xg(x.grad().data(), n);
      const auto dt = (1.0f - t->square()) * kC * (1.0f + 3.0f * kA * xv.square());
      xg += g * (0.5f * (1.0f + *t) + 0.5f * xv * dt);
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t d = table.cols();
  const std::size_t vocab = table.shape()[0];
  Tensor out = Tensor::zeros({ids.size(), d});
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[i]) + " out of range for table " +
                       shape_to_string(table.shape()));
    }
    std::copy_n(tv.data() + ids[i] * d, d, ov.data() + i * d);
  }
  if (table.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [table, out, d, ids = std::vector<TokenId>(ids.begin(), ids.end())]() mutable {
      auto g = out.grad();
      auto tg = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) tg[ids[i] * d + c] += g[i * d + c];
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin > end || end > x.shape()[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_to_string(x.shape()));
  }
  const std::size_t d = x.cols();
  Tensor out(Shape{end - begin, d},
             std::vector<float>(x.values().begin() + begin * d, x.values().begin() + end * d));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [x, out, begin, d]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[begin * d + i] += g[i];
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_rows");
  require_matrix(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<float> values(a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  Tensor out(Shape{a.shape()[0] + b.shape()[0], a.cols()}, std::move(values));
  if (any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      const std::size_t split = a.numel();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < split; ++i) ag[i] += g[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += g[split + i];
      }
    });
  }
  return out;
}

Tensor causal_attention(Tape& tape, const Tensor& qkv, std::size_t n_heads) {
  require_matrix(qkv, "causal_attention");
  const std::size_t seq = qkv.shape()[0];
  const std::size_t width = qkv.cols();
  if (n_heads == 0 || width % (3 * n_heads) != 0) {
    throw ShapeError("causal_attention: packed width " + std::to_string(width) + " not divisible into 3 x " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t d = width / 3;
  const std::size_t dh = d / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  const auto t = static_cast<Eigen::Index>(seq);
  const auto hd = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(width));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
  auto head = [&](const float* base, std::size_t offset) { return ConstStridedMap(base + offset, t, hd, in_stride); };

  // probs[h] is a seq x seq row-major block; entries above the diagonal stay 0.
  std::vector<float> probs(n_heads * seq * seq, 0.0f);
  Tensor out = Tensor::zeros({seq, d});
  const float* in = qkv.values().data();
  RowMatrix scores(t, t);
  for (std::size_t h = 0; h < n_heads; ++h) {
    scores.noalias() = head(in, h * dh) * head(in, d + h * dh).transpose();
    MatrixMap p(probs.data() + h * seq * seq, t, t);
    for (Eigen::Index r = 0; r < t; ++r) {
      float max = -std::numeric_limits<float>::infinity();
      for (Eigen::Index u = 0; u <= r; ++u) max = std::max(max, scores(r, u) * inv_sqrt);
      double total = 0.0;
      for (Eigen::Index u = 0; u <= r; ++u) {
        const float e = std::exp(scores(r, u) * inv_sqrt - max);
        p(r, u) = e;
        total += e;
      }
      const auto inv_total = static_cast<float>(1.0 / total);
      for (Eigen::Index u = 0; u <= r; ++u) p(r, u) *= inv_total;
    }
    StridedMap(out.values().data() + h * dh, t, hd, out_stride).noalias() = p * head(in, 2 * d + h * dh);
  }
  check_finite(out.values(), "causal_attention");
  if (qkv.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [qkv, out, seq, width, d, dh, n_heads, inv_sqrt, probs = std::move(probs)]() {
      const auto t = static_cast<Eigen::Index>(seq);
      const auto hd = static_cast<Eigen::Index>(dh);
      const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(width));
      const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
      const float* in = qkv.values().data();
      float* ig = qkv.grad().data();
      const float* g = out.grad().data();
      RowMatrix dp(t, t);
      for (std::size_t h = 0; h < n_heads; ++h) {
        ConstMatrixMap p(probs.data() + h * seq * seq, t, t);
        ConstStridedMap dy(g + h * dh, t, hd, out_stride);
        ConstStridedMap q(in + h * dh, t, hd, in_stride);
        ConstStridedMap k(in + d + h * dh, t, hd, in_stride);
        ConstStridedMap v(in + 2 * d + h * dh, t, hd, in_stride);
        StridedMap(ig + 2 * d + h * dh, t, hd, in_stride).noalias() += p.transpose() * dy;
        dp.noalias() = dy * v.transpose();
        // Softmax backward row by row: ds = p * (dp - <dp, p>), scaled.
        for (Eigen::Index r = 0; r < t; ++r) {
          double weighted = 0.0;
          for (Eigen::Index u = 0; u <= r; ++u) weighted += static_cast<double>(dp(r, u)) * p(r, u);
          for (Eigen::Index u = 0; u <= r; ++u) {
            dp(r, u) = static_cast<float>(p(r, u) * (dp(r, u) - weighted)) * inv_sqrt;
          }
          for (Eigen::Index u = r + 1; u < t; ++u) dp(r, u) = 0.0f;
        }
        StridedMap(ig + h * dh, t, hd, in_stride).noalias() += dp * k;
        StridedMap(ig + d + h * dh, t, hd, in_stride).noalias() += dp.transpose() * q;
      }
    });
  }
  return out;
}

Tensor cross_entropy_bits(Tape& tape, const Tensor& logits, std::span<const TokenId> targets) {
  require_matrix(logits, "cross_entropy_bits");
  const std::size_t rows = logits.shape()[0];
  const std::size_t vocab = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_bits: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_to_string(logits.shape()));
  }
  for (auto t : targets) {
    if (t >= vocab) {
      throw ShapeError("cross_entropy_bits: target id " + std::to_string(t) + " out of range for vocabulary of " +
                       std::to_string(vocab));
    }
  }
  std::vector<float> probs(logits.numel());
  double nats = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.values().data() + r * vocab;
    const double lse = softmax_row(row, probs.data() + r * vocab, vocab);
    nats += lse - row[targets[r]];
  }
  const double bits = std::max(0.0, nats / std::numbers::ln2);
  Tensor out = Tensor::scalar(static_cast<float>(bits));
  check_finite(out.values(), "cross_entropy_bits");
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    tape.record(out, [logits, out, vocab, probs = std::move(probs),
                      targets = std::vector<TokenId>(targets.begin(), targets.end())]() mutable {
      const float g = out.grad()[0] / static_cast<float>(std::numbers::ln2);
      auto lg = logits.grad();
      for (std::size_t r = 0; r < targets.size(); ++r) {
        for (std::size_t c = 0; c < vocab; ++c) lg[r * vocab + c] += g * probs[r * vocab + c];
        lg[r * vocab + targets[r]] -= g;
      }
    });
  }
  return out;
}

}  // namespace memcap
