#pragma once

// Dense float32 tensors and a reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same buffer, which is what
// lets backward closures write adjoints into the tensors they captured.
// Every op takes the Tape it records on. An op records only when at least one
// input requires a gradient, so forward passes over frozen weights with no
// trainable input leave the tape empty.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "memcap/error.hpp"

namespace memcap {

using Shape = std::vector<std::size_t>;
using TokenId = std::uint32_t;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->values.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  /// Product of all dimensions but the last.
  std::size_t rows() const;
  /// Size of the last dimension.
  std::size_t cols() const;

  std::span<float> values() { return impl_->values; }
  std::span<const float> values() const { return impl_->values; }
  float item() const;
  float at(std::size_t row, std::size_t col) const { return impl_->values[row * cols() + col]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated zero-filled on first access.
  /// Handle semantics: a const Tensor still shares a writable gradient.
  std::span<float> grad() const;
  void zero_grad();
  void drop_grad() { impl_->grad = {}; }

  /// Deep copy of values; the copy never requires grad.
  Tensor clone() const;

  /// Identity of the underlying buffer.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(const Tensor& output, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and replays recorded adjoints in reverse order.
  /// Gradients accumulate into every tensor that requires grad. A no-op on an
  /// empty tape; throws if `loss` was not produced by an op on this tape.
  void backward(const Tensor& loss);

  bool contains(const Tensor& t) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor output;
    Backward backward;
  };
  std::vector<Entry> entries_;
};

enum class Transpose { kNo, kYes };

// Matrix product a[m×k] · b[k×n]. With `tb == kYes`, b is given as [n×k] and
// used transposed.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, Transpose tb = Transpose::kNo);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
/// x[...×d] + bias[d], broadcast over all leading dimensions.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, float factor);
/// Sum of all entries as a scalar tensor.
Tensor sum(Tape& tape, const Tensor& x);

Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, float epsilon);
Tensor softmax_rows(Tape& tape, const Tensor& x);
/// tanh-approximated GELU, as in GPT-2.
Tensor gelu(Tape& tape, const Tensor& x);

/// Rows `ids` of table[V×d] stacked into [n×d].
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const TokenId> ids);
/// Rows [begin, end) of table.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
/// a[m×d] stacked over b[n×d].
Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b);

/// Multi-head causal self-attention over a packed projection qkv[T×3d].
/// Row t attends to rows 0..t. Returns [T×d].
Tensor causal_attention(Tape& tape, const Tensor& qkv, std::size_t n_heads);

/// Total (summed) cross-entropy in bits of `targets` under softmax(logits).
Tensor cross_entropy_bits(Tape& tape, const Tensor& logits, std::span<const TokenId> targets);

/// Throws NumericError naming `op` if any value is NaN or infinite.
void check_finite(std::span<const float> values, const char* op);

}  // namespace memcap
