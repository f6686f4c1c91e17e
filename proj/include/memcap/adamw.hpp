#pragma once

#include <cstdint>
#include <span>

namespace memcap {

struct AdamWParams {
  float learning_rate = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.9f;
  float weight_decay = 0.01f;
  float epsilon = 1e-8f;
};

/// One AdamW update in place. `step` is the 1-based index of this update and
/// drives bias correction. Weight decay is decoupled: the parameter is scaled
/// by (1 - lr * wd) before the Adam step, and epsilon is added to sqrt(v_hat).
/// Throws NumericError if the gradient holds NaN/Inf.
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> first_moment,
                  std::span<float> second_moment, std::uint64_t step, const AdamWParams& params);

}  // namespace memcap
