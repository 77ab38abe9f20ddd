#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sgprompt/tensor.hpp"

namespace sgprompt {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected first/second moment accumulators for a fixed list of
/// parameter tensors.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Tensor> params);
};

// Applies one update in place. Throws ShapeError when params, grads and the
// accumulators disagree.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace sgprompt
