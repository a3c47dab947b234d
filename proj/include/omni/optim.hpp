#pragma once

#include <cstdint>
#include <vector>

#include "omni/tensor.hpp"

namespace omni::numerics {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // l2 term folded into the gradient
};

// First/second moment accumulators, one per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamState init(const std::vector<Tensor*>& params);
};

// Bias-corrected Adam with the l2 penalty applied as grad + wd * param.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace omni::numerics
