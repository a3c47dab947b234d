#include "omni/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace omni::numerics {

AdamState AdamState::init(const std::vector<Tensor*>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    const Tensor& g = grads[t];
    if (!p.same_shape(g) || !p.same_shape(state.m[t])) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(t));
    }
    Tensor& m = state.m[t];
    Tensor& v = state.v[t];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g.at(i) + cfg.weight_decay * p.at(i);
      m.at(i) = cfg.beta1 * m.at(i) + (1.0 - cfg.beta1) * gi;
      v.at(i) = cfg.beta2 * v.at(i) + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.at(i) / bc1;
      const double vhat = v.at(i) / bc2;
      p.at(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace omni::numerics
