#pragma once
#include <vector>

#include "helmbench/autodiff.hpp"

namespace helm {

// Bias-corrected ADAM over a fixed parameter list. Moment buffers are
// keyed by list position; the list must stay stable across steps.
struct AdamState {
  struct Slot {
    Tensor4 m, v;
  };
  std::vector<Slot> slots;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long skipped = 0;
};

// Applies one update from the gradients accumulated in the params.
// Non-finite gradients reject the whole step (skip-and-report); a zero
// gradient still advances the step counter.
inline bool adam_step(const std::vector<Param*>& params, AdamState& state, double lr) {
  if (state.slots.empty()) {
    state.slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor4& v = params[i]->value;
      state.slots[i].m = Tensor4(v.n, v.c, v.h, v.w);
      state.slots[i].v = Tensor4(v.n, v.c, v.h, v.w);
    }
  }
  if (state.slots.size() != params.size()) throw std::invalid_argument("adam state size mismatch");
  for (auto* p : params)
    if (p->grad.size() != 0 && !all_finite(p->grad)) {
      ++state.skipped;
      return false;
    }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.grad.size() == 0) continue;
    auto& m = state.slots[i].m.v;
    auto& v = state.slots[i].v.v;
    for (std::size_t j = 0; j < p.value.v.size(); ++j) {
      const double g = p.grad.v[j];
      m[j] = float(state.beta1 * m[j] + (1.0 - state.beta1) * g);
      v[j] = float(state.beta2 * v[j] + (1.0 - state.beta2) * g * g);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value.v[j] -= float(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
  return true;
}

}  // namespace helm
