#pragma once
#include <functional>

#include "helmbench/autodiff.hpp"

namespace helm {

// Compares the reverse-mode gradient of a scalar-valued fragment against
// central finite differences along random unit directions. loss_fn(true)
// must run forward + backward, accumulating into the params' grad
// buffers; loss_fn(false) runs forward only. Returns the median relative
// error over the directions: a genuine gradient defect projects onto
// almost every direction, while one small-signal draw cannot poison the
// median.
inline double gradient_check(const std::vector<Param*>& params,
                             const std::function<double(bool)>& loss_fn, Rng& rng,
                             float step = 1e-3f, int directions = 3) {
  for (auto* p : params) {
    if (p->grad.size() == 0) p->grad = Tensor4(p->value.n, p->value.c, p->value.h, p->value.w);
    p->zero_grad();
  }
  loss_fn(true);
  std::vector<std::vector<float>> grads;
  grads.reserve(params.size());
  for (auto* p : params) grads.push_back(p->grad.v);

  std::vector<double> errs;
  for (int d = 0; d < directions; ++d) {
    std::vector<std::vector<float>> dir(params.size());
    double nrm2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      dir[i].resize(params[i]->value.size());
      for (auto& x : dir[i]) {
        x = float(rng.normal());
        nrm2 += double(x) * x;
      }
    }
    const float inv = float(1.0 / std::sqrt(nrm2));
    double analytic = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < dir[i].size(); ++j) {
        dir[i][j] *= inv;
        analytic += double(grads[i][j]) * dir[i][j];
      }
    auto shift = [&](float scale) {
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < dir[i].size(); ++j)
          params[i]->value.v[j] += scale * dir[i][j];
    };
    shift(step);
    const double lp = loss_fn(false);
    shift(-2.0f * step);
    const double lm = loss_fn(false);
    shift(step);
    const double fd = (lp - lm) / (2.0 * double(step));
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    errs.push_back(std::abs(fd - analytic) / denom);
  }
  std::sort(errs.begin(), errs.end());
  return errs[errs.size() / 2];
}

}  // namespace helm
