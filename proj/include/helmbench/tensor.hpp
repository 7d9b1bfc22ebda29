#pragma once
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "helmbench/grid.hpp"
#include "helmbench/rng.hpp"

namespace helm {

// Dense NCHW float tensor; the only array type the network side uses.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), v(std::size_t(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return std::size_t(h) * w; }
  std::size_t slab() const { return std::size_t(c) * h * w; }

  float& at(int b, int ch, int y, int x) {
    return v[((std::size_t(b) * c + ch) * h + y) * w + x];
  }
  float at(int b, int ch, int y, int x) const {
    return v[((std::size_t(b) * c + ch) * h + y) * w + x];
  }

  float* batch_ptr(int b) { return v.data() + std::size_t(b) * slab(); }
  const float* batch_ptr(int b) const { return v.data() + std::size_t(b) * slab(); }

  bool same_dims(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string dims_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

inline bool all_finite(const Tensor4& t) {
  for (float x : t.v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void fill_normal(Tensor4& t, Rng& rng, float stddev = 1.0f) {
  for (auto& x : t.v) x = float(rng.normal()) * stddev;
}

inline void fill_uniform(Tensor4& t, Rng& rng, float lo, float hi) {
  for (auto& x : t.v) x = float(rng.uniform(double(lo), double(hi)));
}

// Stack (Re r_hat, Im r_hat, kappa^2, gamma) as the 4 network input channels.
inline Tensor4 make_network_input(const ComplexField& r_hat, const RealField& kappa2,
                                  const RealField& gamma) {
  const int n = r_hat.nx, m = r_hat.ny;
  Tensor4 t(1, 4, m, n);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < n; ++x) {
      t.at(0, 0, y, x) = float(r_hat.at(x, y).real());
      t.at(0, 1, y, x) = float(r_hat.at(x, y).imag());
      t.at(0, 2, y, x) = float(kappa2.at(x, y));
      t.at(0, 3, y, x) = float(gamma.at(x, y));
    }
  return t;
}

inline ComplexField complex_from_channels(const Tensor4& t, int b = 0) {
  ComplexField f(t.w, t.h);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) f.at(x, y) = Complex(t.at(b, 0, y, x), t.at(b, 1, y, x));
  return f;
}

inline Tensor4 tile_batch(const Tensor4& t, int batch) {
  if (t.n != 1) throw std::invalid_argument("tile_batch expects a single-item tensor");
  Tensor4 out(batch, t.c, t.h, t.w);
  for (int b = 0; b < batch; ++b)
    std::copy(t.v.begin(), t.v.end(), out.v.begin() + std::size_t(b) * t.slab());
  return out;
}

}  // namespace helm
