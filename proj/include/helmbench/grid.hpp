#pragma once
#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace helm {

using Complex = std::complex<double>;

// Nodal grid on [0,1]^2: nx * ny nodes, mesh width h = 1/nx.
struct ProblemGrid {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  double extent_x = 1.0;
  double extent_y = 1.0;
};

// 2D grid function, row-major: index (ix, iy) -> iy*nx + ix.
template <typename T>
struct Field2 {
  int nx = 0;
  int ny = 0;
  std::vector<T> v;

  Field2() = default;
  Field2(int nx_, int ny_, T fill = T{}) : nx(nx_), ny(ny_), v(std::size_t(nx_) * ny_, fill) {}

  T& at(int ix, int iy) { return v[std::size_t(iy) * nx + ix]; }
  const T& at(int ix, int iy) const { return v[std::size_t(iy) * nx + ix]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Field2& o) const { return nx == o.nx && ny == o.ny; }
};

using ComplexField = Field2<Complex>;
using RealField = Field2<double>;

inline double norm2(const ComplexField& f) {
  double s = 0.0;
  for (const auto& z : f.v) s += std::norm(z);
  return std::sqrt(s);
}

inline double norm2(const RealField& f) {
  double s = 0.0;
  for (double x : f.v) s += x * x;
  return std::sqrt(s);
}

inline Complex dot(const ComplexField& a, const ComplexField& b) {
  Complex s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += std::conj(a.v[i]) * b.v[i];
  return s;
}

inline bool all_finite(const ComplexField& f) {
  for (const auto& z : f.v)
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  return true;
}

// Squared slowness field with its declared normalization range.
struct SlownessSquared {
  RealField values;
  double lo = 0.25;
  double hi = 1.0;
};

inline SlownessSquared make_slowness_squared(RealField values, double lo = 0.25, double hi = 1.0) {
  if (!(lo < hi) || lo < 0.0) throw std::invalid_argument("slowness range must satisfy 0 <= lo < hi");
  for (double x : values.v)
    if (!(x >= lo - 1e-12 && x <= hi + 1e-12))
      throw std::invalid_argument("slowness value outside declared range");
  return SlownessSquared{std::move(values), lo, hi};
}

// Damping fraction; nonzero only inside the absorbing boundary layer.
struct Attenuation {
  RealField values;
};

inline ProblemGrid make_grid(int nx, int ny, int levels = 3) {
  if (nx < 8 || ny < 8) throw std::invalid_argument("grid must be at least 8x8");
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  const int divisor = 1 << (levels - 1);
  if (nx % divisor != 0 || ny % divisor != 0)
    throw std::invalid_argument("grid dims not divisible by 2^(levels-1) = " + std::to_string(divisor));
  ProblemGrid g;
  g.nx = nx;
  g.ny = ny;
  g.h = 1.0 / nx;
  return g;
}

// gamma(node) = gamma_max * ((width - d)/width)^2 for nodes with boundary
// distance d < width; the corner value is the max of the two axis ramps,
// i.e. the ramp at min(dx, dy).
inline Attenuation make_absorbing_layer(const ProblemGrid& grid, int width, double gamma_max) {
  if (gamma_max < 0.0) throw std::invalid_argument("gamma_max must be nonnegative");
  if (width < 0 || width > std::min(grid.nx, grid.ny) / 2)
    throw std::invalid_argument("absorbing layer width out of range");
  Attenuation att{RealField(grid.nx, grid.ny, 0.0)};
  if (width == 0) return att;
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix < grid.nx; ++ix) {
      const int dx = std::min(ix, grid.nx - 1 - ix);
      const int dy = std::min(iy, grid.ny - 1 - iy);
      const int d = std::min(dx, dy);
      if (d < width) {
        const double t = double(width - d) / double(width);
        att.values.at(ix, iy) = gamma_max * t * t;
      }
    }
  }
  return att;
}

struct HelmholtzProblem {
  ProblemGrid grid;
  double omega = 0.0;
  SlownessSquared kappa2;
  Attenuation gamma;
};

inline HelmholtzProblem make_problem(const ProblemGrid& grid, double omega,
                                     SlownessSquared kappa2, Attenuation gamma) {
  if (omega < 0.0) throw std::invalid_argument("omega must be nonnegative");
  if (kappa2.values.nx != grid.nx || kappa2.values.ny != grid.ny)
    throw std::invalid_argument("kappa2 shape does not match grid");
  if (gamma.values.nx != grid.nx || gamma.values.ny != grid.ny)
    throw std::invalid_argument("gamma shape does not match grid");
  double kmax = 0.0;
  for (double k2 : kappa2.values.v) kmax = std::max(kmax, std::sqrt(k2));
  // 10-points-per-wavelength rule: omega * kappa * h <= 2*pi/10
  if (omega * kmax * grid.h > 0.6284)
    throw std::invalid_argument("discretization bound omega*kappa*h <= 0.628 violated");
  return HelmholtzProblem{grid, omega, std::move(kappa2), std::move(gamma)};
}

inline HelmholtzProblem homogeneous_problem(const ProblemGrid& grid, double omega,
                                            int abl_width = 10, double gamma_max = 0.5) {
  auto k2 = make_slowness_squared(RealField(grid.nx, grid.ny, 1.0));
  return make_problem(grid, omega, std::move(k2), make_absorbing_layer(grid, abl_width, gamma_max));
}

}  // namespace helm
