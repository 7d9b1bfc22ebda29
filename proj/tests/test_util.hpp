#pragma once
#include "helmbench/grid.hpp"
#include "helmbench/rng.hpp"

namespace testutil {

inline helm::ComplexField random_field(int nx, int ny, helm::Rng& rng) {
  helm::ComplexField f(nx, ny);
  for (auto& z : f.v) z = helm::Complex(rng.normal(), rng.normal());
  return f;
}

inline double rel_diff(const helm::ComplexField& a, const helm::ComplexField& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    num += std::norm(a.v[i] - b.v[i]);
    den += std::norm(b.v[i]);
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

// a small heterogeneous test problem with a smooth kappa^2 in [0.25, 1]
inline helm::HelmholtzProblem wavy_problem(int n, double omega, int abl = 0, int levels = 3) {
  auto grid = helm::make_grid(n, n, levels);
  helm::RealField k2(n, n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const double x = double(ix) / n, y = double(iy) / n;
      k2.at(ix, iy) = 0.625 + 0.3 * std::sin(3.1 * x + 1.0) * std::cos(2.3 * y);
    }
  auto kappa2 = helm::make_slowness_squared(std::move(k2));
  return helm::make_problem(grid, omega, std::move(kappa2),
                            helm::make_absorbing_layer(grid, abl, 0.5));
}

}  // namespace testutil
