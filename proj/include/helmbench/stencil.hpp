#pragma once
#include <stdexcept>

#include "helmbench/grid.hpp"

namespace helm {

// Complex shift (alpha - beta*i) on the mass term; (1, 0) gives the
// Helmholtz operator A^h, (1, 0.5) the shifted Laplacian M^h.
struct Shift {
  double alpha = 1.0;
  double beta = 0.0;
};

inline constexpr Shift kHelmholtzShift{1.0, 0.0};
inline constexpr Shift kShiftedLaplacianShift{1.0, 0.5};

// Matrix-free 5-point operator
//   (A u)(x) = (4 u - u_N - u_S - u_E - u_W)/h^2 - omega^2 kappa^2 (alpha - beta i)(1 - gamma i) u
// with zero (Dirichlet) padding; absorption enters through the gamma mass term.
class StencilOperator {
 public:
  StencilOperator(const HelmholtzProblem& p, Shift shift)
      : nx_(p.grid.nx), ny_(p.grid.ny), h_(p.grid.h), shift_(shift) {
    if (shift.beta < 0.0) throw std::invalid_argument("shift beta must be >= 0");
    const double inv_h2 = 1.0 / (h_ * h_);
    const Complex sh(shift.alpha, -shift.beta);
    diag_.assign(std::size_t(nx_) * ny_, Complex(0.0));
    mass_.assign(std::size_t(nx_) * ny_, Complex(0.0));
    for (std::size_t i = 0; i < diag_.size(); ++i) {
      const Complex damp(1.0, -p.gamma.values.v[i]);
      const Complex m = -p.omega * p.omega * p.kappa2.values.v[i] * sh * damp;
      mass_[i] = m;
      diag_[i] = 4.0 * inv_h2 + m;
    }
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double h() const { return h_; }
  Shift shift() const { return shift_; }
  const std::vector<Complex>& diagonal() const { return diag_; }

  void apply(const ComplexField& u, ComplexField& out) const {
    check_shape(u);
    if (!out.same_shape(u)) out = ComplexField(nx_, ny_);
    const double inv_h2 = 1.0 / (h_ * h_);
    for (int iy = 0; iy < ny_; ++iy) {
      const std::size_t row = std::size_t(iy) * nx_;
      for (int ix = 0; ix < nx_; ++ix) {
        const std::size_t i = row + ix;
        Complex nbr(0.0);
        if (ix > 0) nbr += u.v[i - 1];
        if (ix + 1 < nx_) nbr += u.v[i + 1];
        if (iy > 0) nbr += u.v[i - nx_];
        if (iy + 1 < ny_) nbr += u.v[i + nx_];
        out.v[i] = diag_[i] * u.v[i] - inv_h2 * nbr;
      }
    }
  }

  ComplexField apply(const ComplexField& u) const {
    ComplexField out(nx_, ny_);
    apply(u, out);
    return out;
  }

  // g - A u
  ComplexField residual(const ComplexField& u, const ComplexField& g) const {
    check_shape(u);
    check_shape(g);
    ComplexField r = apply(u);
    for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = g.v[i] - r.v[i];
    return r;
  }

  // iters sweeps of v <- v + damping * D^{-1} (f - A v)
  ComplexField jacobi(ComplexField v, const ComplexField& f, double damping, int iters) const {
    check_shape(v);
    check_shape(f);
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("damping must be in (0,1]");
    if (iters < 0) throw std::invalid_argument("iters must be >= 0");
    ComplexField av(nx_, ny_);
    for (int it = 0; it < iters; ++it) {
      apply(v, av);
      for (std::size_t i = 0; i < v.v.size(); ++i) {
        if (diag_[i] == Complex(0.0)) throw std::runtime_error("zero stencil diagonal");
        v.v[i] += damping * (f.v[i] - av.v[i]) / diag_[i];
      }
    }
    return v;
  }

 private:
  void check_shape(const ComplexField& u) const {
    if (u.nx != nx_ || u.ny != ny_) throw std::invalid_argument("field shape mismatch");
  }

  int nx_, ny_;
  double h_;
  Shift shift_;
  std::vector<Complex> diag_;
  std::vector<Complex> mass_;
};

namespace detail {
// 1D weights of the fixed 3x3 transfer kernels (outer products of [1 2 1]).
inline constexpr double kTransfer1D[3] = {1.0, 2.0, 1.0};
}  // namespace detail

// Full-weighting restriction: 3x3 kernel (1/16)[1 2 1; 2 4 2; 1 2 1],
// stride 2, zero padding of size 1. With offset 0 coarse node j sits at
// fine node 2j and the padding is consumed on the low side; offset 1
// centers on fine node 2j+1 and pads the high side. A multilevel
// hierarchy alternates the offset: an even grid cannot align both
// Dirichlet boundaries under 2:1 coarsening, and repeating one offset
// compounds the misaligned side into a boundary instability.
template <typename T>
Field2<T> restrict_field(const Field2<T>& fine, int offset = 0) {
  if (fine.nx % 2 != 0 || fine.ny % 2 != 0) throw std::invalid_argument("restrict needs even dims");
  if (offset != 0 && offset != 1) throw std::invalid_argument("restrict offset must be 0 or 1");
  const int cnx = fine.nx / 2, cny = fine.ny / 2;
  Field2<T> coarse(cnx, cny);
  for (int jy = 0; jy < cny; ++jy) {
    for (int jx = 0; jx < cnx; ++jx) {
      T acc{};
      for (int ky = -1; ky <= 1; ++ky) {
        const int iy = 2 * jy + offset + ky;
        if (iy < 0 || iy >= fine.ny) continue;
        for (int kx = -1; kx <= 1; ++kx) {
          const int ix = 2 * jx + offset + kx;
          if (ix < 0 || ix >= fine.nx) continue;
          acc += fine.at(ix, iy) * (detail::kTransfer1D[ky + 1] * detail::kTransfer1D[kx + 1] / 16.0);
        }
      }
      coarse.at(jx, jy) = acc;
    }
  }
  return coarse;
}

// Bilinear prolongation: transposed stride-2 convolution with
// (1/4)[1 2 1; 2 4 2; 1 2 1]; coarse impulse becomes a hat of peak 1.
// The offset pairs with the matching restriction (prolong = 4 R^T).
template <typename T>
Field2<T> prolong_field(const Field2<T>& coarse, int offset = 0) {
  if (offset != 0 && offset != 1) throw std::invalid_argument("prolong offset must be 0 or 1");
  const int fnx = coarse.nx * 2, fny = coarse.ny * 2;
  Field2<T> fine(fnx, fny);
  for (int jy = 0; jy < coarse.ny; ++jy) {
    for (int jx = 0; jx < coarse.nx; ++jx) {
      const T c = coarse.at(jx, jy);
      for (int ky = -1; ky <= 1; ++ky) {
        const int iy = 2 * jy + offset + ky;
        if (iy < 0 || iy >= fny) continue;
        for (int kx = -1; kx <= 1; ++kx) {
          const int ix = 2 * jx + offset + kx;
          if (ix < 0 || ix >= fnx) continue;
          fine.at(ix, iy) += c * (detail::kTransfer1D[ky + 1] * detail::kTransfer1D[kx + 1] / 4.0);
        }
      }
    }
  }
  return fine;
}

// Rediscretize on the doubled mesh: grid halved, kappa^2 and gamma
// restricted by real full weighting and clamped to their valid ranges.
inline HelmholtzProblem coarsen_problem(const HelmholtzProblem& p, int offset = 0) {
  if (p.grid.nx % 2 != 0 || p.grid.ny % 2 != 0) throw std::invalid_argument("coarsen needs even dims");
  ProblemGrid cg;
  cg.nx = p.grid.nx / 2;
  cg.ny = p.grid.ny / 2;
  cg.h = p.grid.h * 2.0;
  RealField ck2 = restrict_field(p.kappa2.values, offset);
  for (double& x : ck2.v) x = std::clamp(x, p.kappa2.lo, p.kappa2.hi);
  RealField cgam = restrict_field(p.gamma.values, offset);
  for (double& x : cgam.v) x = std::max(x, 0.0);
  HelmholtzProblem cp;
  cp.grid = cg;
  cp.omega = p.omega;
  cp.kappa2 = SlownessSquared{std::move(ck2), p.kappa2.lo, p.kappa2.hi};
  cp.gamma = Attenuation{std::move(cgam)};
  return cp;
}

}  // namespace helm
