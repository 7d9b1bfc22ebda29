#pragma once
#include <Eigen/Dense>
#include <memory>

#include "helmbench/grid.hpp"
#include "helmbench/krylov.hpp"
#include "helmbench/stencil.hpp"

namespace helm {

enum class CoarseSolver { gmres, dense };

struct VCycleConfig {
  int levels = 3;
  int nu1 = 1;
  int nu2 = 1;
  double damping = 0.8;
  Shift shift = kShiftedLaplacianShift;
  int coarse_iters = 10;
  CoarseSolver coarse_solver = CoarseSolver::gmres;
};

// Dense assembly of a stencil operator (used for the exact coarsest-grid
// solve; the test oracles assemble independently).
inline Eigen::MatrixXcd assemble_dense(const StencilOperator& op) {
  const int nx = op.nx(), ny = op.ny();
  const std::size_t n = std::size_t(nx) * ny;
  const double inv_h2 = 1.0 / (op.h() * op.h());
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const std::size_t i = std::size_t(iy) * nx + ix;
      A(i, i) = op.diagonal()[i];
      if (ix > 0) A(i, i - 1) = -inv_h2;
      if (ix + 1 < nx) A(i, i + 1) = -inv_h2;
      if (iy > 0) A(i, i - nx) = -inv_h2;
      if (iy + 1 < ny) A(i, i + nx) = -inv_h2;
    }
  }
  return A;
}

// One GMRES(coarse_iters) cycle with the inverse stencil diagonal as
// preconditioner, zero initial guess, fixed budget (no tolerance).
inline ComplexField coarse_solve_with_op(const StencilOperator& op, const ComplexField& f,
                                         const VCycleConfig& cfg) {
  KrylovConfig kc;
  kc.restart = cfg.coarse_iters;
  kc.max_iters = cfg.coarse_iters;
  kc.rel_tol = 1e-300;
  kc.flexible = false;
  const auto& diag = op.diagonal();
  LinearOp apply_A = [&op](const ComplexField& u) { return op.apply(u); };
  LinearOp apply_M = [&diag](const ComplexField& u) {
    ComplexField out = u;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= diag[i];
    return out;
  };
  ComplexField x0(f.nx, f.ny);
  return fgmres(apply_A, apply_M, f, x0, kc).first;
}

inline ComplexField coarse_solve(const HelmholtzProblem& p_coarse, const ComplexField& f,
                                 const VCycleConfig& cfg) {
  return coarse_solve_with_op(StencilOperator(p_coarse, cfg.shift), f, cfg);
}

// Problem hierarchy with cached per-level operators for the shifted
// system; reentrant, shareable across concurrent right-hand sides.
class MultigridHierarchy {
 public:
  MultigridHierarchy(const HelmholtzProblem& p, VCycleConfig cfg) : cfg_(cfg) {
    if (cfg.levels < 2) throw std::invalid_argument("levels must be >= 2");
    if (cfg.nu1 + cfg.nu2 < 1) throw std::invalid_argument("nu1 + nu2 must be >= 1");
    const int divisor = 1 << (cfg.levels - 1);
    if (p.grid.nx % divisor != 0 || p.grid.ny % divisor != 0)
      throw std::invalid_argument("grid does not support the configured level count");
    problems_.push_back(p);
    // the stride-2 window offset alternates per level (see restrict_field)
    for (int l = 1; l < cfg.levels; ++l)
      problems_.push_back(coarsen_problem(problems_.back(), (l - 1) % 2));
    for (const auto& prob : problems_) ops_.emplace_back(prob, cfg.shift);
    if (cfg.coarse_solver == CoarseSolver::dense)
      lu_ = std::make_shared<Eigen::PartialPivLU<Eigen::MatrixXcd>>(assemble_dense(ops_.back()));
  }

  const VCycleConfig& config() const { return cfg_; }
  int levels() const { return int(problems_.size()); }
  const HelmholtzProblem& problem(int level) const { return problems_[level]; }
  const StencilOperator& op(int level) const { return ops_[level]; }

  ComplexField cycle(ComplexField v, const ComplexField& f) const { return cycle_at(0, std::move(v), f); }

 private:
  ComplexField solve_coarsest(const ComplexField& f) const {
    if (lu_) {
      const std::size_t n = f.v.size();
      Eigen::VectorXcd rhs(n);
      for (std::size_t i = 0; i < n; ++i) rhs(i) = f.v[i];
      Eigen::VectorXcd sol = lu_->solve(rhs);
      ComplexField out(f.nx, f.ny);
      for (std::size_t i = 0; i < n; ++i) out.v[i] = sol(i);
      return out;
    }
    return coarse_solve_with_op(ops_.back(), f, cfg_);
  }

  ComplexField cycle_at(int level, ComplexField v, const ComplexField& f) const {
    const StencilOperator& op = ops_[level];
    if (level == levels() - 1) return solve_coarsest(f);
    const int offset = level % 2;
    v = op.jacobi(std::move(v), f, cfg_.damping, cfg_.nu1);
    ComplexField r = op.residual(v, f);
    ComplexField fc = restrict_field(r, offset);
    ComplexField vc = cycle_at(level + 1, ComplexField(fc.nx, fc.ny), fc);
    ComplexField corr = prolong_field(vc, offset);
    for (std::size_t i = 0; i < v.v.size(); ++i) v.v[i] += corr.v[i];
    return op.jacobi(std::move(v), f, cfg_.damping, cfg_.nu2);
  }

  VCycleConfig cfg_;
  std::vector<HelmholtzProblem> problems_;
  std::vector<StencilOperator> ops_;
  std::shared_ptr<Eigen::PartialPivLU<Eigen::MatrixXcd>> lu_;
};

// One V(nu1,nu2) cycle on the shifted operator; convenience wrapper that
// builds the hierarchy per call. Hold a MultigridHierarchy for repeated use.
inline ComplexField v_cycle(const HelmholtzProblem& p, ComplexField v, const ComplexField& f,
                            const VCycleConfig& cfg) {
  MultigridHierarchy h(p, cfg);
  return h.cycle(std::move(v), f);
}

}  // namespace helm
