#pragma once
#include <functional>
#include <ostream>
#include <utility>
#include <vector>

#include "helmbench/grid.hpp"

namespace helm {

struct KrylovConfig {
  int restart = 10;
  int max_iters = 200;
  double rel_tol = 1e-6;
  bool flexible = true;
};

// Per-RHS residual histories (absolute norms; entry 0 is ||b - A x0||)
// plus the iteration counts at which each column stopped.
struct SolveReport {
  std::vector<std::vector<double>> residual_history;
  std::vector<int> iterations;
  std::vector<bool> converged;
  std::vector<bool> breakdown;

  void write_csv(std::ostream& os) const {
    os << "iter,rhs_index,relative_residual\n";
    for (std::size_t c = 0; c < residual_history.size(); ++c) {
      const auto& h = residual_history[c];
      const double r0 = h.empty() ? 1.0 : (h[0] > 0.0 ? h[0] : 1.0);
      for (std::size_t i = 0; i < h.size(); ++i)
        os << i << ',' << c << ',' << h[i] / r0 << '\n';
    }
  }
};

using LinearOp = std::function<ComplexField(const ComplexField&)>;
using BatchedOp = std::function<std::vector<ComplexField>(const std::vector<ComplexField>&)>;

namespace detail {

struct Givens {
  double c = 1.0;
  Complex s = 0.0;
};

// Rotation zeroing a real nonnegative subdiagonal b against complex a:
// [c, s; -conj(s), c] [a; b] = [rho * a/|a|; 0] with real c.
inline Givens make_givens(Complex a, double b) {
  Givens g;
  const double aa = std::abs(a);
  const double rho = std::hypot(aa, b);
  if (rho == 0.0) {
    g.c = 1.0;
    g.s = 0.0;
  } else if (aa == 0.0) {
    g.c = 0.0;
    g.s = 1.0;
  } else {
    g.c = aa / rho;
    g.s = a * b / (rho * aa);
  }
  return g;
}

struct ArnoldiColumn {
  std::vector<ComplexField> V;      // basis, restart+1 vectors
  std::vector<ComplexField> Z;      // preconditioned vectors (flexible only)
  std::vector<std::vector<Complex>> H;  // H[j] = column j, length j+2
  std::vector<Givens> rot;
  std::vector<Complex> g;           // rotated rhs of the small system
  int j = 0;                        // inner step within the current cycle
  bool active_cycle = false;
};

}  // namespace detail

// Right-preconditioned restarted flexible GMRES over a block of
// right-hand sides. Columns run independent Arnoldi processes in
// lockstep; operator and preconditioner applications are batched across
// the still-active columns each inner step, and converged columns are
// frozen. With a single column this is exactly FGMRES(m).
inline std::pair<std::vector<ComplexField>, SolveReport> block_fgmres(
    const BatchedOp& apply_A, const BatchedOp& apply_M,
    const std::vector<ComplexField>& B, const KrylovConfig& cfg,
    const std::vector<ComplexField>* X0 = nullptr) {
  if (cfg.restart < 1) throw std::invalid_argument("restart must be >= 1");
  if (!(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0)) throw std::invalid_argument("rel_tol in (0,1)");
  const int ncols = int(B.size());
  const int m = cfg.restart;

  std::vector<ComplexField> X(ncols);
  SolveReport report;
  report.residual_history.assign(ncols, {});
  report.iterations.assign(ncols, 0);
  report.converged.assign(ncols, false);
  report.breakdown.assign(ncols, false);

  std::vector<double> beta0(ncols, 0.0);
  std::vector<bool> frozen(ncols, false);
  std::vector<int> iters(ncols, 0);
  std::vector<detail::ArnoldiColumn> arn(ncols);

  for (int c = 0; c < ncols; ++c) {
    X[c] = X0 ? (*X0)[c] : ComplexField(B[c].nx, B[c].ny);
    arn[c].V.resize(m + 1);
    if (cfg.flexible) arn[c].Z.resize(m);
  }

  auto batch_apply = [&](const BatchedOp& op, const std::vector<int>& idx,
                         const std::vector<const ComplexField*>& in) {
    std::vector<ComplexField> batch;
    batch.reserve(idx.size());
    for (const auto* f : in) batch.push_back(*f);
    return op(batch);
  };

  // finalize: solve the small triangular system and update x
  auto finalize_column = [&](int c) {
    auto& a = arn[c];
    const int k = a.j;
    if (k == 0) return;
    std::vector<Complex> y(k);
    for (int i = k - 1; i >= 0; --i) {
      Complex sum = a.g[i];
      for (int l = i + 1; l < k; ++l) sum -= a.H[l][i] * y[l];
      y[i] = sum / a.H[i][i];
    }
    if (cfg.flexible) {
      for (int i = 0; i < k; ++i)
        for (std::size_t p = 0; p < X[c].v.size(); ++p) X[c].v[p] += y[i] * a.Z[i].v[p];
    } else {
      ComplexField u(X[c].nx, X[c].ny);
      for (int i = 0; i < k; ++i)
        for (std::size_t p = 0; p < u.v.size(); ++p) u.v[p] += y[i] * a.V[i].v[p];
      std::vector<ComplexField> mu = apply_M({u});
      for (std::size_t p = 0; p < X[c].v.size(); ++p) X[c].v[p] += mu[0].v[p];
    }
    a.active_cycle = false;
  };

  bool any_active = true;
  while (any_active) {
    // start a cycle: compute true residuals for all unfrozen columns
    std::vector<int> idx;
    std::vector<const ComplexField*> xs;
    for (int c = 0; c < ncols; ++c)
      if (!frozen[c]) {
        idx.push_back(c);
        xs.push_back(&X[c]);
      }
    if (idx.empty()) break;
    std::vector<ComplexField> AX = batch_apply(apply_A, idx, xs);
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const int c = idx[q];
      auto& a = arn[c];
      ComplexField r = B[c];
      for (std::size_t p = 0; p < r.v.size(); ++p) r.v[p] -= AX[q].v[p];
      const double beta = norm2(r);
      if (report.residual_history[c].empty()) {
        beta0[c] = beta;
        report.residual_history[c].push_back(beta);
        if (beta == 0.0) {
          frozen[c] = true;
          report.converged[c] = true;
          continue;
        }
      }
      if (beta / beta0[c] <= cfg.rel_tol) {
        frozen[c] = true;
        report.converged[c] = true;
        continue;
      }
      if (iters[c] >= cfg.max_iters) {
        frozen[c] = true;
        continue;
      }
      a.j = 0;
      a.H.assign(m, {});
      a.rot.assign(m, {});
      a.g.assign(m + 1, Complex(0.0));
      a.g[0] = beta;
      a.V[0] = std::move(r);
      const double inv = 1.0 / beta;
      for (auto& z : a.V[0].v) z *= inv;
      a.active_cycle = true;
    }

    // inner steps of this cycle, lockstep across columns
    for (int step = 0; step < m; ++step) {
      idx.clear();
      xs.clear();
      for (int c = 0; c < ncols; ++c)
        if (!frozen[c] && arn[c].active_cycle) {
          idx.push_back(c);
          xs.push_back(&arn[c].V[arn[c].j]);
        }
      if (idx.empty()) break;

      std::vector<ComplexField> Zs = batch_apply(apply_M, idx, xs);
      std::vector<const ComplexField*> zp;
      zp.reserve(Zs.size());
      for (auto& z : Zs) zp.push_back(&z);
      std::vector<ComplexField> Ws = batch_apply(apply_A, idx, zp);

      for (std::size_t q = 0; q < idx.size(); ++q) {
        const int c = idx[q];
        auto& a = arn[c];
        const int j = a.j;
        if (cfg.flexible) a.Z[j] = std::move(Zs[q]);
        ComplexField& w = Ws[q];
        auto& hj = a.H[j];
        hj.assign(j + 2, Complex(0.0));
        for (int i = 0; i <= j; ++i) {
          const Complex hij = dot(a.V[i], w);
          hj[i] = hij;
          for (std::size_t p = 0; p < w.v.size(); ++p) w.v[p] -= hij * a.V[i].v[p];
        }
        const double hnorm = norm2(w);
        hj[j + 1] = hnorm;
        // apply previous rotations to the new column
        for (int i = 0; i < j; ++i) {
          const Complex t = a.rot[i].c * hj[i] + a.rot[i].s * hj[i + 1];
          hj[i + 1] = -std::conj(a.rot[i].s) * hj[i] + a.rot[i].c * hj[i + 1];
          hj[i] = t;
        }
        const auto rot = detail::make_givens(hj[j], hnorm);
        a.rot[j] = rot;
        hj[j] = rot.c * hj[j] + rot.s * hj[j + 1];
        hj[j + 1] = 0.0;
        a.g[j + 1] = -std::conj(rot.s) * a.g[j];
        a.g[j] = rot.c * a.g[j];

        a.j = j + 1;
        iters[c] += 1;
        report.iterations[c] = iters[c];
        const double est = std::abs(a.g[j + 1]);
        report.residual_history[c].push_back(est);

        const bool happy = hnorm <= 1e-14 * beta0[c];
        if (happy) report.breakdown[c] = true;
        if (est / beta0[c] <= cfg.rel_tol || happy) {
          finalize_column(c);
          frozen[c] = true;
          report.converged[c] = true;
        } else if (iters[c] >= cfg.max_iters) {
          finalize_column(c);
          frozen[c] = true;
        } else if (a.j < m) {
          const double invn = 1.0 / hnorm;
          a.V[j + 1] = std::move(w);
          for (auto& z : a.V[j + 1].v) z *= invn;
        }
      }
    }

    // cycle end: fold the Krylov correction into x for continuing columns
    any_active = false;
    for (int c = 0; c < ncols; ++c) {
      if (!frozen[c]) {
        if (arn[c].active_cycle) finalize_column(c);
        any_active = true;
      }
    }
  }
  return {std::move(X), std::move(report)};
}

inline BatchedOp batch_of(const LinearOp& op) {
  return [op](const std::vector<ComplexField>& in) {
    std::vector<ComplexField> out;
    out.reserve(in.size());
    for (const auto& f : in) out.push_back(op(f));
    return out;
  };
}

inline LinearOp identity_op() {
  return [](const ComplexField& f) { return f; };
}

// Single right-hand-side flexible GMRES; a one-column block run.
inline std::pair<ComplexField, SolveReport> fgmres(const LinearOp& apply_A,
                                                   const LinearOp& apply_M,
                                                   const ComplexField& b,
                                                   const ComplexField& x0,
                                                   const KrylovConfig& cfg) {
  std::vector<ComplexField> B{b};
  std::vector<ComplexField> X0{x0};
  auto [X, report] = block_fgmres(batch_of(apply_A), batch_of(apply_M), B, cfg, &X0);
  return {std::move(X[0]), std::move(report)};
}

}  // namespace helm
