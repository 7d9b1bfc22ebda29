#pragma once
#include <memory>
#include <optional>

#include "helmbench/krylov.hpp"
#include "helmbench/multigrid.hpp"
#include "helmbench/unet.hpp"

namespace helm {

// Preconditioner callback for (block) FGMRES. Applications are batched
// across block columns; network-based preconditioners are non-stationary
// and demand the flexible variant.
class Preconditioner {
 public:
  virtual ~Preconditioner() = default;
  virtual std::vector<ComplexField> apply(const std::vector<ComplexField>& r) = 0;
  virtual bool requires_flexible() const = 0;
  virtual std::string name() const = 0;

  ComplexField apply_one(const ComplexField& r) {
    return apply(std::vector<ComplexField>{r})[0];
  }
  BatchedOp as_batched_op() {
    return [this](const std::vector<ComplexField>& r) { return apply(r); };
  }
};

inline void check_flexible_contract(const KrylovConfig& cfg, const Preconditioner& m) {
  if (m.requires_flexible() && !cfg.flexible)
    throw std::invalid_argument("preconditioner " + m.name() + " requires flexible = true");
}

// M_V: one shifted-Laplacian V-cycle from a zero initial guess.
class SLVCyclePreconditioner : public Preconditioner {
 public:
  explicit SLVCyclePreconditioner(std::shared_ptr<const MultigridHierarchy> hier)
      : hier_(std::move(hier)) {}

  std::vector<ComplexField> apply(const std::vector<ComplexField>& r) override {
    std::vector<ComplexField> out;
    out.reserve(r.size());
    for (const auto& col : r) out.push_back(hier_->cycle(ComplexField(col.nx, col.ny), col));
    return out;
  }
  bool requires_flexible() const override { return false; }
  std::string name() const override { return "v"; }

  const MultigridHierarchy& hierarchy() const { return *hier_; }

 private:
  std::shared_ptr<const MultigridHierarchy> hier_;
};

enum class NetVariant { standalone, encoder_solver };

// Shared network application: assembles (h^2 r, kappa^2, gamma) input
// channels, runs the solver net in eval mode, and hands back complex
// error estimates. Encoder features are computed once per model and
// cached for the entire solve.
class NetworkApplier {
 public:
  NetworkApplier(std::shared_ptr<NetworkWeights> weights, UNetConfig cfg, NetVariant variant,
                 const HelmholtzProblem& problem)
      : weights_(std::move(weights)), cfg_(cfg), variant_(variant), problem_(&problem) {
    if (variant_ == NetVariant::encoder_solver)
      features_ = encoder_forward(*weights_, cfg_, problem.kappa2.values, false);
  }

  // r is unscaled; the h^2 scaling is applied here, matching training.
  std::vector<ComplexField> infer_error(const std::vector<ComplexField>& r) {
    const int B = int(r.size());
    const int n = r[0].nx, m = r[0].ny;
    const double h2 = problem_->grid.h * problem_->grid.h;
    Tensor4 input(B, 4, m, n);
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < n; ++x) {
          input.at(b, 0, y, x) = float(h2 * r[b].at(x, y).real());
          input.at(b, 1, y, x) = float(h2 * r[b].at(x, y).imag());
          input.at(b, 2, y, x) = float(problem_->kappa2.values.at(x, y));
          input.at(b, 3, y, x) = float(problem_->gamma.values.at(x, y));
        }
    Tensor4 out = variant_ == NetVariant::standalone
                      ? unet_forward(*weights_, cfg_, input, false)
                      : solver_forward(*weights_, cfg_, input, *features_, false);
    std::vector<ComplexField> e;
    e.reserve(B);
    for (int b = 0; b < B; ++b) e.push_back(complex_from_channels(out, b));
    return e;
  }

  const std::optional<FeatureStack>& features() const { return features_; }

 private:
  std::shared_ptr<NetworkWeights> weights_;
  UNetConfig cfg_;
  NetVariant variant_;
  const HelmholtzProblem* problem_;
  std::optional<FeatureStack> features_;
};

// M_JU: damped Jacobi on A^h, U-Net correction on the updated residual,
// damped Jacobi again.
class JacobiUnetPreconditioner : public Preconditioner {
 public:
  JacobiUnetPreconditioner(const HelmholtzProblem& problem, std::shared_ptr<NetworkWeights> weights,
                           UNetConfig cfg, NetVariant variant, double damping = 0.8)
      : problem_(problem), A_(problem, kHelmholtzShift),
        applier_(std::move(weights), cfg, variant, problem_), damping_(damping) {}

  std::vector<ComplexField> apply(const std::vector<ComplexField>& r) override {
    const int B = int(r.size());
    std::vector<ComplexField> e1;
    e1.reserve(B);
    std::vector<ComplexField> net_in(B);
    for (int b = 0; b < B; ++b) {
      e1.push_back(A_.jacobi(ComplexField(r[b].nx, r[b].ny), r[b], damping_, 1));
      net_in[b] = A_.residual(e1[b], r[b]);
    }
    std::vector<ComplexField> de = applier_.infer_error(net_in);
    std::vector<ComplexField> out;
    out.reserve(B);
    for (int b = 0; b < B; ++b) {
      ComplexField e2 = e1[b];
      for (std::size_t i = 0; i < e2.v.size(); ++i) e2.v[i] += de[b].v[i];
      out.push_back(A_.jacobi(std::move(e2), r[b], damping_, 1));
    }
    return out;
  }
  bool requires_flexible() const override { return true; }
  std::string name() const override { return "ju"; }

 private:
  HelmholtzProblem problem_;
  StencilOperator A_;
  NetworkApplier applier_;
  double damping_;
};

// M_VU: U-Net initial error guess smoothed by one shifted-Laplacian
// V-cycle.
class UnetVCyclePreconditioner : public Preconditioner {
 public:
  UnetVCyclePreconditioner(std::shared_ptr<const MultigridHierarchy> hier,
                           std::shared_ptr<NetworkWeights> weights, UNetConfig cfg,
                           NetVariant variant)
      : hier_(std::move(hier)),
        applier_(std::move(weights), cfg, variant, hier_->problem(0)) {}

  std::vector<ComplexField> apply(const std::vector<ComplexField>& r) override {
    std::vector<ComplexField> e0 = applier_.infer_error(r);
    std::vector<ComplexField> out;
    out.reserve(r.size());
    for (std::size_t b = 0; b < r.size(); ++b)
      out.push_back(hier_->cycle(std::move(e0[b]), r[b]));
    return out;
  }
  bool requires_flexible() const override { return true; }
  std::string name() const override { return "vu"; }

 private:
  std::shared_ptr<const MultigridHierarchy> hier_;
  NetworkApplier applier_;
};

}  // namespace helm
