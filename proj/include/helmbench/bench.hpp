#pragma once
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "helmbench/config.hpp"
#include "helmbench/datagen.hpp"
#include "helmbench/precond.hpp"

namespace helm {

struct ConvergenceFactor {
  double rho = std::numeric_limits<double>::quiet_NaN();
  int T = 0;
  bool converged = false;
};

// Eq.-style convergence factor: T is the first iteration where the
// residual has dropped by target_drop, rho the geometric mean reduction
// up to T. Not converged -> (NaN, last index, false).
inline ConvergenceFactor convergence_factor(const std::vector<double>& history,
                                            double target_drop = 1e6) {
  if (history.empty()) throw std::invalid_argument("empty residual history");
  if (!(history[0] > 0.0)) throw std::invalid_argument("history[0] must be positive");
  ConvergenceFactor out;
  for (std::size_t t = 1; t < history.size(); ++t) {
    const double ratio = history[t] / history[0];
    if (ratio <= 1.0 / target_drop) {
      out.T = int(t);
      out.rho = std::pow(ratio, 1.0 / double(t));
      out.converged = true;
      return out;
    }
  }
  out.T = int(history.size()) - 1;
  return out;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct PrecondResult {
  std::string name;
  double rho_median = std::numeric_limits<double>::quiet_NaN();
  double T_median = 0.0;
  bool all_converged = false;
  double seconds = 0.0;
  SolveReport report;
};

struct BenchResult {
  std::vector<PrecondResult> rows;
  bool all_converged = true;
};

// (rho, T) medians over the block columns of one solve report
inline PrecondResult summarize_report(const std::string& name, const SolveReport& rep,
                                      double target_drop = 1e6) {
  PrecondResult r;
  r.name = name;
  r.report = rep;
  std::vector<double> rhos, Ts;
  r.all_converged = true;
  for (const auto& h : rep.residual_history) {
    const auto cf = convergence_factor(h, target_drop);
    if (cf.converged) {
      rhos.push_back(cf.rho);
      Ts.push_back(double(cf.T));
    } else {
      r.all_converged = false;
    }
  }
  r.rho_median = median(rhos);
  r.T_median = median(Ts);
  return r;
}

inline std::vector<ComplexField> random_rhs_block(const ProblemGrid& grid, int count,
                                                  std::uint64_t seed) {
  std::vector<ComplexField> B;
  B.reserve(count);
  Rng rng(seed ^ 0xb10cULL);
  for (int i = 0; i < count; ++i) B.push_back(random_complex_normal(grid.nx, grid.ny, rng));
  return B;
}

// One preconditioner test: block FGMRES on a shared RHS block.
inline PrecondResult run_preconditioner_test(Preconditioner& M, const HelmholtzProblem& p,
                                             const std::vector<ComplexField>& B,
                                             const KrylovConfig& cfg) {
  check_flexible_contract(cfg, M);
  StencilOperator A(p, kHelmholtzShift);
  BatchedOp apply_A = [&A](const std::vector<ComplexField>& in) {
    std::vector<ComplexField> out;
    out.reserve(in.size());
    for (const auto& f : in) out.push_back(A.apply(f));
    return out;
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto [X, rep] = block_fgmres(apply_A, M.as_batched_op(), B, cfg);
  const auto t1 = std::chrono::steady_clock::now();
  PrecondResult r = summarize_report(M.name(), rep, 1.0 / cfg.rel_tol);
  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  return r;
}

namespace benchdet {

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace benchdet

// summary is byte-reproducible from (config, seed); wall-clock lives in
// the separate timings file
inline void write_summary_csv(const BenchResult& res, std::ostream& os) {
  os << "preconditioner,rho,T,converged\n";
  for (const auto& r : res.rows)
    os << r.name << ',' << benchdet::fmt(r.rho_median) << ',' << benchdet::fmt(r.T_median) << ','
       << (r.all_converged ? 1 : 0) << '\n';
}

inline void write_timings(const BenchResult& res, std::ostream& os) {
  for (const auto& r : res.rows)
    os << "M_" << r.name << " solve_seconds " << r.seconds << "\n";
}

inline void write_summary_table(const BenchResult& res, std::ostream& os) {
  os << std::left << std::setw(14) << "precond" << std::setw(12) << "rho" << std::setw(8) << "T"
     << std::setw(11) << "converged" << "seconds\n";
  for (const auto& r : res.rows) {
    os << std::left << std::setw(14) << ("M_" + r.name) << std::setw(12) << std::setprecision(4)
       << r.rho_median << std::setw(8) << r.T_median << std::setw(11)
       << (r.all_converged ? "yes" : "NO") << std::setprecision(4) << r.seconds << "\n";
  }
}

struct BenchSetup {
  HelmholtzProblem problem;
  KrylovConfig krylov;
  VCycleConfig vcycle;
  UNetConfig net;
  bool encoder_solver = false;
  std::shared_ptr<NetworkWeights> weights;  // required for ju / vu
  std::vector<std::string> preconditioners;  // subset of v, ju, vu
  int block_size = 10;
  std::uint64_t rhs_seed = 1;
};

// Runs every requested preconditioner on the same RHS block and writes
// <name>.csv per-iteration files plus summary.csv / summary.txt.
inline BenchResult run_benchmark(const BenchSetup& setup, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto hier = std::make_shared<MultigridHierarchy>(setup.problem, setup.vcycle);
  const auto B = random_rhs_block(setup.problem.grid, setup.block_size, setup.rhs_seed);
  const NetVariant variant =
      setup.encoder_solver ? NetVariant::encoder_solver : NetVariant::standalone;

  BenchResult res;
  for (const auto& name : setup.preconditioners) {
    std::unique_ptr<Preconditioner> M;
    if (name == "v") {
      M = std::make_unique<SLVCyclePreconditioner>(hier);
    } else if (name == "ju") {
      if (!setup.weights) throw std::invalid_argument("ju preconditioner needs trained weights");
      M = std::make_unique<JacobiUnetPreconditioner>(setup.problem, setup.weights, setup.net,
                                                     variant, setup.vcycle.damping);
    } else if (name == "vu") {
      if (!setup.weights) throw std::invalid_argument("vu preconditioner needs trained weights");
      M = std::make_unique<UnetVCyclePreconditioner>(hier, setup.weights, setup.net, variant);
    } else {
      throw std::invalid_argument("unknown preconditioner: " + name);
    }
    PrecondResult r = run_preconditioner_test(*M, setup.problem, B, setup.krylov);
    std::ofstream csv(out_dir + "/" + name + ".csv");
    r.report.write_csv(csv);
    res.all_converged = res.all_converged && r.all_converged;
    res.rows.push_back(std::move(r));
  }
  std::ofstream sum_csv(out_dir + "/summary.csv");
  write_summary_csv(res, sum_csv);
  std::ofstream sum_txt(out_dir + "/summary.txt");
  write_summary_table(res, sum_txt);
  std::ofstream times(out_dir + "/timings.txt");
  write_timings(res, times);
  return res;
}

// slowness model from the [slowness] section
inline SlownessSquared slowness_from_config(const ExperimentConfig& cfg, const ProblemGrid& grid) {
  const std::string kind = cfg.get("slowness", "kind", "synthetic");
  const SlownessRange range{cfg.get_num("slowness", "lo", 0.25), cfg.get_num("slowness", "hi", 1.0)};
  if (kind == "homogeneous") {
    return make_slowness_squared(RealField(grid.nx, grid.ny, range.hi), range.lo, range.hi);
  }
  if (kind == "synthetic") {
    return synthetic_slowness(std::uint64_t(cfg.get_num("slowness", "seed", 1)), grid, range);
  }
  if (kind == "file") {
    auto values = read_slw1(cfg.get("slowness", "path", ""));
    if (values.nx != grid.nx || values.ny != grid.ny) {
      RealField resized = bilinear_resize(values, grid.nx, grid.ny);
      return make_slowness_squared(normalize_range(std::move(resized), range.lo, range.hi),
                                   range.lo, range.hi);
    }
    return make_slowness_squared(std::move(values), range.lo, range.hi);
  }
  if (kind == "image") {
    return image_to_slowness(load_netpbm(cfg.get("slowness", "path", "")), grid, range);
  }
  throw std::invalid_argument("slowness.kind must be homogeneous|synthetic|file|image");
}

inline HelmholtzProblem problem_from_config(const ExperimentConfig& cfg) {
  auto grid = make_grid(cfg.grid_nx(), cfg.grid_ny(), cfg.vcycle().levels);
  auto kappa2 = slowness_from_config(cfg, grid);
  return make_problem(grid, cfg.omega(), std::move(kappa2),
                      make_absorbing_layer(grid, cfg.abl_width(), cfg.gamma_max()));
}

}  // namespace helm
