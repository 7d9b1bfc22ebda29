#pragma once
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "helmbench/field_io.hpp"
#include "helmbench/multigrid.hpp"
#include "helmbench/precond.hpp"
#include "helmbench/tensor.hpp"

namespace helm {

struct SlownessRange {
  double lo = 0.25;
  double hi = 1.0;
};

// Bilinear resize with pixel-center sampling and replicate boundary.
inline RealField bilinear_resize(const RealField& src, int nx, int ny) {
  if (src.nx < 1 || src.ny < 1) throw std::invalid_argument("empty image");
  RealField out(nx, ny);
  for (int oy = 0; oy < ny; ++oy) {
    const double sy = (oy + 0.5) * src.ny / ny - 0.5;
    const int y0 = std::clamp(int(std::floor(sy)), 0, src.ny - 1);
    const int y1 = std::min(y0 + 1, src.ny - 1);
    const double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int ox = 0; ox < nx; ++ox) {
      const double sx = (ox + 0.5) * src.nx / nx - 0.5;
      const int x0 = std::clamp(int(std::floor(sx)), 0, src.nx - 1);
      const int x1 = std::min(x0 + 1, src.nx - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      out.at(ox, oy) = (1 - fy) * ((1 - fx) * src.at(x0, y0) + fx * src.at(x1, y0)) +
                       fy * ((1 - fx) * src.at(x0, y1) + fx * src.at(x1, y1));
    }
  }
  return out;
}

// Separable 5x5 Gaussian (sigma default 1) with replicate padding.
inline RealField gaussian_blur5(const RealField& src, double sigma = 1.0) {
  double w[5];
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i) {
    w[i + 2] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += w[i + 2];
  }
  for (double& x : w) x /= sum;
  RealField tmp(src.nx, src.ny), out(src.nx, src.ny);
  for (int y = 0; y < src.ny; ++y)
    for (int x = 0; x < src.nx; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += w[i + 2] * src.at(std::clamp(x + i, 0, src.nx - 1), y);
      tmp.at(x, y) = acc;
    }
  for (int y = 0; y < src.ny; ++y)
    for (int x = 0; x < src.nx; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += w[i + 2] * tmp.at(x, std::clamp(y + i, 0, src.ny - 1));
      out.at(x, y) = acc;
    }
  return out;
}

// Affine min/max normalization into [lo, hi]; a constant field maps to
// the constant hi (homogeneous model).
inline RealField normalize_range(RealField f, double lo, double hi) {
  double mn = f.v[0], mx = f.v[0];
  for (double x : f.v) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  if (mx - mn < 1e-300) {
    for (double& x : f.v) x = hi;
    return f;
  }
  const double scale = (hi - lo) / (mx - mn);
  for (double& x : f.v) x = lo + (x - mn) * scale;
  return f;
}

// grayscale image -> bilinear upsample -> 5x5 Gaussian blur -> [lo, hi]
inline SlownessSquared image_to_slowness(const RealField& image, const ProblemGrid& grid,
                                         SlownessRange range = {}) {
  if (image.v.empty()) throw std::invalid_argument("empty image");
  if (!(range.lo < range.hi)) throw std::invalid_argument("bad range");
  RealField f = bilinear_resize(image, grid.nx, grid.ny);
  f = gaussian_blur5(f);
  f = normalize_range(std::move(f), range.lo, range.hi);
  return make_slowness_squared(std::move(f), range.lo, range.hi);
}

// Random piecewise-smooth model: 3-8 Gaussian bumps plus a linear ramp,
// blurred and normalized like the image pipeline. Deterministic per seed.
inline SlownessSquared synthetic_slowness(std::uint64_t seed, const ProblemGrid& grid,
                                          SlownessRange range = {}) {
  Rng rng(seed ^ 0x510e55ULL);
  RealField f(grid.nx, grid.ny, 0.0);
  const int bumps = int(rng.uniform_int(3, 8));
  struct Bump {
    double cx, cy, s, a;
  };
  std::vector<Bump> bs(bumps);
  for (auto& b : bs)
    b = {rng.uniform(), rng.uniform(), rng.uniform(0.08, 0.25), rng.uniform(-1.0, 1.0)};
  const double r0 = rng.uniform(-1.0, 1.0), rx = rng.uniform(-1.0, 1.0), ry = rng.uniform(-1.0, 1.0);
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      const double x = double(ix) / grid.nx, y = double(iy) / grid.ny;
      double v = r0 + rx * x + ry * y;
      for (const auto& b : bs) {
        const double dx = x - b.cx, dy = y - b.cy;
        v += b.a * std::exp(-(dx * dx + dy * dy) / (2.0 * b.s * b.s));
      }
      f.at(ix, iy) = v;
    }
  f = gaussian_blur5(f);
  f = normalize_range(std::move(f), range.lo, range.hi);
  return make_slowness_squared(std::move(f), range.lo, range.hi);
}

// ---- netpbm (PGM/PPM, 8-bit, P2/P3/P5/P6) loader; RGB collapses to the
// channel average ----
inline RealField load_netpbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  is >> magic;
  const bool ascii = magic == "P2" || magic == "P3";
  const bool color = magic == "P3" || magic == "P6";
  if (!ascii && magic != "P5" && magic != "P6")
    throw std::runtime_error("unsupported image format (want PGM/PPM): " + path);
  auto next_int = [&is]() {
    int c = is.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') is.ignore(4096, '\n');
      else is.ignore(1);
      c = is.peek();
    }
    int v;
    is >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("bad netpbm header: " + path);
  const int ch = color ? 3 : 1;
  RealField out(w, h);
  if (ascii) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int c = 0; c < ch; ++c) acc += next_int();
        out.at(x, y) = acc / (ch * double(maxval));
      }
  } else {
    is.ignore(1);  // single whitespace after maxval
    std::vector<unsigned char> buf(std::size_t(w) * h * ch);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw std::runtime_error("truncated image: " + path);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int c = 0; c < ch; ++c) acc += buf[(std::size_t(y) * w + x) * ch + c];
        out.at(x, y) = acc / (ch * double(maxval));
      }
  }
  return out;
}

// ---- training pairs ----

// 64-bit staging form of a training pair; r is unscaled.
struct SamplePair {
  ComplexField r;
  ComplexField e;
  int model_id = 0;
};

struct TrainingSample {
  Tensor4 r_hat;   // (1, 2, n, n), = h^2 r
  Tensor4 e_true;  // (1, 2, n, n)
  int model_id = 0;
};

inline ComplexField random_complex_normal(int nx, int ny, Rng& rng) {
  ComplexField x(nx, ny);
  for (auto& z : x.v) z = Complex(rng.normal(), rng.normal());
  return x;
}

// x ~ CN(0, I); b = A x; x_tilde = FGMRES(A, M_V, b, 0, k in {1..k_max});
// r = b - A x_tilde; e = x - x_tilde. The FGMRES run keeps the solve-time
// 1e-6 stopping rule, so residuals never degenerate below the scale the
// preconditioner will ever see.
inline SamplePair gen_sample_pair(const HelmholtzProblem& p, const MultigridHierarchy& hier,
                                  std::uint64_t seed, int k_forced = -1, int k_max = 10) {
  Rng rng(seed);
  StencilOperator A(p, kHelmholtzShift);
  ComplexField x = random_complex_normal(p.grid.nx, p.grid.ny, rng);
  ComplexField b = A.apply(x);
  const int k = k_forced >= 0 ? k_forced : int(rng.uniform_int(1, k_max));
  ComplexField xt(p.grid.nx, p.grid.ny);
  if (k > 0) {
    KrylovConfig kc;
    kc.restart = 10;
    kc.max_iters = k;
    kc.rel_tol = 1e-6;
    LinearOp apply_A = [&A](const ComplexField& u) { return A.apply(u); };
    LinearOp apply_M = [&hier](const ComplexField& r) {
      return hier.cycle(ComplexField(r.nx, r.ny), r);
    };
    xt = fgmres(apply_A, apply_M, b, xt, kc).first;
  }
  SamplePair s;
  s.r = A.residual(xt, b);
  s.e = x;
  for (std::size_t i = 0; i < s.e.v.size(); ++i) s.e.v[i] -= xt.v[i];
  return s;
}

inline double rel_residual_defect(const StencilOperator& A, const ComplexField& e,
                                  const ComplexField& r) {
  ComplexField ae = A.apply(e);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ae.v.size(); ++i) {
    num += std::norm(ae.v[i] - r.v[i]);
    den += std::norm(r.v[i]);
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

// (ca a + cb b) for both residual and error; linearity keeps A e = r.
inline SamplePair combine_pair(const SamplePair& a, const SamplePair& b, Complex ca, Complex cb) {
  SamplePair s;
  s.model_id = a.model_id;
  s.r = ComplexField(a.r.nx, a.r.ny);
  s.e = ComplexField(a.e.nx, a.e.ny);
  for (std::size_t j = 0; j < s.r.v.size(); ++j) {
    s.r.v[j] = ca * a.r.v[j] + cb * b.r.v[j];
    s.e.v[j] = ca * a.e.v[j] + cb * b.e.v[j];
  }
  return s;
}

// Expands a per-model set by random 2-sample complex combinations,
// rescaled so ||h^2 r|| matches the source median. Combinations whose
// residuals nearly cancel are redrawn.
inline std::vector<SamplePair> augment_samples(const std::vector<SamplePair>& base, int count,
                                               std::uint64_t seed) {
  if (count == 0) return {};
  if (base.size() < 2) throw std::invalid_argument("augmentation needs at least 2 samples");
  Rng rng(seed ^ 0xa6000000ULL);
  std::vector<double> norms;
  norms.reserve(base.size());
  for (const auto& s : base) norms.push_back(norm2(s.r));
  std::vector<double> sorted = norms;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];

  std::vector<SamplePair> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int ia = int(rng.uniform_int(0, std::int64_t(base.size()) - 1));
      int ib = int(rng.uniform_int(0, std::int64_t(base.size()) - 2));
      if (ib >= ia) ++ib;
      // unit-disk complex coefficients
      auto draw_coeff = [&rng]() {
        while (true) {
          const double re = rng.uniform(-1.0, 1.0), im = rng.uniform(-1.0, 1.0);
          if (re * re + im * im <= 1.0) return Complex(re, im);
        }
      };
      const Complex ca = draw_coeff(), cb = draw_coeff();
      SamplePair s = combine_pair(base[ia], base[ib], ca, cb);
      const double n = norm2(s.r);
      if (n < 0.3 * std::max(norms[ia], norms[ib])) continue;  // cancellation; redraw
      const double scale = median / n;
      for (std::size_t j = 0; j < s.r.v.size(); ++j) {
        s.r.v[j] *= scale;
        s.e.v[j] *= scale;
      }
      out.push_back(std::move(s));
      break;
    }
  }
  return out;
}

inline TrainingSample quantize_sample(const SamplePair& s, double h) {
  const double h2 = h * h;
  TrainingSample t;
  t.model_id = s.model_id;
  t.r_hat = Tensor4(1, 2, s.r.ny, s.r.nx);
  t.e_true = Tensor4(1, 2, s.e.ny, s.e.nx);
  for (int y = 0; y < s.r.ny; ++y)
    for (int x = 0; x < s.r.nx; ++x) {
      t.r_hat.at(0, 0, y, x) = float(h2 * s.r.at(x, y).real());
      t.r_hat.at(0, 1, y, x) = float(h2 * s.r.at(x, y).imag());
      t.e_true.at(0, 0, y, x) = float(s.e.at(x, y).real());
      t.e_true.at(0, 1, y, x) = float(s.e.at(x, y).imag());
    }
  return t;
}

inline ComplexField unquantize_channels(const Tensor4& t, double scale) {
  ComplexField f(t.w, t.h);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      f.at(x, y) = Complex(double(t.at(0, 0, y, x)) * scale, double(t.at(0, 1, y, x)) * scale);
  return f;
}

// ---- dataset on disk: records + index + meta sidecar ----

struct DatasetSpec {
  int nx = 64, ny = 64;
  double omega = 10.0 * M_PI;
  int abl_width = 10;
  double gamma_max = 0.5;
  SlownessRange range;
  int models = 50;
  int samples_per_model = 28;
  int augment_per_model = 12;
  std::uint64_t seed = 1;
  int mg_levels = 3;
  int k_max = 10;  // upper bound of the random FGMRES iteration draw
};

struct Dataset {
  std::vector<TrainingSample> samples;
  std::vector<HelmholtzProblem> problems;  // one per model
  std::vector<std::string> model_refs;
  DatasetSpec spec;

  const HelmholtzProblem& problem_of(const TrainingSample& s) const {
    return problems[s.model_id];
  }
};

namespace datadet {

inline void append_channel_slw1(std::ostream& os, const Tensor4& t, int channel) {
  os.write("SLW1", 4);
  detail::put_u32(os, std::uint32_t(t.w));
  detail::put_u32(os, std::uint32_t(t.h));
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) detail::put_f32(os, t.at(0, channel, y, x));
}

inline Tensor4 read_two_channel(std::istream& is) {
  RealField a = read_slw1(is);
  RealField b = read_slw1(is);
  if (!a.same_shape(b)) throw std::runtime_error("dataset channel shape mismatch");
  Tensor4 t(1, 2, a.ny, a.nx);
  for (int y = 0; y < a.ny; ++y)
    for (int x = 0; x < a.nx; ++x) {
      t.at(0, 0, y, x) = float(a.at(x, y));
      t.at(0, 1, y, x) = float(b.at(x, y));
    }
  return t;
}

}  // namespace datadet

inline HelmholtzProblem problem_for_model(const DatasetSpec& spec, SlownessSquared kappa2) {
  auto grid = make_grid(spec.nx, spec.ny, spec.mg_levels);
  return make_problem(grid, spec.omega, std::move(kappa2),
                      make_absorbing_layer(grid, spec.abl_width, spec.gamma_max));
}

// Builds the per-model problems, generates base + augmented pairs, checks
// the A e = r invariant in 64-bit, quantizes to the float32 storage form
// and re-checks at the stated 32-bit threshold.
inline Dataset build_dataset(const DatasetSpec& spec, const std::string& model_dir) {
  std::filesystem::create_directories(model_dir);
  Dataset ds;
  ds.spec = spec;
  VCycleConfig vcfg;
  vcfg.levels = spec.mg_levels;
  for (int m = 0; m < spec.models; ++m) {
    auto kappa2 = synthetic_slowness(spec.seed * 1000003ULL + m, make_grid(spec.nx, spec.ny, spec.mg_levels), spec.range);
    const std::string ref = "model_" + std::to_string(m) + ".slw";
    write_slw1(model_dir + "/" + ref, kappa2.values);
    ds.model_refs.push_back(ref);
    ds.problems.push_back(problem_for_model(spec, std::move(kappa2)));
  }
  for (int m = 0; m < spec.models; ++m) {
    const auto& p = ds.problems[m];
    MultigridHierarchy hier(p, vcfg);
    StencilOperator A(p, kHelmholtzShift);
    std::vector<SamplePair> base;
    base.reserve(spec.samples_per_model);
    for (int i = 0; i < spec.samples_per_model; ++i) {
      SamplePair s =
          gen_sample_pair(p, hier, spec.seed ^ (std::uint64_t(m) << 24 | unsigned(i)), -1, spec.k_max);
      s.model_id = m;
      if (rel_residual_defect(A, s.e, s.r) > 1e-10)
        throw std::runtime_error("sample invariant violated at generation");
      base.push_back(std::move(s));
    }
    std::vector<SamplePair> extra =
        spec.augment_per_model > 0
            ? augment_samples(base, spec.augment_per_model, spec.seed + 7919 * m)
            : std::vector<SamplePair>{};
    for (const auto* pool : {&base, &extra})
      for (const auto& s : *pool) {
        TrainingSample t = quantize_sample(s, p.grid.h);
        // 32-bit storage must still satisfy the defect bound
        ComplexField r32 = unquantize_channels(t.r_hat, 1.0 / (p.grid.h * p.grid.h));
        ComplexField e32 = unquantize_channels(t.e_true, 1.0);
        if (rel_residual_defect(A, e32, r32) > 1e-5)
          throw std::runtime_error("sample invariant violated after quantization");
        ds.samples.push_back(std::move(t));
      }
  }
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& prefix) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write dataset: " + prefix + ".bin");
  std::vector<std::uint64_t> offsets;
  offsets.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    offsets.push_back(std::uint64_t(bin.tellp()));
    const std::string& ref = ds.model_refs[s.model_id];
    detail::put_u32(bin, std::uint32_t(ref.size()));
    bin.write(ref.data(), std::streamsize(ref.size()));
    datadet::append_channel_slw1(bin, s.r_hat, 0);
    datadet::append_channel_slw1(bin, s.r_hat, 1);
    datadet::append_channel_slw1(bin, s.e_true, 0);
    datadet::append_channel_slw1(bin, s.e_true, 1);
  }
  std::ofstream idx(prefix + ".idx", std::ios::binary);
  idx.write("HIX1", 4);
  detail::put_u32(idx, std::uint32_t(offsets.size()));
  for (std::uint64_t o : offsets)
    for (int b = 0; b < 8; ++b) idx.put(char((o >> (8 * b)) & 0xff));

  nlohmann::json meta;
  meta["nx"] = ds.spec.nx;
  meta["ny"] = ds.spec.ny;
  meta["omega_pi"] = ds.spec.omega / M_PI;
  meta["abl_width"] = ds.spec.abl_width;
  meta["gamma_max"] = ds.spec.gamma_max;
  meta["range_lo"] = ds.spec.range.lo;
  meta["range_hi"] = ds.spec.range.hi;
  meta["seed"] = ds.spec.seed;
  meta["mg_levels"] = ds.spec.mg_levels;
  meta["count"] = ds.samples.size();
  meta["models"] = ds.model_refs;
  std::ofstream mj(prefix + ".meta");
  mj << meta.dump(2) << "\n";
}

// Loads records + index + meta and re-asserts the A e = r invariant on
// the stored 32-bit fields.
inline Dataset load_dataset(const std::string& prefix, const std::string& model_dir,
                            bool verify = true) {
  std::ifstream mj(prefix + ".meta");
  if (!mj) throw std::runtime_error("missing dataset meta: " + prefix + ".meta");
  nlohmann::json meta = nlohmann::json::parse(mj);
  Dataset ds;
  ds.spec.nx = meta.at("nx");
  ds.spec.ny = meta.at("ny");
  ds.spec.omega = double(meta.at("omega_pi")) * M_PI;
  ds.spec.abl_width = meta.at("abl_width");
  ds.spec.gamma_max = meta.at("gamma_max");
  ds.spec.range.lo = meta.at("range_lo");
  ds.spec.range.hi = meta.at("range_hi");
  ds.spec.seed = meta.at("seed");
  ds.spec.mg_levels = meta.at("mg_levels");
  ds.model_refs = meta.at("models").get<std::vector<std::string>>();
  std::map<std::string, int> ref_to_id;
  for (std::size_t m = 0; m < ds.model_refs.size(); ++m) {
    auto values = read_slw1(model_dir + "/" + ds.model_refs[m]);
    ds.problems.push_back(problem_for_model(
        ds.spec, make_slowness_squared(std::move(values), ds.spec.range.lo, ds.spec.range.hi)));
    ref_to_id[ds.model_refs[m]] = int(m);
  }

  std::ifstream idx(prefix + ".idx", std::ios::binary);
  if (!idx) throw std::runtime_error("missing dataset index: " + prefix + ".idx");
  char magic[4];
  idx.read(magic, 4);
  if (std::memcmp(magic, "HIX1", 4) != 0) throw std::runtime_error("bad index magic");
  const std::uint32_t count = detail::get_u32(idx);
  std::vector<std::uint64_t> offsets(count);
  for (auto& o : offsets) {
    o = 0;
    for (int b = 0; b < 8; ++b) {
      int c = idx.get();
      if (c < 0) throw std::runtime_error("truncated index");
      o |= std::uint64_t(c & 0xff) << (8 * b);
    }
  }
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("missing dataset records: " + prefix + ".bin");
  std::vector<StencilOperator> ops;
  if (verify)
    for (const auto& p : ds.problems) ops.emplace_back(p, kHelmholtzShift);
  for (std::uint64_t off : offsets) {
    bin.seekg(std::streamoff(off));
    const std::uint32_t ref_len = detail::get_u32(bin);
    std::string ref(ref_len, '\0');
    bin.read(ref.data(), ref_len);
    auto it = ref_to_id.find(ref);
    if (it == ref_to_id.end()) throw std::runtime_error("record references unknown model " + ref);
    TrainingSample s;
    s.model_id = it->second;
    s.r_hat = datadet::read_two_channel(bin);
    s.e_true = datadet::read_two_channel(bin);
    if (verify) {
      const double h = ds.problems[s.model_id].grid.h;
      ComplexField r = unquantize_channels(s.r_hat, 1.0 / (h * h));
      ComplexField e = unquantize_channels(s.e_true, 1.0);
      if (rel_residual_defect(ops[s.model_id], e, r) > 1e-5)
        throw std::runtime_error("dataset record violates A e = r at load");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace helm
