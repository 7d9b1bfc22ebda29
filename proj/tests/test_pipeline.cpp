#include <catch2/catch.hpp>
#include <filesystem>
#include <fstream>

#include "helmbench/bench.hpp"
#include "helmbench/checkpoint.hpp"
#include "helmbench/config.hpp"
#include "helmbench/datagen.hpp"
#include "helmbench/precond.hpp"
#include "helmbench/training.hpp"
#include "test_util.hpp"

using namespace helm;
using testutil::rel_diff;
using testutil::wavy_problem;

namespace fs = std::filesystem;

namespace {
std::string tmp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("helmbench_test_" + tag);
  fs::create_directories(d);
  return d.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}
}  // namespace

// ---------------- slowness pipelines ----------------

TEST_CASE("image_to_slowness") {
  auto grid = make_grid(8, 8, 1);
  SECTION("constant image maps to the constant hi") {
    RealField img(4, 4, 0.37);
    auto k2 = image_to_slowness(img, grid);
    for (double v : k2.values.v) CHECK(v == Approx(1.0));
  }
  SECTION("non-constant image attains both range endpoints exactly") {
    RealField img(4, 4);
    Rng rng(3);
    for (auto& v : img.v) v = rng.uniform();
    auto k2 = image_to_slowness(img, grid);
    double mn = 1e9, mx = -1e9;
    for (double v : k2.values.v) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    CHECK(mn == Approx(0.25).margin(1e-12));
    CHECK(mx == Approx(1.0).margin(1e-12));
  }
  SECTION("2x2 checkerboard matches an independent bilinear+blur reference") {
    RealField img(2, 2);
    img.at(0, 0) = 1.0;
    img.at(1, 1) = 1.0;
    auto k2 = image_to_slowness(img, grid);

    // independent reference computation of the documented pipeline
    auto ref_sample = [&](double sx, double sy) {
      const int x0 = std::clamp(int(std::floor(sx)), 0, 1), y0 = std::clamp(int(std::floor(sy)), 0, 1);
      const int x1 = std::min(x0 + 1, 1), y1 = std::min(y0 + 1, 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0), fy = std::clamp(sy - y0, 0.0, 1.0);
      return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
             fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
    };
    RealField up(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        up.at(x, y) = ref_sample((x + 0.5) * 2.0 / 8.0 - 0.5, (y + 0.5) * 2.0 / 8.0 - 0.5);
    double w[5], ws = 0;
    for (int i = -2; i <= 2; ++i) {
      w[i + 2] = std::exp(-0.5 * i * i);
      ws += w[i + 2];
    }
    for (double& x : w) x /= ws;
    RealField blur(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        double acc = 0;
        for (int a = -2; a <= 2; ++a)
          for (int b = -2; b <= 2; ++b)
            acc += w[a + 2] * w[b + 2] *
                   up.at(std::clamp(x + b, 0, 7), std::clamp(y + a, 0, 7));
        blur.at(x, y) = acc;
      }
    double mn = 1e9, mx = -1e9;
    for (double v : blur.v) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double expect = 0.25 + (blur.at(x, y) - mn) / (mx - mn) * 0.75;
        CHECK(k2.values.at(x, y) == Approx(expect).margin(1e-6));
      }
  }
  SECTION("empty image rejected") {
    RealField img;
    CHECK_THROWS(image_to_slowness(img, grid));
  }
}

TEST_CASE("synthetic_slowness") {
  auto grid = make_grid(128, 128);
  SECTION("same seed gives identical fields, different seeds differ") {
    auto a = synthetic_slowness(42, grid);
    auto b = synthetic_slowness(42, grid);
    CHECK(a.values.v == b.values.v);
    auto c = synthetic_slowness(43, grid);
    CHECK(a.values.v != c.values.v);
  }
  SECTION("range endpoints attained") {
    auto k2 = synthetic_slowness(7, grid);
    double mn = 1e9, mx = -1e9;
    for (double v : k2.values.v) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    CHECK(mn == Approx(0.25).margin(1e-12));
    CHECK(mx == Approx(1.0).margin(1e-12));
  }
  SECTION("smoothness: max adjacent difference below 0.3 over 100 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto k2 = synthetic_slowness(seed, grid);
      for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) {
          if (x + 1 < 128) worst = std::max(worst, std::abs(k2.values.at(x, y) - k2.values.at(x + 1, y)));
          if (y + 1 < 128) worst = std::max(worst, std::abs(k2.values.at(x, y) - k2.values.at(x, y + 1)));
        }
    }
    CHECK(worst < 0.3);
  }
}

TEST_CASE("netpbm loader handles P2/P5 grayscale and P3/P6 color") {
  const std::string dir = tmp_dir("pbm");
  {
    std::ofstream os(dir + "/a.pgm");
    os << "P2\n# comment\n2 2\n255\n0 64\n128 255\n";
  }
  auto a = load_netpbm(dir + "/a.pgm");
  CHECK(a.at(0, 0) == Approx(0.0));
  CHECK(a.at(1, 0) == Approx(64.0 / 255));
  CHECK(a.at(1, 1) == Approx(1.0));
  {
    std::ofstream os(dir + "/b.ppm", std::ios::binary);
    os << "P6\n2 1\n255\n";
    const unsigned char px[6] = {255, 0, 0, 0, 255, 255};
    os.write(reinterpret_cast<const char*>(px), 6);
  }
  auto b = load_netpbm(dir + "/b.ppm");
  CHECK(b.at(0, 0) == Approx(1.0 / 3));
  CHECK(b.at(1, 0) == Approx(2.0 / 3));
}

// ---------------- sample generation ----------------

TEST_CASE("gen_sample_pair") {
  auto p = wavy_problem(32, 10.0, 4, 3);
  VCycleConfig vcfg;
  MultigridHierarchy hier(p, vcfg);
  StencilOperator A(p, kHelmholtzShift);

  SECTION("k = 0 degenerates to x_tilde = 0") {
    auto s = gen_sample_pair(p, hier, 5, 0);
    // r = b = A x = A e
    CHECK(rel_residual_defect(A, s.e, s.r) < 1e-12);
    ComplexField ae = A.apply(s.e);
    CHECK(rel_diff(ae, s.r) < 1e-12);
  }
  SECTION("invariant A e = r holds per sample") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto s = gen_sample_pair(p, hier, seed);
      CHECK(rel_residual_defect(A, s.e, s.r) < 1e-10);
    }
  }
  SECTION("median ||r||/||b|| decreases with k in {1, 5, 10}") {
    std::map<int, double> med;
    for (int k : {1, 5, 10}) {
      std::vector<double> ratios;
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        ComplexField x = random_complex_normal(32, 32, rng);
        ComplexField b = A.apply(x);
        auto s = gen_sample_pair(p, hier, seed, k);
        ratios.push_back(norm2(s.r) / norm2(b));
      }
      med[k] = median(ratios);
    }
    CHECK(med[1] > med[5]);
    CHECK(med[5] > med[10]);
  }
}

TEST_CASE("augment_samples") {
  auto p = wavy_problem(16, 6.0, 2, 2);
  VCycleConfig vcfg;
  vcfg.levels = 2;
  MultigridHierarchy hier(p, vcfg);
  StencilOperator A(p, kHelmholtzShift);
  std::vector<SamplePair> base;
  for (std::uint64_t s = 0; s < 4; ++s) base.push_back(gen_sample_pair(p, hier, s));

  SECTION("coefficients (1, 0) reproduce the first sample exactly") {
    auto s = combine_pair(base[0], base[1], Complex(1, 0), Complex(0, 0));
    CHECK(s.r.v == base[0].r.v);
    CHECK(s.e.v == base[0].e.v);
  }
  SECTION("every augmented sample satisfies A e = r") {
    auto extra = augment_samples(base, 20, 99);
    REQUIRE(extra.size() == 20);
    for (const auto& s : extra) CHECK(rel_residual_defect(A, s.e, s.r) < 1e-10);
  }
  SECTION("count = 0 adds nothing") { CHECK(augment_samples(base, 0, 1).empty()); }
  SECTION("fewer than 2 inputs rejected") {
    std::vector<SamplePair> one{base[0]};
    CHECK_THROWS(augment_samples(one, 5, 1));
  }
}

TEST_CASE("dataset build, write, load round trip") {
  DatasetSpec spec;
  spec.nx = spec.ny = 16;
  spec.omega = 2.0 * M_PI;
  spec.abl_width = 2;
  spec.models = 3;
  spec.samples_per_model = 4;
  spec.augment_per_model = 2;
  spec.mg_levels = 2;
  spec.k_max = 2;
  spec.seed = 11;
  const std::string dir = tmp_dir("ds");
  auto ds = build_dataset(spec, dir + "/models");
  CHECK(int(ds.samples.size()) == 3 * 6);

  write_dataset(ds, dir + "/train");
  auto loaded = load_dataset(dir + "/train", dir + "/models", true);
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].model_id == ds.samples[i].model_id);
    CHECK(loaded.samples[i].r_hat.v == ds.samples[i].r_hat.v);
    CHECK(loaded.samples[i].e_true.v == ds.samples[i].e_true.v);
  }
  SECTION("dataset files are byte-reproducible from (seed, config)") {
    auto ds2 = build_dataset(spec, dir + "/models2");
    write_dataset(ds2, dir + "/train2");
    CHECK(file_bytes(dir + "/train.bin") == file_bytes(dir + "/train2.bin"));
    CHECK(file_bytes(dir + "/train.idx") == file_bytes(dir + "/train2.idx"));
  }
}

// ---------------- preconditioners ----------------

namespace {
struct SmallNetFixture {
  UNetConfig cfg;
  std::shared_ptr<NetworkWeights> weights = std::make_shared<NetworkWeights>(77);
  HelmholtzProblem p = wavy_problem(16, 6.0, 2, 2);

  SmallNetFixture() {
    cfg.base_channels = 8;
    // one train-mode pass creates parameters and seeds bn statistics
    Rng rng(5);
    Tensor4 input(1, 4, 16, 16);
    fill_normal(input, rng, 0.1f);
    unet_forward(*weights, cfg, input, true);
  }
};
}  // namespace

TEST_CASE("precond_V basics") {
  auto p = wavy_problem(16, 6.0, 2, 2);
  VCycleConfig vcfg;
  vcfg.levels = 2;
  auto hier = std::make_shared<MultigridHierarchy>(p, vcfg);
  SLVCyclePreconditioner MV(hier);
  SECTION("zero maps to zero") {
    ComplexField z(16, 16);
    CHECK(norm2(MV.apply_one(z)) == 0.0);
  }
  SECTION("equals v_cycle with zero initial guess") {
    Rng rng(7);
    auto r = testutil::random_field(16, 16, rng);
    auto lib = MV.apply_one(r);
    auto ref = hier->cycle(ComplexField(16, 16), r);
    CHECK(lib.v == ref.v);
  }
  SECTION("linear on random pairs with the dense coarsest solve") {
    VCycleConfig dcfg = vcfg;
    dcfg.coarse_solver = CoarseSolver::dense;
    auto dh = std::make_shared<MultigridHierarchy>(p, dcfg);
    SLVCyclePreconditioner MD(dh);
    Rng rng(8);
    auto a = testutil::random_field(16, 16, rng);
    auto b = testutil::random_field(16, 16, rng);
    const Complex ca(0.3, -1.2), cb(0.9, 0.4);
    ComplexField combo(16, 16);
    for (std::size_t i = 0; i < combo.v.size(); ++i) combo.v[i] = ca * a.v[i] + cb * b.v[i];
    auto mc = MD.apply_one(combo);
    auto ma = MD.apply_one(a);
    auto mb = MD.apply_one(b);
    ComplexField lin(16, 16);
    for (std::size_t i = 0; i < lin.v.size(); ++i) lin.v[i] = ca * ma.v[i] + cb * mb.v[i];
    CHECK(rel_diff(mc, lin) < 1e-8);
  }
}

TEST_CASE("precond_JU with a zeroed network degenerates to two chained Jacobi steps") {
  SmallNetFixture fx;
  zero_all_parameters(*fx.weights);
  mark_bn_initialized(*fx.weights);
  JacobiUnetPreconditioner MJU(fx.p, fx.weights, fx.cfg, NetVariant::standalone);
  StencilOperator A(fx.p, kHelmholtzShift);
  Rng rng(9);
  auto r = testutil::random_field(16, 16, rng);
  auto out = MJU.apply_one(r);
  ComplexField e1 = A.jacobi(ComplexField(16, 16), r, 0.8, 1);
  ComplexField ref = A.jacobi(e1, r, 0.8, 1);
  CHECK(rel_diff(out, ref) < 1e-12);
  SECTION("output finite and shaped on zero input") {
    ComplexField z(16, 16);
    auto oz = MJU.apply_one(z);
    CHECK(oz.nx == 16);
    CHECK(all_finite(oz));
  }
}

TEST_CASE("precond_VU with a zeroed network equals precond_V bit for bit") {
  SmallNetFixture fx;
  zero_all_parameters(*fx.weights);
  mark_bn_initialized(*fx.weights);
  VCycleConfig vcfg;
  vcfg.levels = 2;
  auto hier = std::make_shared<MultigridHierarchy>(fx.p, vcfg);
  SLVCyclePreconditioner MV(hier);
  UnetVCyclePreconditioner MVU(hier, fx.weights, fx.cfg, NetVariant::standalone);
  Rng rng(10);
  for (int rep = 0; rep < 3; ++rep) {
    auto r = testutil::random_field(16, 16, rng);
    auto a = MV.apply_one(r);
    auto b = MVU.apply_one(r);
    REQUIRE(a.v.size() == b.v.size());
    for (std::size_t i = 0; i < a.v.size(); ++i) {
      CHECK(a.v[i].real() == b.v[i].real());
      CHECK(a.v[i].imag() == b.v[i].imag());
    }
  }
}

TEST_CASE("network preconditioners demand the flexible solver") {
  SmallNetFixture fx;
  mark_bn_initialized(*fx.weights);
  JacobiUnetPreconditioner MJU(fx.p, fx.weights, fx.cfg, NetVariant::standalone);
  KrylovConfig cfg;
  cfg.flexible = false;
  CHECK_THROWS(check_flexible_contract(cfg, MJU));
  cfg.flexible = true;
  CHECK_NOTHROW(check_flexible_contract(cfg, MJU));
  VCycleConfig vcfg;
  vcfg.levels = 2;
  SLVCyclePreconditioner MV(std::make_shared<MultigridHierarchy>(fx.p, vcfg));
  cfg.flexible = false;
  CHECK_NOTHROW(check_flexible_contract(cfg, MV));
}

TEST_CASE("preconditioners map finite input to finite output of the same shape") {
  SmallNetFixture fx;
  mark_bn_initialized(*fx.weights);
  VCycleConfig vcfg;
  vcfg.levels = 2;
  auto hier = std::make_shared<MultigridHierarchy>(fx.p, vcfg);
  UnetVCyclePreconditioner MVU(hier, fx.weights, fx.cfg, NetVariant::standalone);
  JacobiUnetPreconditioner MJU(fx.p, fx.weights, fx.cfg, NetVariant::standalone);
  Rng rng(11);
  auto r = testutil::random_field(16, 16, rng);
  for (Preconditioner* M : {static_cast<Preconditioner*>(&MVU), static_cast<Preconditioner*>(&MJU)}) {
    auto out = M->apply_one(r);
    CHECK(out.nx == 16);
    CHECK(out.ny == 16);
    CHECK(all_finite(out));
  }
}

TEST_CASE("encoder-solver preconditioner reuses cached features bit-exactly") {
  UNetConfig cfg;
  cfg.base_channels = 8;
  auto w = std::make_shared<NetworkWeights>(31);
  auto p = wavy_problem(16, 6.0, 2, 2);
  {  // create parameters + bn stats for both nets
    Rng rng(12);
    Tensor4 input(1, 4, 16, 16);
    fill_normal(input, rng, 0.1f);
    auto fs = encoder_forward(*w, cfg, p.kappa2.values, true);
    solver_forward(*w, cfg, input, fs, true);
  }
  VCycleConfig vcfg;
  vcfg.levels = 2;
  auto hier = std::make_shared<MultigridHierarchy>(p, vcfg);
  UnetVCyclePreconditioner MVU(hier, w, cfg, NetVariant::encoder_solver);
  Rng rng(13);
  auto r = testutil::random_field(16, 16, rng);
  auto first = MVU.apply_one(r);
  for (int rep = 0; rep < 5; ++rep) {
    auto again = MVU.apply_one(r);
    CHECK(again.v == first.v);
  }
}

// ---------------- training ----------------

TEST_CASE("schedule matches the anchor sequence") {
  TrainConfig cfg;
  auto check = [&](int epoch, double lr, int batch) {
    auto [l, b] = schedule_at(epoch, cfg);
    CHECK(l == Approx(lr).epsilon(1e-12));
    CHECK(b == batch);
  };
  check(1, 1e-4, 20);
  check(48, 1e-4, 20);
  check(49, 1e-5, 40);   // first drop after t0 = 48
  check(72, 1e-5, 40);
  check(73, 1e-6, 80);   // anchors 48, 72, 84, 90, 93, ...
  check(84, 1e-6, 80);
  check(85, 1e-7, 160);
  check(90, 1e-7, 160);
  check(91, 1e-8, 320);
  check(93, 1e-8, 320);
  check(94, 1e-9, 640);
}

namespace {
Dataset tiny_dataset(int n_samples, std::uint64_t seed) {
  DatasetSpec spec;
  spec.nx = spec.ny = 16;
  spec.omega = 2.0 * M_PI;
  spec.abl_width = 2;
  spec.models = 1;
  spec.samples_per_model = n_samples;
  spec.augment_per_model = 0;
  spec.mg_levels = 2;
  spec.k_max = 2;
  spec.seed = seed;
  const std::string dir = tmp_dir("train_ds_" + std::to_string(seed));
  return build_dataset(spec, dir);
}
}  // namespace

TEST_CASE("training memorizes a one-sample dataset") {
  Dataset ds = tiny_dataset(1, 21);
  UNetConfig net;
  net.base_channels = 8;
  net.levels = 2;
  NetworkWeights w(41);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr0 = 1e-3;
  cfg.t0 = 400;  // constant learning rate for this overfit run
  cfg.val_fraction = 0.0;
  cfg.seed = 5;
  auto hist = train(ds, w, net, cfg);
  REQUIRE(int(hist.epochs.size()) == 200);
  // training loss is the squared error; a 10x loss drop is a sqrt(10)
  // drop of the relative error norm
  const double loss0 = std::pow(hist.epochs.front().mean_rel_error_train, 2);
  const double loss_end = std::pow(hist.epochs.back().mean_rel_error_train, 2);
  CHECK(loss_end < 0.1 * loss0);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  Dataset ds = tiny_dataset(6, 22);
  UNetConfig net;
  net.base_channels = 8;
  net.levels = 2;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.val_fraction = 0.2;
  cfg.seed = 9;
  NetworkWeights w1(51), w2(51);
  auto h1 = train(ds, w1, net, cfg);
  auto h2 = train(ds, w2, net, cfg);
  REQUIRE(h1.epochs.size() == h2.epochs.size());
  for (std::size_t i = 0; i < h1.epochs.size(); ++i) {
    CHECK(h1.epochs[i].mean_rel_error_train == h2.epochs[i].mean_rel_error_train);
    CHECK(h1.epochs[i].mean_rel_error_val == h2.epochs[i].mean_rel_error_val);
  }
  for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1.at(i).value.v == w2.at(i).value.v);
}

TEST_CASE("encoder-solver training runs and keeps weights finite") {
  Dataset ds = tiny_dataset(6, 23);
  UNetConfig net;
  net.base_channels = 8;
  net.levels = 2;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.encoder_solver = true;
  cfg.val_fraction = 0.2;
  NetworkWeights w(61);
  auto hist = train(ds, w, net, cfg);
  CHECK(int(hist.epochs.size()) == 2);
  CHECK(w.finite());
  CHECK(w.find("enc.down0.k") != nullptr);
  CHECK(w.find("sol.down0.k") != nullptr);
}

TEST_CASE("retrain with zero epochs leaves weights unchanged") {
  Dataset ds = tiny_dataset(2, 24);
  UNetConfig net;
  net.base_channels = 8;
  net.levels = 2;
  NetworkWeights w(71);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.val_fraction = 0.0;
  train(ds, w, net, cfg);
  std::vector<Tensor4> before;
  for (std::size_t i = 0; i < w.size(); ++i) before.push_back(w.at(i).value);
  auto hist = retrain(w, net, ds.problems[0], 10, 0, cfg, 3);
  CHECK(hist.epochs.empty());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w.at(i).value.v == before[i].v);
}

TEST_CASE("loss history csv schema") {
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.6, 1e-4, 20});
  std::ostringstream os;
  h.write_csv(os);
  CHECK(os.str() == "epoch,mean_rel_error_train,mean_rel_error_val,lr,batch\n1,0.5,0.6,0.0001,20\n");
}

// ---------------- checkpoint ----------------

TEST_CASE("checkpoint round trip") {
  SmallNetFixture fx;
  const std::string dir = tmp_dir("ckpt");
  const std::string path = dir + "/net.unw";
  save_checkpoint(*fx.weights, path, "deadbeef");

  NetworkWeights loaded(999);  // different init seed; contents come from the file
  const std::string digest = load_checkpoint(path, loaded);
  CHECK(digest == "deadbeef");
  REQUIRE(loaded.size() == fx.weights->size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.at(i).name == fx.weights->at(i).name);
    CHECK(loaded.at(i).value.v == fx.weights->at(i).value.v);
    CHECK(loaded.at(i).trainable == fx.weights->at(i).trainable);
  }
  SECTION("save -> load -> save is byte-identical") {
    const std::string path2 = dir + "/net2.unw";
    save_checkpoint(loaded, path2, digest);
    CHECK(file_bytes(path) == file_bytes(path2));
  }
  SECTION("corrupted magic is rejected with no partial load") {
    std::string bytes = file_bytes(path);
    bytes[0] = 'X';
    const std::string bad = dir + "/bad.unw";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    NetworkWeights w2(1);
    CHECK_THROWS(load_checkpoint(bad, w2));
    CHECK(w2.size() == 0);
  }
  SECTION("truncated file is rejected") {
    std::string bytes = file_bytes(path);
    bytes.resize(bytes.size() / 2);
    const std::string bad = dir + "/trunc.unw";
    std::ofstream(bad, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    NetworkWeights w2(1);
    CHECK_THROWS(load_checkpoint(bad, w2));
  }
}

TEST_CASE("reloaded checkpoint reproduces identical preconditioner output") {
  SmallNetFixture fx;
  mark_bn_initialized(*fx.weights);
  const std::string dir = tmp_dir("ckpt2");
  save_checkpoint(*fx.weights, dir + "/w.unw", "d");
  auto w2 = std::make_shared<NetworkWeights>(1);
  load_checkpoint(dir + "/w.unw", *w2);

  VCycleConfig vcfg;
  vcfg.levels = 2;
  auto hier = std::make_shared<MultigridHierarchy>(fx.p, vcfg);
  UnetVCyclePreconditioner a(hier, fx.weights, fx.cfg, NetVariant::standalone);
  UnetVCyclePreconditioner b(hier, w2, fx.cfg, NetVariant::standalone);
  Rng rng(14);
  auto r = testutil::random_field(16, 16, rng);
  CHECK(a.apply_one(r).v == b.apply_one(r).v);
}

// ---------------- config ----------------

TEST_CASE("experiment config") {
  SECTION("parses sections, values and overrides") {
    std::istringstream is(
        "[grid]\nnx = 64\nny = 64\n# comment\n[frequency]\nomega_pi = 10\n[krylov]\nrestart=10\n");
    auto cfg = ExperimentConfig::parse(is);
    CHECK(cfg.grid_nx() == 64);
    CHECK(cfg.omega() == Approx(10 * M_PI));
    cfg.set_override("grid.nx=128");
    CHECK(cfg.grid_nx() == 128);
  }
  SECTION("unknown keys are errors") {
    std::istringstream is("[grid]\nnnx = 64\n");
    CHECK_THROWS(ExperimentConfig::parse(is));
  }
  SECTION("unknown sections are errors") {
    std::istringstream is("[grids]\nnx = 64\n");
    CHECK_THROWS(ExperimentConfig::parse(is));
  }
  SECTION("digest is stable and value-dependent") {
    std::istringstream a("[grid]\nnx = 64\n"), b("[grid]\nnx = 64\n"), c("[grid]\nnx = 32\n");
    CHECK(ExperimentConfig::parse(a).digest() == ExperimentConfig::parse(b).digest());
    std::istringstream a2("[grid]\nnx = 64\n");
    CHECK(ExperimentConfig::parse(a2).digest() != ExperimentConfig::parse(c).digest());
  }
}

// ---------------- bench ----------------

TEST_CASE("convergence_factor") {
  SECTION("single-step million drop") {
    auto cf = convergence_factor({1.0, 1e-6});
    CHECK(cf.converged);
    CHECK(cf.T == 1);
    CHECK(cf.rho == Approx(1e-6));
  }
  SECTION("geometric 0.5 history converges at T = 20") {
    std::vector<double> h{1.0};
    for (int i = 0; i < 25; ++i) h.push_back(h.back() * 0.5);
    auto cf = convergence_factor(h);
    CHECK(cf.T == 20);
    CHECK(cf.rho == Approx(0.5));
  }
  SECTION("never reaching the drop is flagged") {
    auto cf = convergence_factor({1.0, 0.9, 0.8});
    CHECK_FALSE(cf.converged);
    CHECK(cf.T == 2);
    CHECK(std::isnan(cf.rho));
  }
  SECTION("empty and nonpositive histories are rejected") {
    CHECK_THROWS(convergence_factor({}));
    CHECK_THROWS(convergence_factor({0.0, 1.0}));
  }
}

TEST_CASE("run_benchmark smoke: M_V on a 64^2 homogeneous problem") {
  auto grid = make_grid(64, 64);
  auto p = homogeneous_problem(grid, 10.0 * M_PI);
  BenchSetup setup;
  setup.problem = p;
  setup.krylov.max_iters = 200;
  setup.preconditioners = {"v"};
  setup.block_size = 2;
  setup.rhs_seed = 3;
  const std::string dir = tmp_dir("bench");
  auto res = run_benchmark(setup, dir);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].all_converged);
  CHECK(res.all_converged);
  CHECK(fs::exists(dir + "/v.csv"));
  CHECK(fs::exists(dir + "/summary.csv"));

  SECTION("summary recomputed from the emitted CSV matches exactly") {
    std::ifstream is(dir + "/v.csv");
    std::string line;
    std::getline(is, line);  // header
    std::map<int, std::vector<double>> rel;
    while (std::getline(is, line)) {
      const auto c1 = line.find(','), c2 = line.rfind(',');
      const int rhs = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
      rel[rhs].push_back(std::stod(line.substr(c2 + 1)));
    }
    std::vector<double> Ts, rhos;
    for (auto& [rhs, h] : rel) {
      auto cf = convergence_factor(h);
      REQUIRE(cf.converged);
      Ts.push_back(double(cf.T));
      rhos.push_back(cf.rho);
    }
    CHECK(median(Ts) == res.rows[0].T_median);
    CHECK(median(rhos) == Approx(res.rows[0].rho_median).epsilon(1e-9));
  }
  SECTION("identical seeds give identical csv bytes") {
    const std::string dir2 = tmp_dir("bench2");
    run_benchmark(setup, dir2);
    CHECK(file_bytes(dir + "/v.csv") == file_bytes(dir2 + "/v.csv"));
    CHECK(file_bytes(dir + "/summary.csv") == file_bytes(dir2 + "/summary.csv"));
  }
}
