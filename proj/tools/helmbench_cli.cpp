// helmbench: Helmholtz solver workbench with shifted-Laplacian multigrid
// and trained U-Net preconditioners.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "helmbench/bench.hpp"
#include "helmbench/checkpoint.hpp"
#include "helmbench/config.hpp"
#include "helmbench/gradcheck.hpp"
#include "helmbench/training.hpp"

namespace fs = std::filesystem;
using namespace helm;

namespace {

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::parse_file(path);
  for (const auto& o : overrides) cfg.set_override(o);
  return cfg;
}

std::shared_ptr<NetworkWeights> load_weights(const std::string& path, const ExperimentConfig& cfg,
                                             bool encoder_solver) {
  auto w = std::make_shared<NetworkWeights>();
  const std::string digest = load_checkpoint(path, *w);
  if (digest != cfg.digest())
    std::cerr << "note: checkpoint digest " << digest << " differs from config digest "
              << cfg.digest() << "\n";
  const char* probe = encoder_solver ? "sol.down0.k" : "unet.down0.k";
  if (!w->find(probe))
    throw std::runtime_error("checkpoint does not contain a " +
                             std::string(encoder_solver ? "encoder_solver" : "standalone") +
                             " network (missing " + probe + ")");
  if (encoder_solver && !w->find("enc.down0.k"))
    throw std::runtime_error("checkpoint is missing the encoder network");
  return w;
}

int cmd_gen_models(const ExperimentConfig& cfg, const std::string& out_dir, int count,
                   std::uint64_t seed) {
  fs::create_directories(out_dir);
  auto grid = make_grid(cfg.grid_nx(), cfg.grid_ny(), cfg.vcycle().levels);
  const SlownessRange range{cfg.get_num("slowness", "lo", 0.25), cfg.get_num("slowness", "hi", 1.0)};
  for (int i = 0; i < count; ++i) {
    auto k2 = synthetic_slowness(seed * 1000003ULL + i, grid, range);
    const std::string path = out_dir + "/model_" + std::to_string(i) + ".slw";
    write_slw1(path, k2.values);
    std::cout << path << "\n";
  }
  return 0;
}

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_prefix,
                 const std::string& model_dir) {
  DatasetSpec spec = cfg.dataset_spec();
  std::cout << "generating " << spec.models << " models x "
            << (spec.samples_per_model + spec.augment_per_model) << " samples at " << spec.nx
            << "x" << spec.ny << "\n";
  Dataset ds = build_dataset(spec, model_dir);
  write_dataset(ds, out_prefix);
  std::cout << "wrote " << ds.samples.size() << " samples to " << out_prefix << ".bin\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& data_prefix,
              const std::string& model_dir, const std::string& out_ckpt,
              const std::string& history_csv) {
  Dataset ds = load_dataset(data_prefix, model_dir, true);
  UNetConfig net = cfg.network();
  TrainConfig tc = cfg.training();
  NetworkWeights w(tc.seed);
  std::cout << "training " << (tc.encoder_solver ? "encoder-solver" : "stand-alone") << " for "
            << tc.epochs << " epochs on " << ds.samples.size() << " samples\n";
  TrainHistory hist = train(ds, w, net, tc);
  for (const auto& e : hist.epochs)
    if (e.epoch == 1 || e.epoch % 5 == 0 || e.epoch == tc.epochs)
      std::cout << "epoch " << e.epoch << " train " << e.mean_rel_error_train << " val "
                << e.mean_rel_error_val << "\n";
  if (!history_csv.empty()) {
    std::ofstream os(history_csv);
    hist.write_csv(os);
  }
  save_checkpoint(w, out_ckpt, cfg.digest());
  std::cout << "checkpoint: " << out_ckpt << "\n";
  return hist.aborted_non_finite ? 1 : 0;
}

int cmd_retrain(const ExperimentConfig& cfg, const std::string& in_ckpt,
                const std::string& model_path, const std::string& out_ckpt) {
  const bool es = cfg.encoder_solver();
  auto w = load_weights(in_ckpt, cfg, es);
  auto grid = make_grid(cfg.grid_nx(), cfg.grid_ny(), cfg.vcycle().levels);
  auto values = read_slw1(model_path);
  const SlownessRange range{cfg.get_num("slowness", "lo", 0.25), cfg.get_num("slowness", "hi", 1.0)};
  auto p = make_problem(grid, cfg.omega(),
                        make_slowness_squared(std::move(values), range.lo, range.hi),
                        make_absorbing_layer(grid, cfg.abl_width(), cfg.gamma_max()));
  TrainConfig tc = cfg.training();
  const int pairs = cfg.get_int("training", "retrain_pairs", 100);
  const int epochs = cfg.get_int("training", "retrain_epochs", 30);
  std::cout << "retraining on " << pairs << " pairs for " << epochs << " epochs\n";
  TrainHistory hist = retrain(*w, cfg.network(), p, pairs, epochs, tc, tc.seed + 17);
  if (!hist.epochs.empty())
    std::cout << "final train rel error " << hist.epochs.back().mean_rel_error_train << "\n";
  save_checkpoint(*w, out_ckpt, cfg.digest());
  std::cout << "checkpoint: " << out_ckpt << "\n";
  return hist.aborted_non_finite ? 1 : 0;
}

int cmd_bench(const ExperimentConfig& cfg, const std::vector<std::string>& preconds,
              const std::string& ckpt, const std::string& out_dir) {
  BenchSetup setup;
  setup.problem = problem_from_config(cfg);
  setup.krylov = cfg.krylov();
  setup.vcycle = cfg.vcycle();
  setup.net = cfg.network();
  setup.encoder_solver = cfg.encoder_solver();
  setup.preconditioners = preconds;
  setup.block_size = cfg.block_size();
  setup.rhs_seed = std::uint64_t(cfg.get_num("slowness", "seed", 1)) + 101;
  const bool needs_net = std::any_of(preconds.begin(), preconds.end(),
                                     [](const std::string& p) { return p != "v"; });
  if (needs_net) {
    if (ckpt.empty()) throw std::runtime_error("--checkpoint required for network preconditioners");
    setup.weights = load_weights(ckpt, cfg, setup.encoder_solver);
  }
  BenchResult res = run_benchmark(setup, out_dir);
  write_summary_table(res, std::cout);
  std::cout << "artifacts in " << out_dir << "\n";
  return res.all_converged ? 0 : 2;
}

int cmd_grad_check() {
  Rng rng(2024);
  UNetConfig cfg;
  cfg.base_channels = 8;
  NetworkWeights w(11);
  Tensor4 input(1, 4, 16, 16);
  fill_normal(input, rng);
  Tensor4 target(1, 2, 16, 16);
  fill_normal(target, rng);
  {
    Tape warm(false);
    build_unet(warm, w, cfg, warm.leaf(input), "unet.", {}, true);
  }
  auto loss = [&](bool with_grad) {
    Tape tape(with_grad);
    const int out = build_unet(tape, w, cfg, tape.leaf(input), "unet.", {}, true);
    const int l = tape.mse_loss(out, tape.leaf(target));
    if (with_grad) tape.backward(l);
    return double(tape.value(l).v[0]);
  };
  const double err = gradient_check(w.trainable(), loss, rng, 1e-3f, 3);
  std::cout << "full U-Net 16^2 gradient check: median relative error " << err
            << (err < 5e-3 ? " (ok)" : " (FAIL)") << "\n";
  return err < 5e-3 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Helmholtz solver workbench: shifted-Laplacian multigrid and U-Net preconditioners"};
  app.require_subcommand(1);

  std::string config_path, out, model_dir, data_prefix, ckpt, model_path, history_csv;
  std::vector<std::string> overrides, preconds{"v"};
  int count = 50;
  std::uint64_t seed = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file");
    sub->add_option("--set", overrides, "override section.key=value")->take_all();
  };

  auto* gm = app.add_subcommand("gen-models", "generate synthetic slowness models");
  add_common(gm);
  gm->add_option("--out", out, "output directory")->required();
  gm->add_option("--count", count, "number of models");
  gm->add_option("--seed", seed, "generator seed");

  auto* gd = app.add_subcommand("gen-data", "generate a training dataset");
  add_common(gd);
  gd->add_option("--out", out, "dataset prefix (writes .bin/.idx/.meta)")->required();
  gd->add_option("--models", model_dir, "model directory")->required();

  auto* tr = app.add_subcommand("train", "train a preconditioner network");
  add_common(tr);
  tr->add_option("--data", data_prefix, "dataset prefix")->required();
  tr->add_option("--models", model_dir, "model directory")->required();
  tr->add_option("--out", out, "output checkpoint")->required();
  tr->add_option("--history", history_csv, "loss history csv");

  auto* rt = app.add_subcommand("retrain", "fine-tune on one slowness model");
  add_common(rt);
  rt->add_option("--checkpoint", ckpt, "input checkpoint")->required();
  rt->add_option("--model", model_path, "slowness model (SLW1)")->required();
  rt->add_option("--out", out, "output checkpoint")->required();

  auto* so = app.add_subcommand("solve", "block FGMRES solve with one preconditioner");
  add_common(so);
  so->add_option("--precond", preconds, "preconditioner (v, ju, vu)")->expected(1);
  so->add_option("--checkpoint", ckpt, "network checkpoint");
  so->add_option("--out", out, "output directory")->required();

  auto* be = app.add_subcommand("bench", "compare preconditioners on one problem");
  add_common(be);
  be->add_option("--precond", preconds, "preconditioners to run")->delimiter(',');
  be->add_option("--checkpoint", ckpt, "network checkpoint");
  be->add_option("--out", out, "output directory")->required();

  app.add_subcommand("grad-check", "run the end-to-end network gradient check");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_config(config_path, overrides);
    if (gm->parsed()) return cmd_gen_models(cfg, out, count, seed);
    if (gd->parsed()) return cmd_gen_data(cfg, out, model_dir);
    if (tr->parsed()) return cmd_train(cfg, data_prefix, model_dir, out, history_csv);
    if (rt->parsed()) return cmd_retrain(cfg, ckpt, model_path, out);
    if (so->parsed() || be->parsed()) return cmd_bench(cfg, preconds, ckpt, out);
    return cmd_grad_check();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
