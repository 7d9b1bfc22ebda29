#pragma once
#include <numeric>
#include <ostream>

#include "helmbench/adam.hpp"
#include "helmbench/datagen.hpp"
#include "helmbench/unet.hpp"

namespace helm {

struct TrainConfig {
  int epochs = 40;
  double lr0 = 1e-4;
  int batch0 = 20;
  int t0 = 48;
  double val_fraction = 0.1;
  bool encoder_solver = false;
  std::uint64_t seed = 1;
};

// Learning-rate / batch-size schedule: after t0 epochs divide the rate by
// 10 and double the batch, then again after t0/2, t0/4, ... epochs
// (anchors 48, 72, 84, 90, 93, ...). Pure in (epoch, cfg).
inline std::pair<double, int> schedule_at(int epoch, const TrainConfig& cfg) {
  int drops = 0;
  double anchor = cfg.t0;
  double gap = cfg.t0 / 2.0;
  while (epoch > anchor) {
    ++drops;
    anchor += std::max(1.0, std::round(gap));
    gap /= 2.0;
  }
  double lr = cfg.lr0;
  long long batch = cfg.batch0;
  for (int i = 0; i < drops; ++i) {
    lr /= 10.0;
    if (batch < (1 << 20)) batch *= 2;
  }
  return {lr, int(batch)};
}

struct EpochStats {
  int epoch = 0;
  double mean_rel_error_train = 0.0;
  double mean_rel_error_val = 0.0;
  double lr = 0.0;
  int batch = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  bool aborted_non_finite = false;

  void write_csv(std::ostream& os) const {
    os << "epoch,mean_rel_error_train,mean_rel_error_val,lr,batch\n";
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.mean_rel_error_train << ',' << e.mean_rel_error_val << ','
         << e.lr << ',' << e.batch << '\n';
  }
};

namespace traindet {

// (B,4,n,n) input and (B,2,n,n) target for a batch of samples
inline void assemble_batch(const Dataset& ds, const std::vector<int>& idx, std::size_t lo,
                           std::size_t hi, Tensor4& input, Tensor4& target, Tensor4& kappa) {
  const int B = int(hi - lo);
  const auto& first = ds.samples[idx[lo]];
  const int n = first.r_hat.w, m = first.r_hat.h;
  input = Tensor4(B, 4, m, n);
  target = Tensor4(B, 2, m, n);
  kappa = Tensor4(B, 1, m, n);
  for (int b = 0; b < B; ++b) {
    const auto& s = ds.samples[idx[lo + b]];
    const auto& p = ds.problem_of(s);
    for (int y = 0; y < m; ++y)
      for (int x = 0; x < n; ++x) {
        input.at(b, 0, y, x) = s.r_hat.at(0, 0, y, x);
        input.at(b, 1, y, x) = s.r_hat.at(0, 1, y, x);
        input.at(b, 2, y, x) = float(p.kappa2.values.at(x, y));
        input.at(b, 3, y, x) = float(p.gamma.values.at(x, y));
        target.at(b, 0, y, x) = s.e_true.at(0, 0, y, x);
        target.at(b, 1, y, x) = s.e_true.at(0, 1, y, x);
        kappa.at(b, 0, y, x) = float(p.kappa2.values.at(x, y));
      }
  }
}

// per-sample ||e_net - e_true|| / ||e_true||, accumulated
inline void accumulate_rel_errors(const Tensor4& out, const Tensor4& target, double& sum,
                                  std::size_t& count) {
  for (int b = 0; b < out.n; ++b) {
    double num = 0.0, den = 0.0;
    const float* o = out.batch_ptr(b);
    const float* t = target.batch_ptr(b);
    for (std::size_t i = 0; i < out.slab(); ++i) {
      const double d = double(o[i]) - t[i];
      num += d * d;
      den += double(t[i]) * t[i];
    }
    sum += std::sqrt(num) / (std::sqrt(den) + 1e-30);
    ++count;
  }
}

struct ForwardResult {
  double loss = 0.0;
  Tensor4 out;
};

// one forward (+ optional backward) over an assembled batch
inline ForwardResult run_batch(NetworkWeights& w, const UNetConfig& cfg, bool encoder_solver,
                               const Tensor4& input, const Tensor4& kappa, const Tensor4& target,
                               bool train_mode, bool with_grad,
                               const FeatureStack* frozen_features = nullptr) {
  Tape tape(with_grad);
  int out;
  if (encoder_solver) {
    std::vector<int> feats;
    if (frozen_features) {
      for (const auto& f : frozen_features->f)
        feats.push_back(tape.leaf(f.n == input.n ? f : tile_batch(f, input.n)));
    } else {
      feats = build_encoder(tape, w, cfg, tape.leaf(kappa), "enc.", train_mode);
    }
    out = build_unet(tape, w, cfg, tape.leaf(input), "sol.", feats, train_mode);
  } else {
    out = build_unet(tape, w, cfg, tape.leaf(input), "unet.", {}, train_mode);
  }
  const int loss = tape.mse_loss(out, tape.leaf(target));
  ForwardResult res;
  res.loss = tape.value(loss).v[0];
  res.out = tape.value(out);
  if (with_grad) tape.backward(loss);
  return res;
}

inline std::vector<Tensor4> snapshot(NetworkWeights& w) {
  std::vector<Tensor4> vals;
  vals.reserve(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) vals.push_back(w.at(i).value);
  return vals;
}

inline void restore(NetworkWeights& w, const std::vector<Tensor4>& vals) {
  for (std::size_t i = 0; i < vals.size(); ++i) w.at(i).value = vals[i];
}

}  // namespace traindet

// ADAM training over shuffled mini-batches with the paper schedule.
// encoder-solver mode trains both networks jointly through one tape.
// A non-finite loss aborts, restoring the last finite epoch's weights.
inline TrainHistory train(const Dataset& ds, NetworkWeights& w, const UNetConfig& net_cfg,
                          const TrainConfig& cfg) {
  if (ds.samples.empty()) throw std::invalid_argument("empty dataset");
  TrainHistory hist;
  Rng rng(cfg.seed);

  std::vector<int> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(0, std::int64_t(i) - 1)]);
  const std::size_t val_count = std::size_t(double(order.size()) * cfg.val_fraction);
  std::vector<int> val_idx(order.begin(), order.begin() + val_count);
  std::vector<int> train_idx(order.begin() + val_count, order.end());
  if (train_idx.empty()) throw std::invalid_argument("no training samples after split");

  AdamState adam;
  std::vector<Param*> trainable;
  Tensor4 input, target, kappa;
  std::vector<Tensor4> last_good;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto [lr, batch] = schedule_at(epoch, cfg);
    batch = std::min<int>(batch, int(train_idx.size()));
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[rng.uniform_int(0, std::int64_t(i) - 1)]);

    double rel_sum = 0.0;
    std::size_t rel_count = 0;
    bool finite = true;
    for (std::size_t lo = 0; lo < train_idx.size(); lo += batch) {
      const std::size_t hi = std::min(lo + batch, train_idx.size());
      traindet::assemble_batch(ds, train_idx, lo, hi, input, target, kappa);
      w.zero_grads();
      auto res = traindet::run_batch(w, net_cfg, cfg.encoder_solver, input, kappa, target, true, true);
      if (!std::isfinite(res.loss)) {
        finite = false;
        break;
      }
      if (trainable.empty()) trainable = w.trainable();
      adam_step(trainable, adam, lr);
      traindet::accumulate_rel_errors(res.out, target, rel_sum, rel_count);
    }
    if (!finite) {
      hist.aborted_non_finite = true;
      if (!last_good.empty()) traindet::restore(w, last_good);
      break;
    }

    double val_sum = 0.0;
    std::size_t val_n = 0;
    for (std::size_t lo = 0; lo < val_idx.size(); lo += batch) {
      const std::size_t hi = std::min(lo + std::size_t(batch), val_idx.size());
      traindet::assemble_batch(ds, val_idx, lo, hi, input, target, kappa);
      auto res = traindet::run_batch(w, net_cfg, cfg.encoder_solver, input, kappa, target, false, false);
      traindet::accumulate_rel_errors(res.out, target, val_sum, val_n);
    }

    EpochStats st;
    st.epoch = epoch;
    st.mean_rel_error_train = rel_count ? rel_sum / double(rel_count) : 0.0;
    st.mean_rel_error_val = val_n ? val_sum / double(val_n) : 0.0;
    st.lr = lr;
    st.batch = batch;
    hist.epochs.push_back(st);
    last_good = traindet::snapshot(w);
  }
  return hist;
}

// Solve-time fine-tuning on n_pairs fresh samples from one fixed model:
// lr0/10, batch 20, no schedule. In encoder-solver mode the encoder is
// frozen and its features are computed once up front.
inline TrainHistory retrain(NetworkWeights& w, const UNetConfig& net_cfg,
                            const HelmholtzProblem& p, int n_pairs, int epochs,
                            const TrainConfig& base_cfg, std::uint64_t seed) {
  TrainHistory hist;
  if (epochs == 0 || n_pairs == 0) return hist;
  VCycleConfig vcfg;
  MultigridHierarchy hier(p, vcfg);
  StencilOperator A(p, kHelmholtzShift);

  Dataset ds;
  ds.spec.nx = p.grid.nx;
  ds.spec.ny = p.grid.ny;
  ds.spec.omega = p.omega;
  ds.problems.push_back(p);
  ds.model_refs.push_back("(in-memory)");
  for (int i = 0; i < n_pairs; ++i) {
    SamplePair s = gen_sample_pair(p, hier, seed * 6151ULL + i);
    s.model_id = 0;
    ds.samples.push_back(quantize_sample(s, p.grid.h));
  }

  std::optional<FeatureStack> features;
  if (base_cfg.encoder_solver) {
    features = encoder_forward(w, net_cfg, p.kappa2.values, false);
    w.set_trainable_prefix("enc.", false);
  }

  Rng rng(seed);
  AdamState adam;
  std::vector<Param*> trainable;
  std::vector<int> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Tensor4 input, target, kappa;
  const double lr = base_cfg.lr0 / 10.0;
  const int batch = std::min<int>(20, int(idx.size()));
  std::vector<Tensor4> last_good = traindet::snapshot(w);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(0, std::int64_t(i) - 1)]);
    double rel_sum = 0.0;
    std::size_t rel_count = 0;
    bool finite = true;
    for (std::size_t lo = 0; lo < idx.size(); lo += batch) {
      const std::size_t hi = std::min(lo + std::size_t(batch), idx.size());
      traindet::assemble_batch(ds, idx, lo, hi, input, target, kappa);
      w.zero_grads();
      auto res = traindet::run_batch(w, net_cfg, base_cfg.encoder_solver, input, kappa, target,
                                     true, true, features ? &*features : nullptr);
      if (!std::isfinite(res.loss)) {
        finite = false;
        break;
      }
      if (trainable.empty()) trainable = w.trainable();
      adam_step(trainable, adam, lr);
      traindet::accumulate_rel_errors(res.out, target, rel_sum, rel_count);
    }
    if (!finite) {
      hist.aborted_non_finite = true;
      traindet::restore(w, last_good);
      break;
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_rel_error_train = rel_count ? rel_sum / double(rel_count) : 0.0;
    st.lr = lr;
    st.batch = batch;
    hist.epochs.push_back(st);
    last_good = traindet::snapshot(w);
  }
  if (base_cfg.encoder_solver) w.set_trainable_prefix("enc.", true);
  return hist;
}

}  // namespace helm
