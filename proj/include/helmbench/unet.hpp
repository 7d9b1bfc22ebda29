#pragma once
#include <map>
#include <memory>

#include "helmbench/autodiff.hpp"

namespace helm {

// Named parameter registry. Creation order is the canonical checkpoint
// order; addresses are stable for the lifetime of the registry.
class NetworkWeights {
 public:
  explicit NetworkWeights(std::uint64_t init_seed = 0x5eedULL) : rng_(init_seed) {}

  // kernel (c_out, c_in, k, k), uniform +-1/sqrt(c_in * k * k)
  Param& kernel(const std::string& name, int cout, int cin, int k) {
    if (Param* p = find(name)) {
      check_dims(*p, cout, cin, k, k);
      return *p;
    }
    Param& p = create(name, Tensor4(cout, cin, k, k), true);
    const float bound = 1.0f / std::sqrt(float(cin) * k * k);
    fill_uniform(p.value, rng_, -bound, bound);
    return p;
  }

  Param& vec(const std::string& name, int c, float fill, bool trainable = true) {
    if (Param* p = find(name)) {
      check_dims(*p, 1, c, 1, 1);
      return *p;
    }
    return create(name, Tensor4(1, c, 1, 1, fill), trainable);
  }

  // create-or-validate with explicit dims (checkpoint loading path)
  Param& ensure(const std::string& name, const Tensor4& like, bool trainable) {
    if (Param* p = find(name)) {
      check_dims(*p, like.n, like.c, like.h, like.w);
      return *p;
    }
    return create(name, Tensor4(like.n, like.c, like.h, like.w), trainable);
  }

  Param* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Param* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Param*> trainable() {
    std::vector<Param*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : params_)
      if (p->grad.size()) p->zero_grad();
  }

  bool finite() const {
    for (const auto& p : params_)
      if (!all_finite(p->value)) return false;
    return true;
  }

  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) {
        const bool is_buffer = p->name.find(".rmean") != std::string::npos ||
                               p->name.find(".rvar") != std::string::npos ||
                               p->name.find(".count") != std::string::npos;
        if (!is_buffer) p->trainable = trainable;
      }
  }

  std::size_t size() const { return params_.size(); }
  Param& at(std::size_t i) { return *params_[i]; }
  const Param& at(std::size_t i) const { return *params_[i]; }

 private:
  void check_dims(const Param& p, int n, int c, int h, int w) const {
    if (p.value.n != n || p.value.c != c || p.value.h != h || p.value.w != w)
      throw std::invalid_argument("parameter " + p.name + " dims changed");
  }

  Param& create(const std::string& name, Tensor4 value, bool trainable) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = std::move(value);
    p->trainable = trainable;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, std::size_t> index_;
  Rng rng_;
};

struct UNetConfig {
  int levels = 3;            // downsamplings; input dims divisible by 2^levels
  int base_channels = 16;
  int resnet_per_level = 1;
  int bottleneck_resnets = 3;
  int updown_kernel = 5;
  int res_kernel = 3;
};

// one feature map per hierarchy level, level l at dims n/2^l
struct FeatureStack {
  std::vector<Tensor4> f;
};

inline int solver_level_channels(const UNetConfig& c, int level) {
  return c.base_channels << (level - 1);  // level >= 1
}
inline int up_out_channels(const UNetConfig& c, int target_level) {
  return target_level >= 1 ? (c.base_channels << (target_level - 1)) : c.base_channels / 2;
}
inline int encoder_level_channels(const UNetConfig& c, int level) {
  return level == 0 ? c.base_channels / 2 : (c.base_channels << (level - 1));
}

namespace netdet {

inline int bn_layer(Tape& tape, NetworkWeights& w, const std::string& name, int x, int ch,
                    bool train) {
  Param& scale = w.vec(name + ".scale", ch, 1.0f);
  Param& offset = w.vec(name + ".offset", ch, 0.0f);
  Param& rmean = w.vec(name + ".rmean", ch, 0.0f, false);
  Param& rvar = w.vec(name + ".rvar", ch, 1.0f, false);
  Param& count = w.vec(name + ".count", 1, 0.0f, false);
  return tape.batch_norm(x, scale, offset, rmean, rvar, count, train);
}

// x <- elu(BN2(x + K2 elu(BN1(K1 x))))
inline int resnet_block(Tape& tape, NetworkWeights& w, const std::string& name, int x, int ch,
                        int k, bool train) {
  Param& k1 = w.kernel(name + ".k1", ch, ch, k);
  Param& b1 = w.vec(name + ".b1", ch, 0.0f);
  int t = tape.conv2d(x, k1, &b1, 1);
  t = bn_layer(tape, w, name + ".bn1", t, ch, train);
  t = tape.elu(t);
  Param& k2 = w.kernel(name + ".k2", ch, ch, k);
  Param& b2 = w.vec(name + ".b2", ch, 0.0f);
  t = tape.conv2d(t, k2, &b2, 1);
  int s = tape.add(x, t);
  s = bn_layer(tape, w, name + ".bn2", s, ch, train);
  return tape.elu(s);
}

}  // namespace netdet

// Builds the solver U-Net graph on the tape. With `features` empty this
// is the stand-alone network; otherwise the encoder's feature maps are
// concatenated before every down- and up-convolution. Returns the
// 2-channel output node.
inline int build_unet(Tape& tape, NetworkWeights& w, const UNetConfig& cfg, int input,
                      const std::string& prefix, const std::vector<int>& features, bool train) {
  const Tensor4& in_v = tape.value(input);
  if (in_v.h % (1 << cfg.levels) != 0 || in_v.w % (1 << cfg.levels) != 0)
    throw std::invalid_argument("input dims must be divisible by 2^levels");
  if (!features.empty() && int(features.size()) != cfg.levels + 1)
    throw std::invalid_argument("feature stack must have levels+1 entries");
  const bool es = !features.empty();
  const int in_ch = in_v.c;

  std::vector<int> skips(cfg.levels);
  skips[0] = input;
  int x = input;
  int cur_ch = in_ch;
  for (int l = 0; l < cfg.levels; ++l) {
    if (es) {
      x = tape.concat(x, features[l]);
      cur_ch += encoder_level_channels(cfg, l);
    }
    const int out_ch = solver_level_channels(cfg, l + 1);
    Param& k = w.kernel(prefix + "down" + std::to_string(l) + ".k", out_ch, cur_ch, cfg.updown_kernel);
    Param& b = w.vec(prefix + "down" + std::to_string(l) + ".b", out_ch, 0.0f);
    x = tape.conv2d(x, k, &b, 2);
    x = netdet::bn_layer(tape, w, prefix + "down" + std::to_string(l) + ".bn", x, out_ch, train);
    x = tape.elu(x);
    cur_ch = out_ch;
    if (l < cfg.levels - 1) {
      for (int r = 0; r < cfg.resnet_per_level; ++r)
        x = netdet::resnet_block(tape, w, prefix + "res" + std::to_string(l + 1) + "_" + std::to_string(r),
                                 x, cur_ch, cfg.res_kernel, train);
      skips[l + 1] = x;
    }
  }
  for (int r = 0; r < cfg.bottleneck_resnets; ++r)
    x = netdet::resnet_block(tape, w, prefix + "bot" + std::to_string(r), x, cur_ch, cfg.res_kernel, train);

  for (int s = cfg.levels; s >= 1; --s) {
    const int target = s - 1;
    if (es) {
      x = tape.concat(x, features[s]);
      cur_ch += encoder_level_channels(cfg, s);
    }
    x = tape.elu(x);
    const int out_ch = up_out_channels(cfg, target);
    Param& k = w.kernel(prefix + "up" + std::to_string(target) + ".k", cur_ch, out_ch, cfg.updown_kernel);
    Param& b = w.vec(prefix + "up" + std::to_string(target) + ".b", out_ch, 0.0f);
    x = tape.conv2d_transpose(x, k, &b, 2);
    x = netdet::bn_layer(tape, w, prefix + "up" + std::to_string(target) + ".bn", x, out_ch, train);
    const int skip_ch = target >= 1 ? solver_level_channels(cfg, target) : in_ch;
    x = tape.concat(x, skips[target]);
    cur_ch = out_ch + skip_ch;
  }
  Param& ko = w.kernel(prefix + "out.k", 2, cur_ch, 3);
  Param& bo = w.vec(prefix + "out.b", 2, 0.0f);
  return tape.conv2d(x, ko, &bo, 1);
}

// Contraction path of a U-Net over the slowness model alone: an entry
// 3x3 convolution at the fine level, then down-conv + ResNet per level.
// Emits levels+1 feature nodes, level l at dims n/2^l.
inline std::vector<int> build_encoder(Tape& tape, NetworkWeights& w, const UNetConfig& cfg,
                                      int kappa_input, const std::string& prefix, bool train) {
  const Tensor4& in_v = tape.value(kappa_input);
  if (in_v.c != 1) throw std::invalid_argument("encoder expects a single kappa^2 channel");
  std::vector<int> features;
  int cur_ch = encoder_level_channels(cfg, 0);
  Param& ke = w.kernel(prefix + "entry.k", cur_ch, 1, cfg.res_kernel);
  Param& be = w.vec(prefix + "entry.b", cur_ch, 0.0f);
  int x = tape.conv2d(kappa_input, ke, &be, 1);
  x = netdet::bn_layer(tape, w, prefix + "entry.bn", x, cur_ch, train);
  x = tape.elu(x);
  features.push_back(x);
  for (int l = 0; l < cfg.levels; ++l) {
    const int out_ch = encoder_level_channels(cfg, l + 1);
    Param& k = w.kernel(prefix + "down" + std::to_string(l) + ".k", out_ch, cur_ch, cfg.updown_kernel);
    Param& b = w.vec(prefix + "down" + std::to_string(l) + ".b", out_ch, 0.0f);
    x = tape.conv2d(x, k, &b, 2);
    x = netdet::bn_layer(tape, w, prefix + "down" + std::to_string(l) + ".bn", x, out_ch, train);
    x = tape.elu(x);
    cur_ch = out_ch;
    for (int r = 0; r < cfg.resnet_per_level; ++r)
      x = netdet::resnet_block(tape, w, prefix + "res" + std::to_string(l + 1) + "_" + std::to_string(r),
                               x, cur_ch, cfg.res_kernel, train);
    features.push_back(x);
  }
  return features;
}

// --- inference wrappers (fresh no-grad tape per call) ---

inline Tensor4 unet_forward(NetworkWeights& w, const UNetConfig& cfg, const Tensor4& input,
                            bool train = false) {
  Tape tape(false);
  const int in = tape.leaf(input);
  const int out = build_unet(tape, w, cfg, in, "unet.", {}, train);
  return tape.value(out);
}

inline FeatureStack encoder_forward(NetworkWeights& w, const UNetConfig& cfg,
                                    const RealField& kappa2, bool train = false) {
  Tensor4 kt(1, 1, kappa2.ny, kappa2.nx);
  for (int y = 0; y < kappa2.ny; ++y)
    for (int x = 0; x < kappa2.nx; ++x) kt.at(0, 0, y, x) = float(kappa2.at(x, y));
  Tape tape(false);
  const int in = tape.leaf(std::move(kt));
  const auto nodes = build_encoder(tape, w, cfg, in, "enc.", train);
  FeatureStack fs;
  fs.f.reserve(nodes.size());
  for (int id : nodes) fs.f.push_back(tape.value(id));
  return fs;
}

inline Tensor4 solver_forward(NetworkWeights& w, const UNetConfig& cfg, const Tensor4& input,
                              const FeatureStack& features, bool train = false) {
  Tape tape(false);
  const int in = tape.leaf(input);
  std::vector<int> fnodes;
  fnodes.reserve(features.f.size());
  for (const auto& t : features.f) {
    Tensor4 tiled = t.n == input.n ? t : tile_batch(t, input.n);
    fnodes.push_back(tape.leaf(std::move(tiled)));
  }
  const int out = build_unet(tape, w, cfg, in, "sol.", fnodes, train);
  return tape.value(out);
}

// test helper: marks every batch-norm layer as having seen statistics so
// eval mode is usable on hand-constructed weights
inline void mark_bn_initialized(NetworkWeights& w) {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.at(i).name.find(".count") != std::string::npos) w.at(i).value.v[0] = 1.0f;
}

inline void zero_all_parameters(NetworkWeights& w) {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.at(i).name.find(".rvar") == std::string::npos &&
        w.at(i).name.find(".count") == std::string::npos)
      std::fill(w.at(i).value.v.begin(), w.at(i).value.v.end(), 0.0f);
}

}  // namespace helm
