#pragma once
#include <Eigen/Core>
#include <functional>
#include <map>
#include <memory>

#include "helmbench/tensor.hpp"

namespace helm {

// Named parameter with a gradient buffer; addresses stay stable inside a
// NetworkWeights registry so tapes can hold plain pointers.
struct Param {
  std::string name;
  Tensor4 value;
  Tensor4 grad;
  bool trainable = true;

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0f); }
};

using MatX = Eigen::MatrixXf;
using MapM = Eigen::Map<MatX>;
using MapCM = Eigen::Map<const MatX>;
using RowM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowM>;
using MapCRM = Eigen::Map<const RowM>;

namespace convdet {

inline void check_conv_args(int k, int stride) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("conv kernel must be odd");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv stride must be 1 or 2");
}

inline int conv_out_dim(int in, int k, int stride) {
  const int pad = (k - 1) / 2;
  return (in + 2 * pad - k) / stride + 1;
}

// col(o, ci*k*k + ky*k + kx) = x[ci, oy*s+ky-p, ox*s+kx-p], zero padded.
// col is (Hout*Wout) x (Cin*k*k), column-major.
inline void im2col(const float* x, int cin, int hin, int win, int k, int stride, MatX& col) {
  const int pad = (k - 1) / 2;
  const int hout = conv_out_dim(hin, k, stride);
  const int wout = conv_out_dim(win, k, stride);
  col.resize(std::ptrdiff_t(hout) * wout, std::ptrdiff_t(cin) * k * k);
  for (int ci = 0; ci < cin; ++ci) {
    const float* xc = x + std::size_t(ci) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col.data() + std::size_t(col.rows()) * ((std::size_t(ci) * k + ky) * k + kx);
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= hin) {
            std::fill(dst, dst + wout, 0.0f);
            dst += wout;
            continue;
          }
          const float* src = xc + std::size_t(iy) * win;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            *dst++ = (ix < 0 || ix >= win) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

// scatter-add the col layout back: x[ci, oy*s+ky-p, ox*s+kx-p] += col(o, ...)
inline void col2im_add(const MatX& col, int cin, int hin, int win, int k, int stride, float* x) {
  const int pad = (k - 1) / 2;
  const int hout = conv_out_dim(hin, k, stride);
  const int wout = conv_out_dim(win, k, stride);
  for (int ci = 0; ci < cin; ++ci) {
    float* xc = x + std::size_t(ci) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col.data() + std::size_t(col.rows()) * ((std::size_t(ci) * k + ky) * k + kx);
        for (int oy = 0; oy < hout; ++oy, src += wout) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= hin) continue;
          float* dst = xc + std::size_t(iy) * win;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < win) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace convdet

// Eager reverse-mode tape over Tensor4 nodes. Each op computes its value
// at construction and registers a closure for the reverse sweep; leaves
// bound to Params flush their gradients back after backward().
class Tape {
 public:
  explicit Tape(bool grads_enabled = true) : grads_(grads_enabled) {}

  bool grads_enabled() const { return grads_; }

  int leaf(Tensor4 value, bool needs_grad = false) {
    return push(std::move(value), needs_grad && grads_, {});
  }

  int param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    const int id = push(p.value, grads_ && p.trainable, {});
    nodes_[id].bound = &p;
    param_nodes_[&p] = id;
    return id;
  }

  const Tensor4& value(int id) const { return nodes_[id].value; }
  Tensor4& grad(int id) { return nodes_[id].grad; }

  // y = conv(x, K) + bias; kernel layout (c_out, c_in, k, k), zero padding
  // (k-1)/2, cross-correlation semantics.
  int conv2d(int x, Param& kernel, Param* bias, int stride) {
    const Tensor4& xv = nodes_[x].value;
    const Tensor4& kv = kernel.value;
    convdet::check_conv_args(kv.h, stride);
    if (kv.h != kv.w) throw std::invalid_argument("conv kernel must be square");
    if (kv.c != xv.c) throw std::invalid_argument("conv kernel in-channels mismatch");
    if (stride == 2 && (xv.h % 2 != 0 || xv.w % 2 != 0))
      throw std::invalid_argument("stride-2 conv needs even dims");
    const int k = kv.h, cout = kv.n, cin = kv.c;
    const int hout = convdet::conv_out_dim(xv.h, k, stride);
    const int wout = convdet::conv_out_dim(xv.w, k, stride);
    Tensor4 out(xv.n, cout, hout, wout);
    const std::ptrdiff_t hw = std::ptrdiff_t(hout) * wout;
    const std::ptrdiff_t ck2 = std::ptrdiff_t(cin) * k * k;
    MapCM kmap(kv.v.data(), ck2, cout);
    MatX col;
    for (int b = 0; b < xv.n; ++b) {
      convdet::im2col(xv.batch_ptr(b), cin, xv.h, xv.w, k, stride, col);
      MapM y(out.batch_ptr(b), hw, cout);
      y.noalias() = col * kmap;
      if (bias)
        for (int co = 0; co < cout; ++co) y.col(co).array() += bias->value.v[co];
    }
    const int kid = param(kernel);
    const int bid = bias ? param(*bias) : -1;
    const int id = push(std::move(out), needs_grad({x, kid, bid}), {x, kid, bid});
    if (nodes_[id].needs_grad) {
      const int xi = x, stride_c = stride, k_c = k, cin_c = cin, cout_c = cout;
      nodes_[id].back = [this, id, xi, kid, bid, stride_c, k_c, cin_c, cout_c]() {
        const Tensor4& go = nodes_[id].grad;
        const Tensor4& xv2 = nodes_[xi].value;
        const Tensor4& kv2 = nodes_[kid].value;
        const std::ptrdiff_t hw2 = std::ptrdiff_t(go.h) * go.w;
        const std::ptrdiff_t ck2b = std::ptrdiff_t(cin_c) * k_c * k_c;
        MapCM kmap2(kv2.v.data(), ck2b, cout_c);
        MatX col, dcol;
        const bool want_dx = nodes_[xi].needs_grad;
        const bool want_dk = nodes_[kid].needs_grad;
        for (int b = 0; b < xv2.n; ++b) {
          MapCM gy(go.batch_ptr(b), hw2, cout_c);
          if (want_dk) {
            convdet::im2col(xv2.batch_ptr(b), cin_c, xv2.h, xv2.w, k_c, stride_c, col);
            MapM dk(nodes_[kid].grad.v.data(), ck2b, cout_c);
            dk.noalias() += col.transpose() * gy;
          }
          if (want_dx) {
            dcol.noalias() = gy * kmap2.transpose();
            convdet::col2im_add(dcol, cin_c, xv2.h, xv2.w, k_c, stride_c,
                                nodes_[xi].grad.batch_ptr(b));
          }
          if (bid >= 0 && nodes_[bid].needs_grad)
            for (int co = 0; co < cout_c; ++co) {
              const float* gp = go.batch_ptr(b) + std::size_t(co) * hw2;
              double s = 0.0;
              for (std::ptrdiff_t i = 0; i < hw2; ++i) s += gp[i];
              nodes_[bid].grad.v[co] += float(s);
            }
        }
      };
    }
    return id;
  }

  // z = conv2d^T(x, K) + bias: the exact adjoint (in x) of conv2d with the
  // same kernel. Kernel layout (c_in_of_the_conv_view = x channels,
  // c_out, k, k); stride 2 doubles the spatial dims, stride 1 keeps them.
  int conv2d_transpose(int x, Param& kernel, Param* bias, int stride) {
    const Tensor4& xv = nodes_[x].value;
    const Tensor4& kv = kernel.value;
    convdet::check_conv_args(kv.h, stride);
    if (kv.n != xv.c) throw std::invalid_argument("deconv kernel in-channels mismatch");
    const int k = kv.h, ca = kv.n, cb = kv.c;
    const int hout = xv.h * stride, wout = xv.w * stride;
    if (convdet::conv_out_dim(hout, k, stride) != xv.h)
      throw std::invalid_argument("deconv size contract violated");
    Tensor4 out(xv.n, cb, hout, wout);
    const std::ptrdiff_t hw_in = std::ptrdiff_t(xv.h) * xv.w;
    const std::ptrdiff_t cbk2 = std::ptrdiff_t(cb) * k * k;
    MapCRM kview(kv.v.data(), ca, cbk2);
    MatX dcol;
    for (int b = 0; b < xv.n; ++b) {
      MapCM u(xv.batch_ptr(b), hw_in, ca);
      dcol.noalias() = u * kview;
      convdet::col2im_add(dcol, cb, hout, wout, k, stride, out.batch_ptr(b));
      if (bias) {
        MapM z(out.batch_ptr(b), std::ptrdiff_t(hout) * wout, cb);
        for (int co = 0; co < cb; ++co) z.col(co).array() += bias->value.v[co];
      }
    }
    const int kid = param(kernel);
    const int bid = bias ? param(*bias) : -1;
    const int id = push(std::move(out), needs_grad({x, kid, bid}), {x, kid, bid});
    if (nodes_[id].needs_grad) {
      const int xi = x, stride_c = stride, k_c = k, ca_c = ca, cb_c = cb;
      nodes_[id].back = [this, id, xi, kid, bid, stride_c, k_c, ca_c, cb_c]() {
        const Tensor4& go = nodes_[id].grad;
        const Tensor4& xv2 = nodes_[xi].value;
        const Tensor4& kv2 = nodes_[kid].value;
        const std::ptrdiff_t hw_in2 = std::ptrdiff_t(xv2.h) * xv2.w;
        const std::ptrdiff_t cbk2b = std::ptrdiff_t(cb_c) * k_c * k_c;
        MapCRM kview2(kv2.v.data(), ca_c, cbk2b);
        MatX col;
        for (int b = 0; b < xv2.n; ++b) {
          convdet::im2col(go.batch_ptr(b), cb_c, go.h, go.w, k_c, stride_c, col);
          if (nodes_[xi].needs_grad) {
            MapM du(nodes_[xi].grad.batch_ptr(b), hw_in2, ca_c);
            du.noalias() += col * kview2.transpose();
          }
          if (nodes_[kid].needs_grad) {
            MapCM u(xv2.batch_ptr(b), hw_in2, ca_c);
            MapRM dk(nodes_[kid].grad.v.data(), ca_c, cbk2b);
            dk.noalias() += u.transpose() * col;
          }
          if (bid >= 0 && nodes_[bid].needs_grad) {
            const std::ptrdiff_t hw_out = std::ptrdiff_t(go.h) * go.w;
            for (int co = 0; co < cb_c; ++co) {
              const float* gp = go.batch_ptr(b) + std::size_t(co) * hw_out;
              double s = 0.0;
              for (std::ptrdiff_t i = 0; i < hw_out; ++i) s += gp[i];
              nodes_[bid].grad.v[co] += float(s);
            }
          }
        }
      };
    }
    return id;
  }

  // Per-channel batch normalization. Train mode normalizes with biased
  // batch statistics and folds them into the running buffers (momentum
  // 0.9); eval mode uses the running buffers and requires at least one
  // prior update.
  int batch_norm(int x, Param& scale, Param& offset, Param& running_mean, Param& running_var,
                 Param& update_count, bool train, float eps = 1e-5f, float momentum = 0.9f) {
    const Tensor4& xv = nodes_[x].value;
    const int C = xv.c;
    if (scale.value.size() != std::size_t(C) || offset.value.size() != std::size_t(C))
      throw std::invalid_argument("batch_norm channel mismatch");
    if (!train && update_count.value.v[0] <= 0.0f)
      throw std::runtime_error("batch_norm eval mode before any running-stat update");
    const std::size_t plane = xv.plane();
    const double count = double(xv.n) * plane;
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    if (train) {
      for (int b = 0; b < xv.n; ++b)
        for (int ch = 0; ch < C; ++ch) {
          const float* p = xv.batch_ptr(b) + ch * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          mean[ch] += s;
        }
      for (int ch = 0; ch < C; ++ch) mean[ch] /= count;
      for (int b = 0; b < xv.n; ++b)
        for (int ch = 0; ch < C; ++ch) {
          const float* p = xv.batch_ptr(b) + ch * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean[ch];
            s += d * d;
          }
          var[ch] += s;
        }
      for (int ch = 0; ch < C; ++ch) var[ch] /= count;
      for (int ch = 0; ch < C; ++ch) {
        running_mean.value.v[ch] = momentum * running_mean.value.v[ch] + (1.0f - momentum) * float(mean[ch]);
        running_var.value.v[ch] = momentum * running_var.value.v[ch] + (1.0f - momentum) * float(var[ch]);
      }
      update_count.value.v[0] += 1.0f;
    } else {
      for (int ch = 0; ch < C; ++ch) {
        mean[ch] = running_mean.value.v[ch];
        var[ch] = running_var.value.v[ch];
      }
    }
    auto inv_std = std::make_shared<std::vector<float>>(C);
    auto mean_f = std::make_shared<std::vector<float>>(C);
    for (int ch = 0; ch < C; ++ch) {
      (*inv_std)[ch] = float(1.0 / std::sqrt(var[ch] + double(eps)));
      (*mean_f)[ch] = float(mean[ch]);
    }
    Tensor4 out(xv.n, C, xv.h, xv.w);
    for (int b = 0; b < xv.n; ++b)
      for (int ch = 0; ch < C; ++ch) {
        const float* p = xv.batch_ptr(b) + ch * plane;
        float* q = out.batch_ptr(b) + ch * plane;
        const float is = (*inv_std)[ch], mu = (*mean_f)[ch];
        const float g = scale.value.v[ch], be = offset.value.v[ch];
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * g + be;
      }
    const int sid = param(scale), oid = param(offset);
    const int id = push(std::move(out), needs_grad({x, sid, oid}), {x, sid, oid});
    if (nodes_[id].needs_grad) {
      const int xi = x;
      const bool train_c = train;
      nodes_[id].back = [this, id, xi, sid, oid, inv_std, mean_f, train_c]() {
        const Tensor4& go = nodes_[id].grad;
        const Tensor4& xv2 = nodes_[xi].value;
        const Tensor4& sv = nodes_[sid].value;
        const int C2 = xv2.c;
        const std::size_t plane2 = xv2.plane();
        const double cnt = double(xv2.n) * plane2;
        for (int ch = 0; ch < C2; ++ch) {
          const float is = (*inv_std)[ch], mu = (*mean_f)[ch], g = sv.v[ch];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < xv2.n; ++b) {
            const float* gp = go.batch_ptr(b) + ch * plane2;
            const float* xp = xv2.batch_ptr(b) + ch * plane2;
            for (std::size_t i = 0; i < plane2; ++i) {
              sum_dy += gp[i];
              sum_dy_xhat += double(gp[i]) * (xp[i] - mu) * is;
            }
          }
          if (nodes_[sid].needs_grad) nodes_[sid].grad.v[ch] += float(sum_dy_xhat);
          if (nodes_[oid].needs_grad) nodes_[oid].grad.v[ch] += float(sum_dy);
          if (nodes_[xi].needs_grad) {
            if (train_c) {
              const double a = sum_dy / cnt, c2 = sum_dy_xhat / cnt;
              for (int b = 0; b < xv2.n; ++b) {
                const float* gp = go.batch_ptr(b) + ch * plane2;
                const float* xp = xv2.batch_ptr(b) + ch * plane2;
                float* dxp = nodes_[xi].grad.batch_ptr(b) + ch * plane2;
                for (std::size_t i = 0; i < plane2; ++i) {
                  const double xhat = double(xp[i] - mu) * is;
                  dxp[i] += float(double(g) * is * (gp[i] - a - xhat * c2));
                }
              }
            } else {
              for (int b = 0; b < xv2.n; ++b) {
                const float* gp = go.batch_ptr(b) + ch * plane2;
                float* dxp = nodes_[xi].grad.batch_ptr(b) + ch * plane2;
                for (std::size_t i = 0; i < plane2; ++i) dxp[i] += g * is * gp[i];
              }
            }
          }
        }
      };
    }
    return id;
  }

  int elu(int x) {
    const Tensor4& xv = nodes_[x].value;
    Tensor4 out = xv;
    for (auto& t : out.v) t = t >= 0.0f ? t : std::expm1(t);
    const int id = push(std::move(out), needs_grad({x}), {x});
    if (nodes_[id].needs_grad) {
      const int xi = x;
      nodes_[id].back = [this, id, xi]() {
        const Tensor4& go = nodes_[id].grad;
        const Tensor4& yv = nodes_[id].value;
        const Tensor4& xv2 = nodes_[xi].value;
        Tensor4& gx = nodes_[xi].grad;
        for (std::size_t i = 0; i < gx.v.size(); ++i)
          gx.v[i] += go.v[i] * (xv2.v[i] >= 0.0f ? 1.0f : yv.v[i] + 1.0f);
      };
    }
    return id;
  }

  int add(int a, int b) {
    const Tensor4& av = nodes_[a].value;
    const Tensor4& bv = nodes_[b].value;
    if (!av.same_dims(bv)) throw std::invalid_argument("add dims mismatch");
    Tensor4 out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    const int id = push(std::move(out), needs_grad({a, b}), {a, b});
    if (nodes_[id].needs_grad) {
      nodes_[id].back = [this, id, a, b]() {
        const Tensor4& go = nodes_[id].grad;
        if (nodes_[a].needs_grad)
          for (std::size_t i = 0; i < go.v.size(); ++i) nodes_[a].grad.v[i] += go.v[i];
        if (nodes_[b].needs_grad)
          for (std::size_t i = 0; i < go.v.size(); ++i) nodes_[b].grad.v[i] += go.v[i];
      };
    }
    return id;
  }

  // channel concatenation [a | b]
  int concat(int a, int b) {
    const Tensor4& av = nodes_[a].value;
    const Tensor4& bv = nodes_[b].value;
    if (av.n != bv.n || av.h != bv.h || av.w != bv.w)
      throw std::invalid_argument("concat dims mismatch");
    Tensor4 out(av.n, av.c + bv.c, av.h, av.w);
    const std::size_t pa = av.slab(), pb = bv.slab();
    for (int bi = 0; bi < av.n; ++bi) {
      std::copy(av.batch_ptr(bi), av.batch_ptr(bi) + pa, out.batch_ptr(bi));
      std::copy(bv.batch_ptr(bi), bv.batch_ptr(bi) + pb, out.batch_ptr(bi) + pa);
    }
    const int id = push(std::move(out), needs_grad({a, b}), {a, b});
    if (nodes_[id].needs_grad) {
      nodes_[id].back = [this, id, a, b]() {
        const Tensor4& go = nodes_[id].grad;
        Tensor4& ga = nodes_[a].grad;
        Tensor4& gb = nodes_[b].grad;
        const std::size_t pa2 = nodes_[a].value.slab(), pb2 = nodes_[b].value.slab();
        for (int bi = 0; bi < go.n; ++bi) {
          const float* src = go.batch_ptr(bi);
          if (nodes_[a].needs_grad)
            for (std::size_t i = 0; i < pa2; ++i) ga.batch_ptr(bi)[i] += src[i];
          if (nodes_[b].needs_grad)
            for (std::size_t i = 0; i < pb2; ++i) gb.batch_ptr(bi)[i] += src[pa2 + i];
        }
      };
    }
    return id;
  }

  // mean over the batch of the squared 2-norm of the per-sample difference
  int mse_loss(int pred, int target) {
    const Tensor4& pv = nodes_[pred].value;
    const Tensor4& tv = nodes_[target].value;
    if (!pv.same_dims(tv)) throw std::invalid_argument("mse dims mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pv.v.size(); ++i) {
      const double d = double(pv.v[i]) - tv.v[i];
      s += d * d;
    }
    Tensor4 out(1, 1, 1, 1);
    out.v[0] = float(s / pv.n);
    const int id = push(std::move(out), needs_grad({pred}), {pred, target});
    if (nodes_[id].needs_grad) {
      nodes_[id].back = [this, id, pred, target]() {
        const float g0 = nodes_[id].grad.v[0];
        const Tensor4& pv2 = nodes_[pred].value;
        const Tensor4& tv2 = nodes_[target].value;
        if (nodes_[pred].needs_grad) {
          const float scale = 2.0f * g0 / float(pv2.n);
          Tensor4& gp = nodes_[pred].grad;
          for (std::size_t i = 0; i < pv2.v.size(); ++i)
            gp.v[i] += scale * (pv2.v[i] - tv2.v[i]);
        }
      };
    }
    return id;
  }

  // reverse sweep from a scalar node; flushes gradients into bound Params
  void backward(int node) {
    if (!grads_) throw std::runtime_error("backward on a no-grad tape");
    if (nodes_[node].value.size() != 1) throw std::invalid_argument("backward needs a scalar node");
    for (auto& n : nodes_)
      if (n.needs_grad && n.grad.size() == 0)
        n.grad = Tensor4(n.value.n, n.value.c, n.value.h, n.value.w);
    nodes_[node].grad.v[0] = 1.0f;
    for (int i = node; i >= 0; --i)
      if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back();
    for (auto& n : nodes_)
      if (n.bound && n.bound->trainable && n.grad.size() > 0) {
        if (n.bound->grad.size() == 0)
          n.bound->grad = Tensor4(n.value.n, n.value.c, n.value.h, n.value.w);
        for (std::size_t i = 0; i < n.grad.v.size(); ++i) n.bound->grad.v[i] += n.grad.v[i];
      }
  }

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool needs_grad = false;
    std::function<void()> back;
    Param* bound = nullptr;
  };

  bool needs_grad(std::initializer_list<int> parents) const {
    if (!grads_) return false;
    for (int p : parents)
      if (p >= 0 && nodes_[p].needs_grad) return true;
    return false;
  }

  int push(Tensor4 value, bool ng, std::initializer_list<int>) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = ng && grads_;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  bool grads_;
  std::vector<Node> nodes_;
  std::map<Param*, int> param_nodes_;
};

}  // namespace helm
