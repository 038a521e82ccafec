#pragma once

#include <string>

#include "cdrest/core/ops_fft.hpp"
#include "cdrest/core/ops_nn.hpp"

namespace cdrest {

template <typename T>
struct LinearLayer {
  Var<T> w, b;

  LinearLayer() = default;
  LinearLayer(idx in, idx out, Rng& rng, T scale = T(-1)) {
    const T s = scale > T(0) ? scale : T(std::sqrt(2.0 / double(in)));
    w = leaf(Tensor<T>::randn({out, in}, rng, s));
    b = leaf(Tensor<T>::zeros({out}));
  }

  Var<T> operator()(Var<T> x) const { return linear(x, w, b); }

  void collect(Params<T>& ps, const std::string& p) const {
    ps.push_back({p + ".w", w});
    ps.push_back({p + ".b", b});
  }
};

template <typename T>
struct Conv2dLayer {
  Var<T> w, b;
  idx stride = 1, pad = 0, groups = 1;

  Conv2dLayer() = default;
  Conv2dLayer(idx cin, idx cout, idx k, idx stride_, idx pad_, idx groups_, Rng& rng,
              T scale = T(-1)) {
    const idx fan_in = (cin / groups_) * k * k;
    const T s = scale > T(0) ? scale : T(std::sqrt(2.0 / double(fan_in)));
    w = leaf(Tensor<T>::randn({cout, cin / groups_, k, k}, rng, s));
    b = leaf(Tensor<T>::zeros({cout}));
    stride = stride_;
    pad = pad_;
    groups = groups_;
  }

  Var<T> operator()(Var<T> x) const { return conv2d(x, w, b, stride, pad, groups); }

  void collect(Params<T>& ps, const std::string& p) const {
    ps.push_back({p + ".w", w});
    ps.push_back({p + ".b", b});
  }
};

template <typename T>
struct ConvT2x2Layer {
  Var<T> w, b;

  ConvT2x2Layer() = default;
  ConvT2x2Layer(idx cin, idx cout, Rng& rng) {
    w = leaf(Tensor<T>::randn({cin, cout, 2, 2}, rng, T(std::sqrt(2.0 / double(cin * 4)))));
    b = leaf(Tensor<T>::zeros({cout}));
  }

  Var<T> operator()(Var<T> x) const { return conv_transpose2d_k2s2(x, w, b); }

  void collect(Params<T>& ps, const std::string& p) const {
    ps.push_back({p + ".w", w});
    ps.push_back({p + ".b", b});
  }
};

template <typename T>
struct LayerNormLayer {
  Var<T> gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(idx f) {
    gamma = leaf(Tensor<T>::full({f}, T(1)));
    beta = leaf(Tensor<T>::zeros({f}));
  }

  Var<T> operator()(Var<T> x) const { return layernorm_lastdim(x, gamma, beta); }
  Var<T> chw(Var<T> x) const { return layernorm_chw(x, gamma, beta); }

  void collect(Params<T>& ps, const std::string& p) const {
    ps.push_back({p + ".gamma", gamma});
    ps.push_back({p + ".beta", beta});
  }
};

// Two-layer MLP with a GELU in between.
template <typename T>
struct Mlp2 {
  LinearLayer<T> fc1, fc2;

  Mlp2() = default;
  Mlp2(idx in, idx hidden, idx out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

  Var<T> operator()(Var<T> x) const { return fc2(gelu(fc1(x))); }

  void collect(Params<T>& ps, const std::string& p) const {
    fc1.collect(ps, p + ".fc1");
    fc2.collect(ps, p + ".fc2");
  }
};

// Decoupled-weight-decay adaptive gradient method (AdamW).
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(Params<T> params, T lr, T weight_decay = T(0.02), T beta1 = T(0.9), T beta2 = T(0.999),
        T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [name, v] : params_) {
      m_.push_back(Tensor<T>::zeros(v.shape()));
      v_.push_back(Tensor<T>::zeros(v.shape()));
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  void zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - T(std::pow(double(b1_), double(t_)));
    const T bc2 = T(1) - T(std::pow(double(b2_), double(t_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Var<T>& p = params_[k].second;
      if (!p.has_grad()) continue;
      Tensor<T>& w = p.val_mut();
      const Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (idx i = 0; i < w.numel(); ++i) {
        m[i] = b1_ * m[i] + (T(1) - b1_) * g[i];
        v[i] = b2_ * v[i] + (T(1) - b2_) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        w[i] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * w[i]);
      }
    }
  }

  const Params<T>& params() const { return params_; }

 private:
  Params<T> params_;
  std::vector<Tensor<T>> m_, v_;
  T lr_ = T(2e-4), wd_ = T(0.02), b1_ = T(0.9), b2_ = T(0.999), eps_ = T(1e-8);
  long t_ = 0;
};

}  // namespace cdrest
