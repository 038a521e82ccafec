#pragma once

#include "cdrest/conditioning/token_encoder.hpp"
#include "cdrest/restoration/config.hpp"

namespace cdrest {

// Gated depth-separable conv FFN: 1x1 expand to 2h, 3x3 depthwise, split,
// elementwise gate, 1x1 project back to C.
template <typename T>
struct GatedConvExpert {
  Conv2dLayer<T> expand, dw, proj;
  idx h = 0;

  GatedConvExpert() = default;
  GatedConvExpert(idx c, idx hidden, Rng& rng)
      : expand(c, 2 * hidden, 1, 1, 0, 1, rng),
        dw(2 * hidden, 2 * hidden, 3, 1, 1, 2 * hidden, rng),
        proj(hidden, c, 1, 1, 0, 1, rng),
        h(hidden) {}

  Var<T> operator()(Var<T> x) const {
    Var<T> u = dw(expand(x));
    Var<T> a = slice(u, 1, 0, h);
    Var<T> b = slice(u, 1, h, h);
    return proj(mul(a, b));
  }

  void collect(Params<T>& ps, const std::string& p) const {
    expand.collect(ps, p + ".expand");
    dw.collect(ps, p + ".dw");
    proj.collect(ps, p + ".proj");
  }
};

// Decoupled MoE feed-forward: the mask activates experts inside the global
// group (haze, low-light, over-exposure) and the spatial group (rain, snow,
// blur, noise, artifact); gates renormalize over the activated subset; the
// base expert keeps non-zero capacity when everything is masked off.
template <typename T>
class MoeFfn {
 public:
  static constexpr int kGlobal = 3;
  static constexpr int kSpatial = 5;

  MoeFfn() = default;
  MoeFfn(idx c, idx e, const AblationFlags& ab, Rng& rng) : c_(c), ab_(ab) {
    for (int i = 0; i < kGlobal; ++i) global_.emplace_back(c, c, rng);
    for (int j = 0; j < kSpatial; ++j) {
      spatial_.emplace_back(c, c, rng);
      routers_.emplace_back(c, 1, 1, 1, 0, 1, rng);
    }
    base_ = GatedConvExpert<T>(c, std::max<idx>(1, c / 2), rng);
    gate_g_ = LinearLayer<T>(c + e, kGlobal, rng);
    gate_s_ = LinearLayer<T>(c + e, kSpatial, rng);
    gate_joint_ = LinearLayer<T>(c + e, kGlobal + kSpatial, rng);
  }

  // Mask columns per expert group, in group order.
  static std::array<int, kGlobal> global_cols() {
    return {int(Factor::Haze), int(Factor::LowLight), int(Factor::OverExposure)};
  }
  static std::array<int, kSpatial> spatial_cols() {
    return {int(Factor::Rain), int(Factor::Snow), int(Factor::Blur), int(Factor::Noise),
            int(Factor::Artifact)};
  }

  // x: [N,C,H,W] (already normalized by the block), mask: [N,8] activations,
  // g: [N,e]. Experts whose renormalized weight column is identically zero
  // are skipped entirely, which keeps the output bit-independent of them.
  Var<T> forward(Var<T> x, const Tensor<T>& mask, Var<T> g) const {
    const idx N = x.shape()[0];
    Var<T> gin = concat<T>({gap2d(x), g}, 1);  // [N, C+e]
    Var<T> y = base_(x);

    auto col_of = [&](Var<T> m, int j) { return reshape(slice(m, 1, j, 1), {N}); };
    auto col_all_zero = [&](const Var<T>& w, int j) {
      for (idx n = 0; n < N; ++n)
        if (w.val()[n * w.shape()[1] + j] != T(0)) return false;
      return true;
    };
    auto spatial_term = [&](int j, Var<T> weight_col) {
      Var<T> ej = spatial_[std::size_t(j)](x);
      if (!ab_.no_spatial_router && !ab_.shared_moe) {
        Var<T> rj = sigmoid(routers_[std::size_t(j)](x));  // [N,1,H,W]
        ej = mul_bcast_c(ej, rj);
      }
      return scale_per_sample(ej, weight_col);
    };

    if (ab_.shared_moe) {
      // undecoupled pool over all 8 experts, mask ignored
      Var<T> pi = softmax_lastdim(gate_joint_(gin));  // [N,8]
      for (int i = 0; i < kGlobal; ++i)
        y = add(y, scale_per_sample(global_[std::size_t(i)](x), col_of(pi, i)));
      for (int j = 0; j < kSpatial; ++j) y = add(y, spatial_term(j, col_of(pi, kGlobal + j)));
      return y;
    }

    if (ab_.no_decouple_gate) {
      // one gate over all 8, masked jointly then renormalized
      Tensor<T> m8({N, idx(kGlobal + kSpatial)});
      const auto gc = global_cols();
      const auto sc = spatial_cols();
      for (idx n = 0; n < N; ++n) {
        for (int i = 0; i < kGlobal; ++i) m8[n * 8 + i] = mask[n * kNumFactors + gc[std::size_t(i)]];
        for (int j = 0; j < kSpatial; ++j)
          m8[n * 8 + kGlobal + j] = mask[n * kNumFactors + sc[std::size_t(j)]];
      }
      Var<T> pih = mask_renorm(softmax_lastdim(gate_joint_(gin)), m8);
      for (int i = 0; i < kGlobal; ++i)
        if (!col_all_zero(pih, i))
          y = add(y, scale_per_sample(global_[std::size_t(i)](x), col_of(pih, i)));
      for (int j = 0; j < kSpatial; ++j)
        if (!col_all_zero(pih, kGlobal + j)) y = add(y, spatial_term(j, col_of(pih, kGlobal + j)));
      return y;
    }

    Tensor<T> mg({N, idx(kGlobal)}), ms({N, idx(kSpatial)});
    const auto gc = global_cols();
    const auto sc = spatial_cols();
    for (idx n = 0; n < N; ++n) {
      for (int i = 0; i < kGlobal; ++i) mg[n * kGlobal + i] = mask[n * kNumFactors + gc[std::size_t(i)]];
      for (int j = 0; j < kSpatial; ++j)
        ms[n * kSpatial + j] = mask[n * kNumFactors + sc[std::size_t(j)]];
    }
    Var<T> pig = mask_renorm(softmax_lastdim(gate_g_(gin)), mg);
    Var<T> pis = mask_renorm(softmax_lastdim(gate_s_(gin)), ms);
    for (int i = 0; i < kGlobal; ++i)
      if (!col_all_zero(pig, i))
        y = add(y, scale_per_sample(global_[std::size_t(i)](x), col_of(pig, i)));
    for (int j = 0; j < kSpatial; ++j)
      if (!col_all_zero(pis, j)) y = add(y, spatial_term(j, col_of(pis, j)));
    return y;
  }

  void collect(Params<T>& ps, const std::string& p) const {
    for (int i = 0; i < kGlobal; ++i)
      global_[std::size_t(i)].collect(ps, p + ".global" + std::to_string(i));
    for (int j = 0; j < kSpatial; ++j) {
      spatial_[std::size_t(j)].collect(ps, p + ".spatial" + std::to_string(j));
      if (!ab_.no_spatial_router && !ab_.shared_moe)
        routers_[std::size_t(j)].collect(ps, p + ".router" + std::to_string(j));
    }
    base_.collect(ps, p + ".base");
    if (ab_.shared_moe || ab_.no_decouple_gate) {
      gate_joint_.collect(ps, p + ".gate_joint");
    } else {
      gate_g_.collect(ps, p + ".gate_g");
      gate_s_.collect(ps, p + ".gate_s");
    }
  }

  const GatedConvExpert<T>& base_expert() const { return base_; }
  GatedConvExpert<T>& spatial_expert(int j) { return spatial_[std::size_t(j)]; }
  GatedConvExpert<T>& global_expert(int i) { return global_[std::size_t(i)]; }

 private:
  idx c_ = 0;
  AblationFlags ab_;
  std::vector<GatedConvExpert<T>> global_, spatial_;
  std::vector<Conv2dLayer<T>> routers_;
  GatedConvExpert<T> base_;
  LinearLayer<T> gate_g_, gate_s_, gate_joint_;
};

// Window self-attention (non-overlapping windows) + channel FFN.
template <typename T>
class SpatialBranch {
 public:
  SpatialBranch() = default;
  SpatialBranch(idx c, idx window, int heads, Rng& rng)
      : c_(c), window_(window), heads_(heads) {
    CR_CHECK(c % heads == 0, "spatial branch: heads must divide channels");
    wq_ = LinearLayer<T>(c, c, rng);
    wk_ = LinearLayer<T>(c, c, rng);
    wv_ = LinearLayer<T>(c, c, rng);
    wo_ = LinearLayer<T>(c, c, rng);
    ln_ = LayerNormLayer<T>(c);
    ffn1_ = Conv2dLayer<T>(c, 2 * c, 1, 1, 0, 1, rng);
    ffn2_ = Conv2dLayer<T>(2 * c, c, 1, 1, 0, 1, rng);
  }

  // Window attention with reflect padding to window multiples.
  Var<T> attention(Var<T> x) const {
    const auto s = x.shape();
    const idx N = s[0], C = s[1], H = s[2], W = s[3];
    const idx ws = window_;
    const idx Hp = (H + ws - 1) / ws * ws, Wp = (W + ws - 1) / ws * ws;
    Var<T> xp = (Hp != H || Wp != W) ? pad2d(x, 0, Hp - H, 0, Wp - W, PadMode::Reflect) : x;
    const idx Hn = Hp / ws, Wn = Wp / ws;
    // [N,C,Hp,Wp] -> [N*Hn*Wn, ws*ws, C]
    Var<T> t = reshape(xp, {N, C, Hn, ws, Wn, ws});
    t = permute(t, {0, 2, 4, 3, 5, 1});
    t = reshape(t, {N * Hn * Wn, ws * ws, C});

    const idx B = N * Hn * Wn, Tk = ws * ws, nh = heads_, dh = C / nh;
    auto heads_of = [&](Var<T> v) {
      return reshape(permute(reshape(v, {B, Tk, nh, dh}), {0, 2, 1, 3}), {B * nh, Tk, dh});
    };
    Var<T> qh = heads_of(wq_(t)), kh = heads_of(wk_(t)), vh = heads_of(wv_(t));
    Var<T> probs =
        softmax_lastdim(bmm(qh, kh, /*trans_b=*/true, T(1.0 / std::sqrt(double(dh)))));
    Var<T> ctx = bmm(probs, vh);  // [B*nh, Tk, dh]
    ctx = reshape(permute(reshape(ctx, {B, nh, Tk, dh}), {0, 2, 1, 3}), {B, Tk, C});
    Var<T> out = wo_(ctx);
    // back to [N,C,Hp,Wp]
    out = reshape(out, {N, Hn, Wn, ws, ws, C});
    out = permute(out, {0, 5, 1, 3, 2, 4});
    out = reshape(out, {N, C, Hp, Wp});
    if (Hp != H || Wp != W) out = crop2d(out, 0, 0, H, W);
    return out;
  }

  Var<T> operator()(Var<T> x) const {
    Var<T> a = attention(x);
    Var<T> f = ffn2_(gelu(ffn1_(ln_.chw(a))));
    return add(a, f);
  }

  void collect(Params<T>& ps, const std::string& p) const {
    wq_.collect(ps, p + ".wq");
    wk_.collect(ps, p + ".wk");
    wv_.collect(ps, p + ".wv");
    wo_.collect(ps, p + ".wo");
    ln_.collect(ps, p + ".ln");
    ffn1_.collect(ps, p + ".ffn1");
    ffn2_.collect(ps, p + ".ffn2");
  }

  LinearLayer<T>& q_proj() { return wq_; }
  LinearLayer<T>& k_proj() { return wk_; }
  LinearLayer<T>& v_proj() { return wv_; }
  LinearLayer<T>& out_proj() { return wo_; }

 private:
  idx c_ = 0, window_ = 8;
  int heads_ = 2;
  LinearLayer<T> wq_, wk_, wv_, wo_;
  LayerNormLayer<T> ln_;
  Conv2dLayer<T> ffn1_, ffn2_;
};

// Frequency branch: degradation-conditioned mixture of M low-rank spectral
// masks applied to the FFT of the features, with content-adaptive DC
// correction, inverted and projected by a shared W_out.
template <typename T>
class FrequencyBranch {
 public:
  FrequencyBranch() = default;
  FrequencyBranch(idx c, idx e, idx experts, idx rank, idx grid_h, idx grid_w,
                  const AblationFlags& ab, Rng& rng)
      : c_(c), e_(e), m_(experts), r_(rank), grid_h_(grid_h), grid_w_(grid_w), ab_(ab) {
    w_f_ = LinearLayer<T>(c, e, rng);
    w_pi_ = LinearLayer<T>(e, experts, rng);
    // start near pass-through: sigmoid(2 + small) ~ 0.88
    c_off_ = leaf(Tensor<T>::full({experts}, T(2)));
    vh_ = leaf(Tensor<T>::randn({experts, rank, grid_h}, rng, T(0.05)));
    vw_ = leaf(Tensor<T>::randn({experts, rank, grid_w / 2 + 1}, rng, T(0.05)));
    b_dc_ = leaf(Tensor<T>::zeros({1}));
    mlp_dc_ = Mlp2<T>(e + 2 * c, 64, experts, rng);
    w_out_ = Conv2dLayer<T>(c, c, 1, 1, 0, 1, rng);
  }

  // Half-grid spectral logit map of expert m at runtime size [H, W/2+1]:
  // scalar offset + sum of rank outer products (factor vectors linearly
  // resized when the runtime grid differs from the base grid).
  Var<T> spectral_logits(int expert, idx H, idx W) const {
    const idx Wh = W / 2 + 1;
    Var<T> acc;
    for (idx l = 0; l < r_; ++l) {
      Var<T> h = reshape(slice(reshape(slice(vh_, 0, expert, 1), {r_, grid_h_}), 0, l, 1),
                         {grid_h_});
      Var<T> w = reshape(slice(reshape(slice(vw_, 0, expert, 1), {r_, grid_w_ / 2 + 1}), 0, l, 1),
                         {grid_w_ / 2 + 1});
      if (H != grid_h_) h = resize_vec(h, H);
      if (Wh != grid_w_ / 2 + 1) w = resize_vec(w, Wh);
      Var<T> outer = matmul(reshape(h, {H, idx(1)}), reshape(w, {idx(1), Wh}));
      acc = acc.defined() ? add(acc, outer) : outer;
    }
    Var<T> coff = reshape(slice(c_off_, 0, expert, 1), {idx(1)});
    return add_scalar_var(acc, coff);
  }

  // DC values per (sample, expert): 1 + b_dc + 0.1*tanh(MLP([g, mu, sigma])).
  Var<T> dc_values(Var<T> x, Var<T> g) const {
    Var<T> mu = gap2d(x);                                     // [N,C]
    Var<T> centered = add_nc(x, mu, T(-1));
    Var<T> var = gap2d(mul(centered, centered));
    Var<T> sigma = sqrt_op(add_scalar(var, T(1e-8)));         // [N,C]
    Var<T> inp = concat<T>({g, mu, sigma}, 1);                // [N, e+2C]
    Var<T> t = mul_scalar(tanh_op(mlp_dc_(inp)), T(0.1));     // [N,M]
    return add_scalar(add_scalar_var(t, b_dc_), T(1));
  }

  // degradation-conditioned mixture weights over the frequency experts
  Var<T> mixture_weights(Var<T> x, Var<T> g) const {
    return softmax_lastdim(w_pi_(add(g, w_f_(gap2d(x)))));
  }

  Var<T> forward(Var<T> x, Var<T> g) const {
    const auto s = x.shape();
    const idx N = s[0], H = s[2], W = s[3];
    Var<T> pi = mixture_weights(x, g);  // [N,M]
    Var<T> spec = fft2c(complexify(x));                          // [N,C,H,W,2]
    Var<T> dc;
    if (!ab_.no_dc_correction) dc = dc_values(x, g);             // [N,M]
    Var<T> mix;
    for (int m = 0; m < int(m_); ++m) {
      Var<T> logits = spectral_logits(m, H, W);
      Var<T> dcm;
      if (!ab_.no_dc_correction) dcm = reshape(slice(dc, 1, m, 1), {N});
      Var<T> mask = spectral_mask_assemble(logits, dcm, W, !ab_.no_dc_correction);  // [N or 1,H,W]
      if (mask.shape()[0] != N) {
        // dc-less mask is sample-independent; broadcast it
        mask = reshape(mask, {H, W});
        mask = broadcast_to_batch(mask, N);
      }
      Var<T> ym = real_part(ifft2c(complex_mul_real(spec, mask)));
      Var<T> term = scale_per_sample(ym, reshape(slice(pi, 1, m, 1), {N}));
      mix = mix.defined() ? add(mix, term) : term;
    }
    return w_out_(mix);
  }

  void collect(Params<T>& ps, const std::string& p) const {
    w_f_.collect(ps, p + ".w_f");
    w_pi_.collect(ps, p + ".w_pi");
    ps.push_back({p + ".c_off", c_off_});
    ps.push_back({p + ".vh", vh_});
    ps.push_back({p + ".vw", vw_});
    ps.push_back({p + ".b_dc", b_dc_});
    mlp_dc_.collect(ps, p + ".mlp_dc");
    w_out_.collect(ps, p + ".w_out");
  }

  Var<T>& c_offsets() { return c_off_; }
  Var<T>& b_dc() { return b_dc_; }
  Mlp2<T>& dc_mlp() { return mlp_dc_; }
  Conv2dLayer<T>& out_proj() { return w_out_; }
  idx experts() const { return m_; }
  idx rank() const { return r_; }

 private:
  static Var<T> resize_vec(Var<T> v, idx target) {
    const idx n = v.numel();
    Var<T> t = reshape(v, {idx(1), idx(1), n, idx(1)});
    t = bilinear_resize(t, target, 1);
    return reshape(t, {target});
  }

  idx c_ = 0, e_ = 0, m_ = 2, r_ = 4, grid_h_ = 64, grid_w_ = 64;
  AblationFlags ab_;
  LinearLayer<T> w_f_, w_pi_;
  Var<T> c_off_, vh_, vw_, b_dc_;
  Mlp2<T> mlp_dc_;
  Conv2dLayer<T> w_out_;
};

// Condition-aware dual-domain block: pre-norm, frequency + spatial branches
// mixed by a learned scalar gate, residual, then the decoupled MoE FFN.
template <typename T>
class DualDomainBlock {
 public:
  DualDomainBlock() = default;
  DualDomainBlock(idx c, const RestorationConfig& cfg, idx grid_h, idx grid_w, Rng& rng)
      : ab_(cfg.ab),
        ln1_(c),
        ln2_(c),
        freq_(c, cfg.e, cfg.freq_experts, cfg.freq_rank, grid_h, grid_w, cfg.ab, rng),
        spatial_(c, cfg.window, cfg.spatial_heads, rng),
        moe_(c, cfg.e, cfg.ab, rng) {
    gate_logit_ = leaf(Tensor<T>::zeros({1}));
  }

  Var<T> gate() const { return sigmoid(gate_logit_); }

  // Branch mixing on normalized features (exposed for the gate fixtures).
  Var<T> mix(Var<T> xn, Var<T> g) const {
    if (ab_.no_freq_branch) return spatial_(xn);
    Var<T> xf = freq_.forward(xn, g);
    Var<T> xs = spatial_(xn);
    if (ab_.no_gate) return add(mul_scalar(xf, T(0.5)), mul_scalar(xs, T(0.5)));
    Var<T> w = gate();
    Var<T> one_minus_w = add_scalar(mul_scalar(w, T(-1)), T(1));
    return add(scale_by(xf, w), scale_by(xs, one_minus_w));
  }

  Var<T> forward(Var<T> x, const Tensor<T>& mask, Var<T> g) const {
    Var<T> x1 = add(x, mix(ln1_.chw(x), g));
    Var<T> x2 = add(x1, moe_.forward(ln2_.chw(x1), mask, g));
    return x2;
  }

  void collect(Params<T>& ps, const std::string& p) const {
    ln1_.collect(ps, p + ".ln1");
    ln2_.collect(ps, p + ".ln2");
    if (!ab_.no_freq_branch) {
      freq_.collect(ps, p + ".freq");
      if (!ab_.no_gate) ps.push_back({p + ".gate_logit", gate_logit_});
    }
    spatial_.collect(ps, p + ".spatial");
    moe_.collect(ps, p + ".moe");
  }

  FrequencyBranch<T>& frequency_branch() { return freq_; }
  SpatialBranch<T>& spatial_branch() { return spatial_; }
  MoeFfn<T>& moe() { return moe_; }
  Var<T>& gate_logit() { return gate_logit_; }

 private:
  AblationFlags ab_;
  LayerNormLayer<T> ln1_, ln2_;
  FrequencyBranch<T> freq_;
  SpatialBranch<T> spatial_;
  MoeFfn<T> moe_;
  Var<T> gate_logit_;
};

}  // namespace cdrest
