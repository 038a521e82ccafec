#pragma once

#include "cdrest/core/layers.hpp"
#include "cdrest/synth/factors.hpp"

namespace cdrest {

struct ConditioningConfig {
  idx e = 256;   // token width
  idx stages = 5;
  int heads = 4;
  bool use_semantic_token = true;  // u_p
  bool use_global_token = true;    // u_g
  bool strict_masking = true;      // hard key exclusion; false = additive soft bias
  double soft_bias = -4.0;         // inactive-key bias when strict_masking is off
};

// Per-sample attention record for debugging and tests.
template <typename T>
struct AttentionTrace {
  std::vector<idx> active_keys;       // indices into the (D+2)-key set
  Tensor<T> probs;                    // [heads, stages, n_active]
};

// Degradation Token Encoder: learnable factor tokens + semantic/global tokens
// attended by stage queries under a hard key padding mask, yielding the
// stage-wise conditioning vectors g_1..g_S.
template <typename T>
class TokenEncoder {
 public:
  TokenEncoder() = default;

  TokenEncoder(idx d, const ConditioningConfig& cfg, Rng& rng) : cfg_(cfg), d_(d) {
    tokens_ = leaf(Tensor<T>::randn({idx(kNumFactors), cfg.e}, rng, T(0.02)));
    queries_ = leaf(Tensor<T>::randn({cfg.stages, cfg.e}, rng, T(0.02)));
    w_p_ = LinearLayer<T>(d, cfg.e, rng);
    ln_p_ = LayerNormLayer<T>(cfg.e);
    mlp_g_ = Mlp2<T>(idx(kNumFactors) + d, cfg.e, cfg.e, rng);
    ln_g_ = LayerNormLayer<T>(cfg.e);
    wq_ = LinearLayer<T>(cfg.e, cfg.e, rng);
    wk_ = LinearLayer<T>(cfg.e, cfg.e, rng);
    wv_ = LinearLayer<T>(cfg.e, cfg.e, rng);
    wo_ = LinearLayer<T>(cfg.e, cfg.e, rng);
    ln_ffn_ = LayerNormLayer<T>(cfg.e);
    ffn1_ = LinearLayer<T>(cfg.e, 4 * cfg.e, rng);
    ffn2_ = LinearLayer<T>(4 * cfg.e, cfg.e, rng);
  }

  const ConditioningConfig& config() const { return cfg_; }
  idx key_count() const {
    return idx(kNumFactors) + (cfg_.use_semantic_token ? 1 : 0) + (cfg_.use_global_token ? 1 : 0);
  }

  // Key set for one sample. mask8: per-factor activation in [0,1] (binary for
  // the full model); p: [1,d] semantic embedding.
  //   key_weight[j] = mask8[j] for factor tokens, 1 for u_p/u_g.
  Var<T> build_key_set(const std::vector<T>& mask8, Var<T> p,
                       std::vector<T>* key_weight = nullptr) const {
    CR_CHECK(mask8.size() == kNumFactors, "build_key_set: mask must have 8 entries");
    std::vector<Var<T>> rows;
    rows.push_back(tokens_);
    if (cfg_.use_semantic_token) rows.push_back(ln_p_(w_p_(p)));
    if (cfg_.use_global_token) {
      Tensor<T> m({1, idx(kNumFactors)});
      for (int i = 0; i < kNumFactors; ++i) m[i] = mask8[std::size_t(i)];
      Var<T> gin = concat<T>({constant(std::move(m)), p}, 1);
      rows.push_back(ln_g_(mlp_g_(gin)));
    }
    if (key_weight) {
      key_weight->assign(std::size_t(key_count()), T(1));
      for (int i = 0; i < kNumFactors; ++i) (*key_weight)[std::size_t(i)] = mask8[std::size_t(i)];
    }
    return concat(rows, 0);
  }

  // Stage-wise conditioning for one sample: g = Z + FFN(LN(Z)) with
  // Z = MHA(queries, U_active, U_active). Inactive keys are excluded from the
  // computation entirely, so outputs are exactly independent of them.
  Var<T> stage_conditioning(Var<T> U, const std::vector<T>& key_weight,
                            AttentionTrace<T>* trace = nullptr) const {
    const idx e = cfg_.e;
    const idx S = cfg_.stages;
    const int nh = cfg_.heads;
    const idx dh = e / nh;

    std::vector<idx> active;
    std::vector<T> bias;
    for (idx k = 0; k < idx(key_weight.size()); ++k) {
      const T wgt = key_weight[std::size_t(k)];
      if (cfg_.strict_masking) {
        if (wgt > T(0)) {
          active.push_back(k);
          bias.push_back(std::log(wgt));  // 0 for binary masks, log p for soft masks
        }
      } else {
        active.push_back(k);
        bias.push_back(wgt > T(0) ? std::log(std::max(wgt, T(1e-6))) : T(cfg_.soft_bias));
      }
    }
    CR_CHECK(!active.empty(), "stage_conditioning: no active keys");
    const idx ka = idx(active.size());

    Var<T> Ua = gather_rows(U, active);
    Var<T> q = wq_(queries_);  // [S,e]
    Var<T> k = wk_(Ua);        // [ka,e]
    Var<T> v = wv_(Ua);

    auto heads_of = [&](Var<T> x, idx rows) {
      // [rows, e] -> [nh, rows, dh]
      return permute(reshape(x, {rows, idx(nh), dh}), {1, 0, 2});
    };
    Var<T> qh = heads_of(q, S), kh = heads_of(k, ka), vh = heads_of(v, ka);
    Var<T> scores = bmm(qh, kh, /*trans_b=*/true, T(1.0 / std::sqrt(double(dh))));
    bool any_bias = false;
    for (T bv : bias) any_bias |= (bv != T(0));
    if (any_bias) {
      Tensor<T> bt = Tensor<T>::uninit({idx(nh), S, ka});
      for (idx h = 0; h < idx(nh); ++h)
        for (idx s = 0; s < S; ++s)
          for (idx j = 0; j < ka; ++j) bt[(h * S + s) * ka + j] = bias[std::size_t(j)];
      scores = add(scores, constant(std::move(bt)));
    }
    Var<T> probs = softmax_lastdim(scores);  // [nh, S, ka]
    if (trace) {
      trace->active_keys = active;
      trace->probs = probs.val().clone();
    }
    Var<T> ctx = bmm(probs, vh);                             // [nh, S, dh]
    Var<T> z = wo_(reshape(permute(ctx, {1, 0, 2}), {S, e}));  // [S, e]
    Var<T> g = add(z, ffn2_(gelu(ffn1_(ln_ffn_(z)))));
    return g;  // [S, e]
  }

  // Batched forward: mask [N,8] activations (data, not differentiated),
  // p [N,d]. Returns [N, S, e].
  Var<T> forward(const Tensor<T>& mask, Var<T> p,
                 std::vector<AttentionTrace<T>>* traces = nullptr) const {
    const idx N = mask.dim(0);
    CR_CHECK(p.shape() == std::vector<idx>({N, d_}), "token encoder: p shape");
    std::vector<Var<T>> per_sample;
    for (idx n = 0; n < N; ++n) {
      std::vector<T> m8(static_cast<std::size_t>(kNumFactors));
      for (int i = 0; i < kNumFactors; ++i) m8[std::size_t(i)] = mask[n * kNumFactors + i];
      Var<T> pn = slice(p, 0, n, 1);  // [1,d]
      std::vector<T> kw;
      Var<T> U = build_key_set(m8, pn, &kw);
      AttentionTrace<T> tr;
      Var<T> g = stage_conditioning(U, kw, traces ? &tr : nullptr);
      if (traces) traces->push_back(std::move(tr));
      per_sample.push_back(reshape(g, {idx(1), cfg_.stages, cfg_.e}));
    }
    return concat(per_sample, 0);
  }

  void collect(Params<T>& ps, const std::string& p) const {
    ps.push_back({p + ".tokens", tokens_});
    ps.push_back({p + ".queries", queries_});
    if (cfg_.use_semantic_token) {
      w_p_.collect(ps, p + ".w_p");
      ln_p_.collect(ps, p + ".ln_p");
    }
    if (cfg_.use_global_token) {
      mlp_g_.collect(ps, p + ".mlp_g");
      ln_g_.collect(ps, p + ".ln_g");
    }
    wq_.collect(ps, p + ".wq");
    wk_.collect(ps, p + ".wk");
    wv_.collect(ps, p + ".wv");
    wo_.collect(ps, p + ".wo");
    ln_ffn_.collect(ps, p + ".ln_ffn");
    ffn1_.collect(ps, p + ".ffn1");
    ffn2_.collect(ps, p + ".ffn2");
  }

  Var<T>& tokens() { return tokens_; }
  Var<T>& queries() { return queries_; }
  LinearLayer<T>& attn_q() { return wq_; }
  LinearLayer<T>& attn_k() { return wk_; }
  LinearLayer<T>& attn_v() { return wv_; }
  LinearLayer<T>& attn_out() { return wo_; }

 private:
  ConditioningConfig cfg_;
  idx d_ = 128;
  Var<T> tokens_, queries_;
  LinearLayer<T> w_p_;
  LayerNormLayer<T> ln_p_;
  Mlp2<T> mlp_g_;
  LayerNormLayer<T> ln_g_;
  LinearLayer<T> wq_, wk_, wv_, wo_;
  LayerNormLayer<T> ln_ffn_;
  LinearLayer<T> ffn1_, ffn2_;
};

}  // namespace cdrest
