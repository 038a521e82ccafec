#pragma once

#include "cdrest/restoration/blocks.hpp"

namespace cdrest {

// CDMM: degradation-conditioned 5-stage U-shaped backbone of dual-domain
// blocks plus a low-frequency base branch. y = y_base + y_res.
template <typename T>
class RestorationNet {
 public:
  struct Output {
    Var<T> y, y_base, y_res;
  };

  RestorationNet() = default;

  RestorationNet(const RestorationConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    CR_CHECK(cfg.widths.size() == 5, "restoration: expected 5 stage widths");
    Rng rng = Rng(seed).fork(fnv1a64("restoration"));
    ConditioningConfig cc;
    cc.e = cfg.e;
    cc.heads = cfg.cond_heads;
    cc.use_semantic_token = !cfg.ab.no_semantic_token;
    cc.use_global_token = !cfg.ab.no_global_token;
    cc.strict_masking = !cfg.ab.no_strict_masking;
    cond_ = TokenEncoder<T>(cfg.d, cc, rng);

    const auto& w = cfg.widths;
    in_proj_ = Conv2dLayer<T>(3, w[0], 3, 1, 1, 1, rng);
    const idx gh = cfg.base_grid_h, gw = cfg.base_grid_w;
    auto make_stage = [&](idx c, idx sh, idx sw) {
      std::vector<DualDomainBlock<T>> blocks;
      for (idx b = 0; b < cfg.blocks_per_stage; ++b) blocks.emplace_back(c, cfg, sh, sw, rng);
      return blocks;
    };
    stages_.push_back(make_stage(w[0], gh, gw));
    stages_.push_back(make_stage(w[1], gh / 2, gw / 2));
    stages_.push_back(make_stage(w[2], gh / 4, gw / 4));
    stages_.push_back(make_stage(w[3], gh / 2, gw / 2));
    stages_.push_back(make_stage(w[4], gh, gw));
    down1_ = Conv2dLayer<T>(w[0], w[1], 2, 2, 0, 1, rng);
    down2_ = Conv2dLayer<T>(w[1], w[2], 2, 2, 0, 1, rng);
    up3_ = ConvT2x2Layer<T>(w[2], w[3], rng);
    up4_ = ConvT2x2Layer<T>(w[3], w[4], rng);
    skip2_ = Conv2dLayer<T>(w[1], w[3], 1, 1, 0, 1, rng);
    skip1_ = Conv2dLayer<T>(w[0], w[4], 1, 1, 0, 1, rng);
    out_proj_ = Conv2dLayer<T>(w[4], 3, 3, 1, 1, 1, rng, T(0.02));

    base1_ = Conv2dLayer<T>(3, cfg.base_channels, 3, 1, 1, 1, rng);
    base2_ = Conv2dLayer<T>(cfg.base_channels, cfg.base_channels, 3, 1, 1, 1, rng);
    base3_ = Conv2dLayer<T>(cfg.base_channels, 3, 3, 1, 1, 1, rng, T(0.02));
  }

  const RestorationConfig& config() const { return cfg_; }
  TokenEncoder<T>& conditioning() { return cond_; }
  DualDomainBlock<T>& block(int stage, int i) {
    return stages_[std::size_t(stage)][std::size_t(i)];
  }

  // Low-frequency base branch: bilinear 4x down, small CNN, bilinear 4x up.
  Var<T> base_branch(Var<T> x) const {
    const auto s = x.shape();
    const idx H = s[2], W = s[3];
    const idx h = std::max<idx>(1, (H + 3) / 4), w = std::max<idx>(1, (W + 3) / 4);
    Var<T> t = bilinear_resize(x, h, w);
    t = gelu(base1_(t));
    t = gelu(base2_(t));
    t = base3_(t);
    return bilinear_resize(t, H, W);
  }

  // x: [N,3,H,W] in [0,1]; mask: [N,8] activations (binary for the full
  // model); p: [N,d] semantic embeddings. Any H,W >= 8 is handled by reflect
  // padding to a multiple of 4 and cropping back.
  Output restore(Var<T> x, const Tensor<T>& mask, Var<T> p,
                 std::vector<AttentionTrace<T>>* traces = nullptr) const {
    CR_CHECK(x.val().all_finite(), "restore: non-finite input");
    const auto s = x.shape();
    const idx N = s[0], H = s[2], W = s[3];
    CR_CHECK(mask.shape() == std::vector<idx>({N, idx(kNumFactors)}), "restore: mask shape");

    Var<T> p_eff = p;
    if (cfg_.ab.no_semantic_embedding) p_eff = constant(Tensor<T>::zeros({N, cfg_.d}));

    Var<T> bundle = cond_.forward(mask, p_eff, traces);  // [N,5,e]
    auto stage_g = [&](int sidx) {
      const int use = cfg_.ab.no_stagewise ? 0 : sidx;
      return reshape(slice(bundle, 1, use, 1), {N, cfg_.e});
    };

    const idx Hp = (H + 3) / 4 * 4, Wp = (W + 3) / 4 * 4;
    Var<T> xp = (Hp != H || Wp != W) ? pad2d(x, 0, Hp - H, 0, Wp - W, PadMode::Reflect) : x;

    auto run_stage = [&](Var<T> t, int sidx) {
      Var<T> g = stage_g(sidx);
      for (const auto& b : stages_[std::size_t(sidx)]) {
        t = b.forward(t, mask, g);
        CR_CHECK(t.val().all_finite(), "restore: non-finite activations at stage ", sidx + 1);
      }
      return t;
    };

    Var<T> s1 = run_stage(in_proj_(xp), 0);
    Var<T> s2 = run_stage(down1_(s1), 1);
    Var<T> s3 = run_stage(down2_(s2), 2);
    Var<T> s4 = run_stage(add(up3_(s3), skip2_(s2)), 3);
    Var<T> s5 = run_stage(add(up4_(s4), skip1_(s1)), 4);
    Var<T> res = out_proj_(s5);

    Output out;
    if (cfg_.ab.no_dual_branch) {
      out.y_res = res;
      out.y = res;
      out.y_base = constant(Tensor<T>::zeros(res.shape()));
    } else {
      out.y_base = base_branch(xp);
      out.y_res = res;
      out.y = add(out.y_base, out.y_res);
    }
    if (Hp != H || Wp != W) {
      out.y = crop2d(out.y, 0, 0, H, W);
      out.y_base = crop2d(out.y_base, 0, 0, H, W);
      out.y_res = crop2d(out.y_res, 0, 0, H, W);
    }
    return out;
  }

  Params<T> parameters() const {
    Params<T> ps;
    cond_.collect(ps, "cond");
    in_proj_.collect(ps, "in_proj");
    static const char* stage_names[5] = {"s1", "s2", "s3", "s4", "s5"};
    for (int s = 0; s < 5; ++s)
      for (std::size_t b = 0; b < stages_[std::size_t(s)].size(); ++b)
        stages_[std::size_t(s)][b].collect(ps, str(stage_names[s], ".b", b));
    down1_.collect(ps, "down1");
    down2_.collect(ps, "down2");
    up3_.collect(ps, "up3");
    up4_.collect(ps, "up4");
    skip2_.collect(ps, "skip2");
    skip1_.collect(ps, "skip1");
    out_proj_.collect(ps, "out_proj");
    if (!cfg_.ab.no_dual_branch) {
      base1_.collect(ps, "base1");
      base2_.collect(ps, "base2");
      base3_.collect(ps, "base3");
    }
    return ps;
  }

  nlohmann::json meta(const std::string& catalog_hash, const std::string& perception_hash) const {
    nlohmann::json j;
    j["model"] = "restoration";
    j["widths"] = cfg_.widths;
    j["blocks_per_stage"] = cfg_.blocks_per_stage;
    j["window"] = cfg_.window;
    j["e"] = cfg_.e;
    j["d"] = cfg_.d;
    j["freq_experts"] = cfg_.freq_experts;
    j["freq_rank"] = cfg_.freq_rank;
    j["base_grid"] = {cfg_.base_grid_h, cfg_.base_grid_w};
    j["base_channels"] = cfg_.base_channels;
    j["catalog_hash"] = catalog_hash;
    j["perception_hash"] = perception_hash;
    return j;
  }

  Conv2dLayer<T>& out_proj() { return out_proj_; }
  Conv2dLayer<T>& base_out() { return base3_; }

 private:
  RestorationConfig cfg_;
  TokenEncoder<T> cond_;
  Conv2dLayer<T> in_proj_;
  std::vector<std::vector<DualDomainBlock<T>>> stages_;
  Conv2dLayer<T> down1_, down2_;
  ConvT2x2Layer<T> up3_, up4_;
  Conv2dLayer<T> skip2_, skip1_;
  Conv2dLayer<T> out_proj_;
  Conv2dLayer<T> base1_, base2_, base3_;
};

}  // namespace cdrest
