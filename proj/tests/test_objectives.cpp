#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace cdrest;
using namespace cdrest::testutil;

TEST_CASE("spatial l1: fixtures and element-loop oracle") {
  Rng rng(1);
  Tensor<double> y = Tensor<double>::rand_uniform({3, 8, 8}, rng);
  REQUIRE(spatial_l1(constant(y.clone()), constant(y.clone())).val()[0] == 0.0);

  Tensor<double> shifted = y.clone();
  for (idx i = 0; i < shifted.numel(); ++i) shifted[i] += 0.1;
  REQUIRE(spatial_l1(constant(shifted.clone()), constant(y.clone())).val()[0] ==
          Catch::Approx(0.1).margin(1e-12));

  Tensor<double> a = Tensor<double>::randn({3, 8, 8}, rng);
  double oracle = 0;
  for (idx i = 0; i < a.numel(); ++i) oracle += std::abs(a[i] - y[i]);
  oracle /= double(a.numel());
  REQUIRE(spatial_l1(constant(a.clone()), constant(y.clone())).val()[0] ==
          Catch::Approx(oracle).margin(1e-7));
  REQUIRE_THROWS(spatial_l1(constant(a.clone()), constant(Tensor<double>::zeros({3, 4, 4}))));
}

TEST_CASE("masked frequency l1: DC exclusion and per-bin oracle at 32x32") {
  Rng rng(2);
  Tensor<double> y = Tensor<double>::rand_uniform({3, 32, 32}, rng);
  REQUIRE(masked_freq_l1(constant(y.clone()), constant(y.clone())).val()[0] ==
          Catch::Approx(0.0).margin(1e-12));

  // adding a constant to either or both images only moves the excluded DC bin
  Tensor<double> yc = y.clone();
  for (idx i = 0; i < yc.numel(); ++i) yc[i] += 0.2;
  REQUIRE(masked_freq_l1(constant(yc.clone()), constant(y.clone())).val()[0] ==
          Catch::Approx(0.0).margin(1e-9));
  Tensor<double> a = Tensor<double>::randn({3, 32, 32}, rng);
  Tensor<double> ac = a.clone();
  for (idx i = 0; i < ac.numel(); ++i) ac[i] += 0.37;
  const double la = masked_freq_l1(constant(a.clone()), constant(y.clone())).val()[0];
  const double lac = masked_freq_l1(constant(ac.clone()), constant(y.clone())).val()[0];
  REQUIRE(la == Catch::Approx(lac).margin(1e-9));

  // retained-bin count and a direct per-bin oracle via the naive DFT
  idx retained = 0;
  Tensor<double> keep = freq_retain_mask<double>(32, 32, 0.2, &retained);
  REQUIRE(retained == 988);  // 1024 - 6*6
  idx kept = 0;
  for (idx i = 0; i < keep.numel(); ++i) kept += keep[i] > 0 ? 1 : 0;
  REQUIRE(kept == 988);
  REQUIRE(keep[0] == 0.0);  // DC inside the removed square

  double oracle = 0;
  std::vector<double> zero(32 * 32, 0.0), re(32 * 32), ro_a, io_a, ro_y, io_y;
  // independent shifted-square geometry: remove rows/cols 13..18 after shift
  auto removed = [&](idx h, idx w) {
    const idx sh = (h + 16) % 32, sw = (w + 16) % 32;
    return sh >= 13 && sh < 19 && sw >= 13 && sw < 19;
  };
  for (idx c = 0; c < 3; ++c) {
    for (idx i = 0; i < 32 * 32; ++i) re[std::size_t(i)] = a[c * 1024 + i];
    naive_dft2(re, zero, ro_a, io_a, 32, 32, true);
    for (idx i = 0; i < 32 * 32; ++i) re[std::size_t(i)] = y[c * 1024 + i];
    naive_dft2(re, zero, ro_y, io_y, 32, 32, true);
    for (idx h = 0; h < 32; ++h)
      for (idx w = 0; w < 32; ++w) {
        if (removed(h, w)) continue;
        const std::size_t i = std::size_t(h * 32 + w);
        const double ma = std::hypot(ro_a[i], io_a[i]);
        const double my = std::hypot(ro_y[i], io_y[i]);
        oracle += std::abs(ma - my);
      }
  }
  oracle /= double(988 * 3);
  REQUIRE(la == Catch::Approx(oracle).margin(1e-6));
}

TEST_CASE("guided filter: fixed point, smoothing limit, window oracle") {
  // constant image is a fixed point; with a dyadic constant every window
  // mean is computed without rounding, so the identity is bit-exact
  Tensor<double> c = Tensor<double>::full({1, 12, 12}, 0.5);
  Tensor<double> q = guided_filter(c, c, 3, 1e-3);
  for (idx i = 0; i < q.numel(); ++i) REQUIRE(q[i] == 0.5);
  Tensor<double> c2 = Tensor<double>::full({1, 12, 12}, 0.4);
  Tensor<double> q2c = guided_filter(c2, c2, 3, 1e-3);
  for (idx i = 0; i < q2c.numel(); ++i) REQUIRE(q2c[i] == Catch::Approx(0.4).margin(1e-12));

  // huge epsilon -> double box filter of the input
  Rng rng(3);
  Tensor<double> p = Tensor<double>::rand_uniform({1, 32, 32}, rng);
  Tensor<double> q2 = guided_filter(p, p, 3, 1e9);
  std::vector<double> pv(32 * 32), bsum;
  for (idx i = 0; i < 1024; ++i) pv[std::size_t(i)] = p[i];
  gf_detail::box_stats(pv, 32, 32, 3, bsum);
  const auto n = gf_detail::window_counts(32, 32, 3);
  std::vector<double> meanp(1024), bb;
  for (std::size_t i = 0; i < 1024; ++i) meanp[i] = bsum[i] / n[i];
  gf_detail::box_stats(meanp, 32, 32, 3, bb);
  for (idx i = 0; i < 1024; ++i)
    REQUIRE(std::abs(q2[i] - bb[std::size_t(i)] / n[std::size_t(i)]) < 1e-3);

  // direct O(r^2)-per-pixel windowed-statistics oracle, r = 3, 16x16
  Tensor<double> img = Tensor<double>::rand_uniform({1, 16, 16}, rng);
  const int r = 3;
  const double eps = 1e-3;
  Tensor<double> mine = guided_filter(img, img, r, eps);
  const idx H = 16, W = 16;
  std::vector<double> av(256), bv(256);
  for (idx i = 0; i < H; ++i)
    for (idx j = 0; j < W; ++j) {
      double sum = 0, sumsq = 0;
      int cnt = 0;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const idx ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
          const double v = img[ii * W + jj];
          sum += v;
          sumsq += v * v;
          ++cnt;
        }
      const double mean = sum / cnt;
      const double var = sumsq / cnt - mean * mean;
      av[std::size_t(i * W + j)] = var / (var + eps);
      bv[std::size_t(i * W + j)] = mean - av[std::size_t(i * W + j)] * mean;
    }
  for (idx i = 0; i < H; ++i)
    for (idx j = 0; j < W; ++j) {
      double asum = 0, bsum2 = 0;
      int cnt = 0;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const idx ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
          asum += av[std::size_t(ii * W + jj)];
          bsum2 += bv[std::size_t(ii * W + jj)];
          ++cnt;
        }
      const double expect = asum / cnt * img[i * W + j] + bsum2 / cnt;
      REQUIRE(std::abs(mine[i * W + j] - expect) < 1e-6);
    }
  REQUIRE_THROWS(guided_filter(img, img, 0, eps));

  // smoothing monotonicity smoke on a natural-statistics image: refiltering
  // the filtered output moves pixels less than filtering the raw input
  Tensor<double> scene = generate_scene("gfsmoke", 9, 48, 48).cast<double>();
  Tensor<double> once = guided_filter(scene, scene, 3, 1e-3);
  Tensor<double> twice = guided_filter(once, once, 3, 1e-3);
  double d1 = 0, d2 = 0;
  for (idx i = 0; i < scene.numel(); ++i) {
    d1 += std::abs(once[i] - scene[i]);
    d2 += std::abs(twice[i] - once[i]);
  }
  REQUIRE(d2 < d1);
}

TEST_CASE("base loss: fixed points and cache consistency") {
  Rng rng(4);
  Tensor<double> y = Tensor<double>::rand_uniform({3, 20, 20}, rng);
  Tensor<double> target = base_target(y);
  REQUIRE(base_loss(constant(target.clone()), target).val()[0] == 0.0);

  // constant target: the filter is an identity, so L_base == spatial_l1(.., y)
  Tensor<double> cy = Tensor<double>::full({3, 20, 20}, 0.5);
  Tensor<double> ct = base_target(cy);
  for (idx i = 0; i < ct.numel(); ++i) REQUIRE(ct[i] == 0.5);
  Tensor<double> pred = Tensor<double>::rand_uniform({3, 20, 20}, rng);
  REQUIRE(base_loss(constant(pred.clone()), ct).val()[0] ==
          Catch::Approx(spatial_l1(constant(pred.clone()), constant(cy.clone())).val()[0])
              .margin(1e-12));

  // recomputation is bit-exact
  Tensor<double> again = base_target(y);
  for (idx i = 0; i < target.numel(); ++i) REQUIRE(again[i] == target[i]);
}

TEST_CASE("restoration loss: composition and degenerate weights") {
  Rng rng(5);
  Tensor<double> y = Tensor<double>::rand_uniform({1, 3, 16, 16}, rng);
  Tensor<double> bt = base_target(y.reshaped({3, 16, 16})).reshaped({1, 3, 16, 16});
  Var<double> yhat = leaf(Tensor<double>::rand_uniform({1, 3, 16, 16}, rng));
  Var<double> ybase = leaf(Tensor<double>::rand_uniform({1, 3, 16, 16}, rng));

  // perfect prediction on both branches -> 0
  auto perfect = restoration_loss(constant(y.clone()), constant(bt.clone()), y, bt);
  REQUIRE(perfect.total.val()[0] == Catch::Approx(0.0).margin(1e-12));

  // zero weights -> pure spatial l1
  LossWeights none{0.0, 0.0};
  auto pure = restoration_loss(yhat, ybase, y, bt, none);
  REQUIRE(pure.total.val()[0] ==
          Catch::Approx(spatial_l1(yhat, constant(y.clone())).val()[0]).margin(1e-12));

  // total equals the independently recomputed weighted sum
  LossWeights w;
  auto full = restoration_loss(yhat, ybase, y, bt, w);
  const double manual = spatial_l1(yhat, constant(y.clone())).val()[0] +
                        w.lambda_f * masked_freq_l1(yhat, constant(y.clone())).val()[0] +
                        w.lambda_p * base_loss(ybase, bt).val()[0];
  REQUIRE(full.total.val()[0] == Catch::Approx(manual).margin(1e-10));
  REQUIRE(full.l1 + w.lambda_f * full.freq + w.lambda_p * full.base ==
          Catch::Approx(full.total.val()[0]).margin(1e-10));
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(6);
  Tensor<double> y = Tensor<double>::rand_uniform({1, 3, 16, 16}, rng);
  Tensor<double> bt = base_target(y.reshaped({3, 16, 16})).reshaped({1, 3, 16, 16});
  Var<double> yhat = leaf(Tensor<double>::rand_uniform({1, 3, 16, 16}, rng));
  Var<double> ybase = leaf(Tensor<double>::rand_uniform({1, 3, 16, 16}, rng));
  gradcheck({yhat}, [&] { return spatial_l1(yhat, constant(y.clone())); }, 1e-3);
  gradcheck({yhat}, [&] { return masked_freq_l1(yhat, constant(y.clone())); }, 1e-3);
  gradcheck({ybase}, [&] { return base_loss(ybase, bt); }, 1e-3);
  gradcheck({yhat, ybase},
            [&] { return restoration_loss(yhat, ybase, y, bt, LossWeights{}).total; }, 1e-3);
}

TEST_CASE("mask overload: eligibility, action, calibration") {
  // a mask with haze set is never perturbed
  {
    std::vector<FactorMask> masks(500, FactorMask::of({Factor::Rain, Factor::Haze}));
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const auto out = mask_overload(masks, seed);
      for (const auto& m : out) REQUIRE(m == masks[0]);
    }
  }
  // a low-light mask is never perturbed either
  {
    std::vector<FactorMask> masks(100, FactorMask::of({Factor::Snow, Factor::LowLight}));
    const auto out = mask_overload(masks, 3);
    for (const auto& m : out) REQUIRE(m == masks[0]);
  }
  // eligible rain-only: when flipped, exactly one global bit appears
  {
    std::vector<FactorMask> masks(4000, FactorMask::of({Factor::Rain}));
    const auto out = mask_overload(masks, 123);
    int flipped = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      REQUIRE(out[i].get(Factor::Rain));
      const int extra = out[i].popcount() - 1;
      REQUIRE(extra <= 1);
      REQUIRE(extra >= 0);
      if (extra == 1) {
        ++flipped;
        const bool global_bit = out[i].get(Factor::Haze) || out[i].get(Factor::LowLight) ||
                                out[i].get(Factor::OverExposure);
        REQUIRE(global_bit);
      }
    }
    REQUIRE(flipped > 0);
  }
  // Monte-Carlo flip rate over 100k eligible samples in [0.045, 0.055]
  {
    std::vector<FactorMask> masks(100000, FactorMask::of({Factor::Snow}));
    const auto out = mask_overload(masks, 777);
    idx flipped = 0;
    for (const auto& m : out) flipped += (m.popcount() == 2) ? 1 : 0;
    const double rate = double(flipped) / double(masks.size());
    REQUIRE(rate >= 0.045);
    REQUIRE(rate <= 0.055);
  }
  // determinism and input immutability
  {
    std::vector<FactorMask> masks(64, FactorMask::of({Factor::Rain, Factor::OverExposure}));
    const auto before = masks;
    const auto a = mask_overload(masks, 5);
    const auto b = mask_overload(masks, 5);
    for (std::size_t i = 0; i < masks.size(); ++i) {
      REQUIRE(masks[i] == before[i]);
      REQUIRE(a[i] == b[i]);
      REQUIRE(a[i].popcount() - masks[i].popcount() <= 1);
    }
  }
}
