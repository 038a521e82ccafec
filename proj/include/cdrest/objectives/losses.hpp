#pragma once

#include "cdrest/core/ops_fft.hpp"
#include "cdrest/core/ops_nn.hpp"
#include "cdrest/synth/factors.hpp"

namespace cdrest {

// Mean absolute difference over all elements.
template <typename T>
Var<T> spatial_l1(Var<T> yhat, Var<T> y) {
  check_same_shape(yhat, y, "spatial_l1");
  return mean_all(abs_op(sub(yhat, y)));
}

// Retained-bin indicator for the masked spectral loss: ones everywhere except
// a centered square of side floor(ratio*min(H,W)) around the zero-frequency
// bin (after the centering shift), expressed in unshifted FFT coordinates.
template <typename T>
Tensor<T> freq_retain_mask(idx H, idx W, double ratio, idx* retained_count = nullptr) {
  const idx side = idx(ratio * double(std::min(H, W)));
  CR_CHECK(side >= 1 && side < std::min(H, W), "freq mask: degenerate center side ", side);
  const idx ch = H / 2, cw = W / 2;
  const idx h0 = ch - side / 2, w0 = cw - side / 2;
  Tensor<T> mask = Tensor<T>::full({H, W}, T(1));
  for (idx h = 0; h < H; ++h)
    for (idx w = 0; w < W; ++w) {
      const idx sh = (h + ch) % H, sw = (w + cw) % W;  // position after fftshift
      if (sh >= h0 && sh < h0 + side && sw >= w0 && sw < w0 + side) mask[h * W + w] = T(0);
    }
  if (retained_count) *retained_count = H * W - side * side;
  return mask;
}

// Masked FFT-magnitude l1: mean over retained bins of ||FFT(yhat)| - |FFT(y)||,
// per-channel transform, mean over channels (and batch).
template <typename T>
Var<T> masked_freq_l1(Var<T> yhat, Var<T> y, double center_ratio = 0.2) {
  check_same_shape(yhat, y, "masked_freq_l1");
  std::vector<idx> s = yhat.shape();
  CR_CHECK(s.size() >= 2, "masked_freq_l1: rank");
  const idx W = s[s.size() - 1], H = s[s.size() - 2];
  const idx slabs = yhat.numel() / (H * W);
  idx retained = 0;
  Tensor<T> keep = freq_retain_mask<T>(H, W, center_ratio, &retained);
  // broadcast the retained mask over all slabs
  Tensor<T> keep_full = Tensor<T>::uninit(yhat.shape());
  for (idx k = 0; k < slabs; ++k)
    std::memcpy(keep_full.data() + k * H * W, keep.data(), std::size_t(H * W) * sizeof(T));
  Var<T> mag_hat = complex_magnitude(fft2c(complexify(yhat)));
  Var<T> mag_ref = complex_magnitude(fft2c(complexify(y)));
  Var<T> diff = abs_op(sub(mag_hat, mag_ref));
  Var<T> total = weighted_sum(diff, keep_full);
  return mul_scalar(total, T(1) / T(retained * slabs));
}

struct GuidedFilterSpec {
  int radius = 15;
  double eps = 1e-3;
};

namespace gf_detail {
// Box sums over (2r+1)^2 windows clipped to the image, via integral images.
inline void box_stats(const std::vector<double>& x, idx H, idx W, int r,
                      std::vector<double>& out_sum) {
  std::vector<double> integral((std::size_t)((H + 1) * (W + 1)), 0.0);
  for (idx i = 0; i < H; ++i)
    for (idx j = 0; j < W; ++j)
      integral[std::size_t((i + 1) * (W + 1) + (j + 1))] =
          x[std::size_t(i * W + j)] + integral[std::size_t(i * (W + 1) + (j + 1))] +
          integral[std::size_t((i + 1) * (W + 1) + j)] - integral[std::size_t(i * (W + 1) + j)];
  out_sum.resize(std::size_t(H * W));
  for (idx i = 0; i < H; ++i)
    for (idx j = 0; j < W; ++j) {
      const idx i0 = std::max<idx>(0, i - r), i1 = std::min<idx>(H - 1, i + r);
      const idx j0 = std::max<idx>(0, j - r), j1 = std::min<idx>(W - 1, j + r);
      out_sum[std::size_t(i * W + j)] =
          integral[std::size_t((i1 + 1) * (W + 1) + (j1 + 1))] -
          integral[std::size_t(i0 * (W + 1) + (j1 + 1))] -
          integral[std::size_t((i1 + 1) * (W + 1) + j0)] + integral[std::size_t(i0 * (W + 1) + j0)];
    }
}

inline std::vector<double> window_counts(idx H, idx W, int r) {
  std::vector<double> n(std::size_t(H * W));
  for (idx i = 0; i < H; ++i)
    for (idx j = 0; j < W; ++j) {
      const idx hi = std::min<idx>(H - 1, i + r) - std::max<idx>(0, i - r) + 1;
      const idx wi = std::min<idx>(W - 1, j + r) - std::max<idx>(0, j - r) + 1;
      n[std::size_t(i * W + j)] = double(hi * wi);
    }
  return n;
}
}  // namespace gf_detail

// Classical guided filter (He et al.) on one plane, double precision, with
// edge-replicating box normalization (window means divide by the actual
// in-bounds window area).
inline std::vector<double> guided_filter_plane(const std::vector<double>& I,
                                               const std::vector<double>& p, idx H, idx W, int r,
                                               double eps) {
  CR_CHECK(I.size() == p.size() && idx(I.size()) == H * W, "guided_filter: size");
  std::vector<double> Ip(I.size()), II(I.size());
  for (std::size_t k = 0; k < I.size(); ++k) {
    Ip[k] = I[k] * p[k];
    II[k] = I[k] * I[k];
  }
  std::vector<double> sI, sp, sIp, sII;
  gf_detail::box_stats(I, H, W, r, sI);
  gf_detail::box_stats(p, H, W, r, sp);
  gf_detail::box_stats(Ip, H, W, r, sIp);
  gf_detail::box_stats(II, H, W, r, sII);
  const std::vector<double> n = gf_detail::window_counts(H, W, r);
  std::vector<double> a(I.size()), b(I.size());
  for (std::size_t k = 0; k < I.size(); ++k) {
    const double mI = sI[k] / n[k], mp = sp[k] / n[k];
    const double cov = sIp[k] / n[k] - mI * mp;
    const double var = sII[k] / n[k] - mI * mI;
    a[k] = cov / (var + eps);
    b[k] = mp - a[k] * mI;
  }
  std::vector<double> sa, sb;
  gf_detail::box_stats(a, H, W, r, sa);
  gf_detail::box_stats(b, H, W, r, sb);
  std::vector<double> q(I.size());
  for (std::size_t k = 0; k < I.size(); ++k) q[k] = (sa[k] / n[k]) * I[k] + sb[k] / n[k];
  return q;
}

// Per-channel guided filter of a [C,H,W] (or [H,W]) tensor.
template <typename T>
Tensor<T> guided_filter(const Tensor<T>& guide, const Tensor<T>& input, int r, double eps) {
  CR_CHECK(guide.shape() == input.shape(), "guided_filter: shape mismatch");
  CR_CHECK(r >= 1, "guided_filter: radius must be >= 1");
  const int nd = guide.ndim();
  const idx W = guide.dim(nd - 1), H = guide.dim(nd - 2);
  const idx planes = guide.numel() / (H * W);
  Tensor<T> out = Tensor<T>::uninit(guide.shape());
  std::vector<double> Ig(std::size_t(H * W)), pg(std::size_t(H * W));
  for (idx c = 0; c < planes; ++c) {
    for (idx k = 0; k < H * W; ++k) {
      Ig[std::size_t(k)] = double(guide[c * H * W + k]);
      pg[std::size_t(k)] = double(input[c * H * W + k]);
    }
    const auto q = guided_filter_plane(Ig, pg, H, W, r, eps);
    for (idx k = 0; k < H * W; ++k) out[c * H * W + k] = T(q[std::size_t(k)]);
  }
  return out;
}

// Low-frequency supervision target: self-guided filter of the clean image.
template <typename T>
Tensor<T> base_target(const Tensor<T>& y, const GuidedFilterSpec& spec = {}) {
  return guided_filter(y, y, spec.radius, spec.eps);
}

// L_base = mean |y_base - GuidedFilter(y, y)|.
template <typename T>
Var<T> base_loss(Var<T> y_base, const Tensor<T>& target) {
  return spatial_l1(y_base, constant(target.clone()));
}

struct LossWeights {
  double lambda_f = 0.1;
  double lambda_p = 0.1;
};

template <typename T>
struct RestorationLossResult {
  Var<T> total;
  double l1 = 0, freq = 0, base = 0;
};

// L_R = |yhat - y|_1 + lambda_f * L_freq + lambda_p * L_base.
template <typename T>
RestorationLossResult<T> restoration_loss(Var<T> yhat, Var<T> y_base, const Tensor<T>& y,
                                          const Tensor<T>& y_base_target,
                                          const LossWeights& w = {}) {
  RestorationLossResult<T> out;
  Var<T> yc = constant(y.clone());
  Var<T> l1 = spatial_l1(yhat, yc);
  out.l1 = double(l1.val()[0]);
  out.total = l1;
  if (w.lambda_f != 0) {
    Var<T> lf = masked_freq_l1(yhat, yc);
    out.freq = double(lf.val()[0]);
    out.total = add(out.total, mul_scalar(lf, T(w.lambda_f)));
  }
  if (w.lambda_p != 0) {
    Var<T> lb = base_loss(y_base, y_base_target);
    out.base = double(lb.val()[0]);
    out.total = add(out.total, mul_scalar(lb, T(w.lambda_p)));
  }
  return out;
}

struct OverloadSpec {
  double probability = 0.05;
};

// Mask-overload augmentation: with the given probability, samples whose mask
// has rain or snow set and neither haze nor low-light set get one uniformly
// chosen global-group bit switched on. Touches only the masks fed to the
// network, never images or loss targets.
inline std::vector<FactorMask> mask_overload(const std::vector<FactorMask>& masks,
                                             std::uint64_t seed, const OverloadSpec& spec = {}) {
  std::vector<FactorMask> out = masks;
  Rng base(seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = base.fork(std::uint64_t(i) + 1);
    const bool flip = rng.bernoulli(spec.probability);
    const idx pick = rng.uniform_int(3);  // drawn unconditionally to keep streams aligned
    FactorMask& m = out[i];
    const bool eligible = (m.get(Factor::Rain) || m.get(Factor::Snow)) && !m.get(Factor::Haze) &&
                          !m.get(Factor::LowLight);
    if (!eligible || !flip) continue;
    static const Factor kGlobalBits[3] = {Factor::Haze, Factor::LowLight, Factor::OverExposure};
    m.set(kGlobalBits[pick], true);
  }
  return out;
}

}  // namespace cdrest
