#pragma once

#include "cdrest/synth/image.hpp"

namespace cdrest {

// BT.601 luminance of an RGB [3,H,W] image, double precision.
inline std::vector<double> luminance_y(const Image& img) {
  const idx H = img.dim(1), W = img.dim(2);
  std::vector<double> y(std::size_t(H * W));
  const float* r = img.data();
  const float* g = img.data() + H * W;
  const float* b = img.data() + 2 * H * W;
  for (idx i = 0; i < H * W; ++i)
    y[std::size_t(i)] = 0.299 * double(r[i]) + 0.587 * double(g[i]) + 0.114 * double(b[i]);
  return y;
}

inline constexpr double kPsnrCap = 99.0;  // reported for zero MSE

// PSNR in dB on the luminance channel, dynamic range 1.
inline double psnr_y(const Image& a, const Image& b) {
  CR_CHECK(a.shape() == b.shape(), "psnr_y: shape mismatch");
  const auto ya = luminance_y(a), yb = luminance_y(b);
  double mse = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) mse += (ya[i] - yb[i]) * (ya[i] - yb[i]);
  mse /= double(ya.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Single-scale SSIM on the luminance channel: 11x11 Gaussian window with
// sigma 1.5, K1=0.01, K2=0.03, dynamic range 1, averaged over the positions
// where the window fits entirely inside the image.
inline double ssim_y(const Image& a, const Image& b) {
  CR_CHECK(a.shape() == b.shape(), "ssim_y: shape mismatch");
  const idx H = a.dim(1), W = a.dim(2);
  constexpr int kWin = 11;
  CR_CHECK(H >= kWin && W >= kWin, "ssim_y: image smaller than the 11x11 window");
  static const std::vector<double> kernel = [] {
    std::vector<double> k(kWin * kWin);
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) {
        const double di = i - kWin / 2, dj = j - kWin / 2;
        k[std::size_t(i * kWin + j)] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
        sum += k[std::size_t(i * kWin + j)];
      }
    for (auto& v : k) v /= sum;
    return k;
  }();

  const auto ya = luminance_y(a), yb = luminance_y(b);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  idx count = 0;
  for (idx i = 0; i + kWin <= H; ++i)
    for (idx j = 0; j + kWin <= W; ++j) {
      double mx = 0, my = 0;
      for (int u = 0; u < kWin; ++u)
        for (int v = 0; v < kWin; ++v) {
          const double w = kernel[std::size_t(u * kWin + v)];
          mx += w * ya[std::size_t((i + u) * W + j + v)];
          my += w * yb[std::size_t((i + u) * W + j + v)];
        }
      double vx = 0, vy = 0, vxy = 0;
      for (int u = 0; u < kWin; ++u)
        for (int v = 0; v < kWin; ++v) {
          const double w = kernel[std::size_t(u * kWin + v)];
          const double dx = ya[std::size_t((i + u) * W + j + v)] - mx;
          const double dy = yb[std::size_t((i + u) * W + j + v)] - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          vxy += w * dx * dy;
        }
      const double num = (2 * mx * my + c1) * (2 * vxy + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++count;
    }
  return total / double(count);
}

}  // namespace cdrest
