#pragma once

#include <map>

#include "cdrest/core/rng.hpp"
#include "cdrest/synth/factors.hpp"
#include "cdrest/synth/image.hpp"

namespace cdrest {

// One factor instance with concrete severity parameters.
struct DegradationSpec {
  Factor factor = Factor::Rain;
  std::map<std::string, double> params;

  double p(const std::string& key) const {
    auto it = params.find(key);
    CR_CHECK(it != params.end(), "missing severity parameter '", key, "' for ",
             factor_name(factor));
    return it->second;
  }
};

// Parameter keys per factor, in the fixed sampling order.
inline const std::vector<std::string>& factor_param_keys(Factor f) {
  static const std::array<std::vector<std::string>, kNumFactors> keys = {{
      {"density", "length", "angle", "intensity"},  // rain
      {"density", "radius", "intensity"},           // snow
      {"transmission", "airlight"},                 // haze
      {"gain"},                                     // low-light
      {"gain"},                                     // over-exposure
      {"sigma"},                                    // blur
      {"sigma"},                                    // noise
      {"quality"},                                  // artifact
  }};
  return keys[std::size_t(f)];
}

// Hard validity bounds for severity parameters (catalog ranges must nest
// inside these).
inline std::pair<double, double> factor_param_bounds(Factor f, const std::string& key) {
  switch (f) {
    case Factor::Rain:
      if (key == "density") return {0.0, 5.0};
      if (key == "length") return {2.0, 64.0};
      if (key == "angle") return {-1.2, 1.2};
      if (key == "intensity") return {0.0, 1.0};
      break;
    case Factor::Snow:
      if (key == "density") return {0.0, 5.0};
      if (key == "radius") return {0.5, 6.0};
      if (key == "intensity") return {0.0, 1.0};
      break;
    case Factor::Haze:
      if (key == "transmission") return {0.05, 0.999};
      if (key == "airlight") return {0.7, 1.0};
      break;
    case Factor::LowLight:
      if (key == "gain") return {0.05, 1.0};
      break;
    case Factor::OverExposure:
      if (key == "gain") return {1.0, 4.0};
      break;
    case Factor::Blur:
      if (key == "sigma") return {0.0, 6.0};
      break;
    case Factor::Noise:
      if (key == "sigma") return {0.0, 0.5};
      break;
    case Factor::Artifact:
      if (key == "quality") return {1.0, 100.0};
      break;
  }
  fail(str("unknown severity parameter '", key, "' for ", factor_name(f)));
}

inline void validate_spec(const DegradationSpec& spec) {
  for (const auto& key : factor_param_keys(spec.factor)) {
    const double v = spec.p(key);
    const auto [lo, hi] = factor_param_bounds(spec.factor, key);
    CR_CHECK(v >= lo && v <= hi, "severity out of range: ", factor_name(spec.factor), ".", key,
             "=", v, " not in [", lo, ",", hi, "]");
  }
}

namespace degrade_detail {

inline void add_rain_streaks(Image& img, double density, double length, double angle,
                             double intensity, Rng& rng) {
  const idx H = img.dim(1), W = img.dim(2);
  const idx n = idx(std::llround(density * double(H * W) / 1000.0));
  Tensor<float> layer = Tensor<float>::zeros({H, W});
  for (idx k = 0; k < n; ++k) {
    const double x0 = rng.uniform(0.0, double(W));
    const double y0 = rng.uniform(0.0, double(H));
    const double a = angle + rng.uniform(-0.08, 0.08);
    const double len = length * rng.uniform(0.7, 1.3);
    const double inten = intensity * rng.uniform(0.75, 1.25);
    const double dx = std::sin(a), dy = std::cos(a);
    const int steps = int(std::ceil(len * 2.0));
    for (int s = 0; s <= steps; ++s) {
      const double t = len * double(s) / double(steps);
      const double x = x0 + dx * t, y = y0 + dy * t;
      const idx xi = idx(std::floor(x)), yi = idx(std::floor(y));
      const double fx = x - double(xi), fy = y - double(yi);
      // bilinear splat
      const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
      const double w10 = (1 - fx) * fy, w11 = fx * fy;
      auto splat = [&](idx yy, idx xx, double w) {
        if (yy >= 0 && yy < H && xx >= 0 && xx < W)
          layer[yy * W + xx] = float(std::min(1.0, double(layer[yy * W + xx]) + w * inten * 0.5));
      };
      splat(yi, xi, w00);
      splat(yi, xi + 1, w01);
      splat(yi + 1, xi, w10);
      splat(yi + 1, xi + 1, w11);
    }
  }
  for (idx c = 0; c < 3; ++c)
    for (idx i = 0; i < H * W; ++i) {
      float& v = img[c * H * W + i];
      v = std::min(1.0f, v + layer[i]);
    }
}

inline void add_snow_disks(Image& img, double density, double radius, double intensity, Rng& rng) {
  const idx H = img.dim(1), W = img.dim(2);
  const idx n = idx(std::llround(density * double(H * W) / 1000.0));
  Tensor<float> layer = Tensor<float>::zeros({H, W});
  for (idx k = 0; k < n; ++k) {
    const double cx = rng.uniform(0.0, double(W));
    const double cy = rng.uniform(0.0, double(H));
    const double r = radius * rng.uniform(0.6, 1.4);
    const double inten = intensity * rng.uniform(0.7, 1.0);
    const idx x0 = std::max<idx>(0, idx(std::floor(cx - r - 1)));
    const idx x1 = std::min<idx>(W - 1, idx(std::ceil(cx + r + 1)));
    const idx y0 = std::max<idx>(0, idx(std::floor(cy - r - 1)));
    const idx y1 = std::min<idx>(H - 1, idx(std::ceil(cy + r + 1)));
    for (idx y = y0; y <= y1; ++y)
      for (idx x = x0; x <= x1; ++x) {
        const double d2 = (double(x) - cx) * (double(x) - cx) + (double(y) - cy) * (double(y) - cy);
        const double fall = 1.0 - d2 / (r * r);
        if (fall > 0)
          layer[y * W + x] = float(std::min(1.0, double(layer[y * W + x]) + inten * fall));
      }
  }
  for (idx c = 0; c < 3; ++c)
    for (idx i = 0; i < H * W; ++i) {
      float& v = img[c * H * W + i];
      v = std::min(1.0f, v + layer[i]);
    }
}

// Separable Gaussian with edge-inclusive mirror padding (preserves total mass
// for symmetric kernels).
inline void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0) return;
  const idx H = img.dim(1), W = img.dim(2);
  const idx r = std::max<idx>(1, idx(std::ceil(3.0 * sigma)));
  std::vector<double> k(std::size_t(2 * r + 1));
  double sum = 0;
  for (idx i = -r; i <= r; ++i) {
    k[std::size_t(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    sum += k[std::size_t(i + r)];
  }
  for (auto& v : k) v /= sum;
  auto mirror = [](idx i, idx n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  std::vector<double> tmp(std::size_t(H * W));
  for (idx c = 0; c < 3; ++c) {
    float* p = img.data() + c * H * W;
    for (idx y = 0; y < H; ++y)
      for (idx x = 0; x < W; ++x) {
        double acc = 0;
        for (idx i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * double(p[y * W + mirror(x + i, W)]);
        tmp[std::size_t(y * W + x)] = acc;
      }
    for (idx y = 0; y < H; ++y)
      for (idx x = 0; x < W; ++x) {
        double acc = 0;
        for (idx i = -r; i <= r; ++i) acc += k[std::size_t(i + r)] * tmp[std::size_t(mirror(y + i, H) * W + x)];
        p[y * W + x] = float(acc);
      }
  }
}

// 8x8 block-DCT coefficient quantization, JPEG luminance table scaled by the
// usual quality law, applied per RGB channel.
inline void dct_quantize(Image& img, double quality) {
  static const int base_q[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,
                                 60, 55, 14, 13, 16, 24,  40,  57,  69, 56, 14, 17, 22, 29,
                                 51, 87, 80, 62, 18, 22,  37,  56,  68, 109, 103, 77, 24, 35,
                                 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
                                 72, 92, 95, 98, 112, 100, 103, 99};
  const double scale = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
  double q[64];
  for (int i = 0; i < 64; ++i)
    q[i] = std::max(1.0, std::floor((base_q[i] * scale + 50.0) / 100.0));

  // orthonormal DCT-II basis
  static double basis[8][8];
  static bool init = false;
  if (!init) {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        basis[u][x] = (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                      std::cos((2.0 * x + 1.0) * u * 3.141592653589793 / 16.0);
    init = true;
  }

  const idx H = img.dim(1), W = img.dim(2);
  const idx Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
  auto mirror = [](idx i, idx n) { return i < n ? i : 2 * n - 1 - i; };
  for (idx c = 0; c < 3; ++c) {
    float* p = img.data() + c * H * W;
    for (idx by = 0; by < Hp; by += 8)
      for (idx bx = 0; bx < Wp; bx += 8) {
        double blk[8][8], coef[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            blk[y][x] = double(p[mirror(by + y, H) * W + mirror(bx + x, W)]) * 255.0 - 128.0;
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int y = 0; y < 8; ++y)
              for (int x = 0; x < 8; ++x) acc += basis[u][y] * basis[v][x] * blk[y][x];
            const double step = q[u * 8 + v];
            coef[u][v] = std::round(acc / step) * step;
          }
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            if (by + y >= H || bx + x >= W) continue;
            double acc = 0;
            for (int u = 0; u < 8; ++u)
              for (int v = 0; v < 8; ++v) acc += basis[u][y] * basis[v][x] * coef[u][v];
            p[(by + y) * W + (bx + x)] =
                float(std::min(1.0, std::max(0.0, (acc + 128.0) / 255.0)));
          }
      }
  }
}

}  // namespace degrade_detail

// Applies one degradation. Deterministic in (img, spec, seed); zero severity
// is an exact no-op for the factors that admit one.
inline Image apply_degradation(const Image& img, const DegradationSpec& spec,
                               std::uint64_t seed) {
  validate_spec(spec);
  Image out = img.clone();
  Rng rng = Rng(seed).fork(std::uint64_t(spec.factor) + 101);
  switch (spec.factor) {
    case Factor::Rain:
      degrade_detail::add_rain_streaks(out, spec.p("density"), spec.p("length"), spec.p("angle"),
                                       spec.p("intensity"), rng);
      break;
    case Factor::Snow:
      degrade_detail::add_snow_disks(out, spec.p("density"), spec.p("radius"),
                                     spec.p("intensity"), rng);
      break;
    case Factor::Haze: {
      const float t = float(spec.p("transmission")), A = float(spec.p("airlight"));
      for (idx i = 0; i < out.numel(); ++i) out[i] = out[i] * t + A * (1.0f - t);
      break;
    }
    case Factor::LowLight: {
      const float g = float(spec.p("gain"));
      for (idx i = 0; i < out.numel(); ++i) out[i] = g * std::pow(out[i], 1.1f);
      break;
    }
    case Factor::OverExposure: {
      const float g = float(spec.p("gain"));
      for (idx i = 0; i < out.numel(); ++i) out[i] = std::min(1.0f, g * out[i]);
      break;
    }
    case Factor::Blur:
      degrade_detail::gaussian_blur(out, spec.p("sigma"));
      break;
    case Factor::Noise: {
      const float s = float(spec.p("sigma"));
      if (s > 0)
        for (idx i = 0; i < out.numel(); ++i)
          out[i] = std::min(1.0f, std::max(0.0f, out[i] + s * float(rng.normal())));
      break;
    }
    case Factor::Artifact:
      degrade_detail::dct_quantize(out, spec.p("quality"));
      break;
  }
  clamp01(out);
  return out;
}

}  // namespace cdrest
