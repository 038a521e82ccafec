#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace cdrest {

#if defined(__AVX2__)
// 8-wide Cephes-style expf (~2 ulp). Inputs clamp to [-87.3, 88.4]; the low
// end saturates near 1e-38 instead of flushing to zero.
inline __m256 exp256_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647950f);
  const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);
  x = _mm256_min_ps(hi, _mm256_max_ps(lo, x));
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, one));
  const __m256i n = _mm256_cvtps_epi32(fx);
  const __m256i pow2n = _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}
#endif

// dst[i] = exp(src[i]); dst may alias src.
inline void exp_array_f32(float* dst, const float* src, std::int64_t n) {
  std::int64_t i = 0;
#if defined(__AVX2__)
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(dst + i, exp256_ps(_mm256_loadu_ps(src + i)));
#endif
  for (; i < n; ++i) dst[i] = std::exp(src[i]);
}

// dst[i] = erf(src[i]) via Abramowitz & Stegun 7.1.26 (|error| <= 1.5e-7).
inline void erf_array_f32(float* dst, const float* src, std::int64_t n) {
  std::int64_t i = 0;
#if defined(__AVX2__)
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 one = _mm256_set1_ps(1.0f);
  for (; i + 8 <= n; i += 8) {
    const __m256 x = _mm256_loadu_ps(src + i);
    const __m256 ax = _mm256_andnot_ps(sign_mask, x);
    const __m256 sgn = _mm256_and_ps(sign_mask, x);
    const __m256 t = _mm256_div_ps(one, _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), ax, one));
    __m256 y = _mm256_set1_ps(1.061405429f);
    y = _mm256_fmadd_ps(y, t, _mm256_set1_ps(-1.453152027f));
    y = _mm256_fmadd_ps(y, t, _mm256_set1_ps(1.421413741f));
    y = _mm256_fmadd_ps(y, t, _mm256_set1_ps(-0.284496736f));
    y = _mm256_fmadd_ps(y, t, _mm256_set1_ps(0.254829592f));
    y = _mm256_mul_ps(y, t);
    const __m256 e = exp256_ps(_mm256_sub_ps(_mm256_setzero_ps(), _mm256_mul_ps(ax, ax)));
    const __m256 r = _mm256_fnmadd_ps(y, e, one);
    _mm256_storeu_ps(dst + i, _mm256_or_ps(r, sgn));
  }
#endif
  for (; i < n; ++i) {
    const float x = src[i];
    const float ax = std::abs(x);
    const float t = 1.0f / (1.0f + 0.3275911f * ax);
    float y = 1.061405429f;
    y = y * t - 1.453152027f;
    y = y * t + 1.421413741f;
    y = y * t - 0.284496736f;
    y = y * t + 0.254829592f;
    y = y * t;
    dst[i] = std::copysign(1.0f - y * std::exp(-ax * ax), x);
  }
}

// Branchless float erf, Abramowitz & Stegun 7.1.26 (|error| <= 1.5e-7).
// std::erf has no vector variant; the double instantiation keeps exact libm
// calls and backs the oracle-agreement tests.
inline float fast_erff(float x) {
  const float ax = std::abs(x);
  const float t = 1.0f / (1.0f + 0.3275911f * ax);
  float y = 1.061405429f;
  y = y * t - 1.453152027f;
  y = y * t + 1.421413741f;
  y = y * t - 0.284496736f;
  y = y * t + 0.254829592f;
  y = y * t;
  return std::copysign(1.0f - y * std::exp(-ax * ax), x);
}

template <typename T>
struct FastMath {
  static T exp(T x) { return std::exp(x); }
  static T erf(T x) { return std::erf(x); }
  static T tanh(T x) { return std::tanh(x); }
  static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }
  static void exp_array(T* dst, const T* src, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = std::exp(src[i]);
  }
  static void erf_array(T* dst, const T* src, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = std::erf(src[i]);
  }
};

template <>
struct FastMath<float> {
  static float exp(float x) { return std::exp(x); }
  static float erf(float x) { return fast_erff(x); }
  static float tanh(float x) { return std::tanh(x); }
  static float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
  static void exp_array(float* dst, const float* src, std::int64_t n) {
    exp_array_f32(dst, src, n);
  }
  static void erf_array(float* dst, const float* src, std::int64_t n) {
    erf_array_f32(dst, src, n);
  }
};

}  // namespace cdrest
