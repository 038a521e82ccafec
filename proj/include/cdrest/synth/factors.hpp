#pragma once

#include <array>
#include <string>
#include <vector>

#include "cdrest/core/common.hpp"

namespace cdrest {

// The eight atomic degradation factors, in canonical order. This order is
// also the composition application order (weather -> illumination -> blur ->
// noise -> artifact last) and the bit order of every mask in the project.
enum class Factor : int {
  Rain = 0,
  Snow = 1,
  Haze = 2,
  LowLight = 3,
  OverExposure = 4,
  Blur = 5,
  Noise = 6,
  Artifact = 7,
};

inline constexpr int kNumFactors = 8;
inline constexpr int kLabelBits = kNumFactors + 1;  // + clean bit (index 8)

inline const std::array<std::string, kNumFactors>& factor_names() {
  static const std::array<std::string, kNumFactors> names = {
      "rain", "snow", "haze", "low-light", "over-exposure", "blur", "noise", "artifact"};
  return names;
}

inline const std::string& factor_name(Factor f) { return factor_names()[std::size_t(f)]; }

inline Factor factor_from_name(const std::string& s) {
  for (int i = 0; i < kNumFactors; ++i)
    if (factor_names()[std::size_t(i)] == s) return Factor(i);
  fail(str("unknown factor name: '", s, "'"));
}

// Multi-hot indicator over the eight factors.
struct FactorMask {
  std::array<std::uint8_t, kNumFactors> bits{};

  static FactorMask none() { return FactorMask{}; }

  static FactorMask of(std::initializer_list<Factor> fs) {
    FactorMask m;
    for (Factor f : fs) m.set(f, true);
    return m;
  }

  bool get(Factor f) const { return bits[std::size_t(f)] != 0; }
  bool get(int i) const { return bits[std::size_t(i)] != 0; }
  void set(Factor f, bool v) { bits[std::size_t(f)] = v ? 1 : 0; }
  void set(int i, bool v) { bits[std::size_t(i)] = v ? 1 : 0; }

  int popcount() const {
    int n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }

  bool any() const { return popcount() > 0; }

  bool operator==(const FactorMask& o) const { return bits == o.bits; }

  std::string to_string() const {
    std::string s;
    for (auto b : bits) s += b ? '1' : '0';
    return s;
  }

  static FactorMask from_string(const std::string& s) {
    CR_CHECK(s.size() == kNumFactors, "mask string must have 8 bits, got '", s, "'");
    FactorMask m;
    for (int i = 0; i < kNumFactors; ++i) {
      CR_CHECK(s[std::size_t(i)] == '0' || s[std::size_t(i)] == '1', "bad mask bit in '", s, "'");
      m.set(i, s[std::size_t(i)] == '1');
    }
    return m;
  }

  // 9-bit label (factors + clean bit); clean bit set iff all factors clear.
  std::vector<float> label9() const {
    std::vector<float> v(kLabelBits, 0.0f);
    for (int i = 0; i < kNumFactors; ++i) v[std::size_t(i)] = bits[std::size_t(i)] ? 1.0f : 0.0f;
    v[kNumFactors] = any() ? 0.0f : 1.0f;
    return v;
  }
};

// Expert grouping used by the decoupled MoE: scene-level (global) factors vs
// spatially localized ones.
inline const std::array<Factor, 3>& global_group() {
  static const std::array<Factor, 3> g = {Factor::Haze, Factor::LowLight, Factor::OverExposure};
  return g;
}

inline const std::array<Factor, 5>& spatial_group() {
  static const std::array<Factor, 5> g = {Factor::Rain, Factor::Snow, Factor::Blur, Factor::Noise,
                                          Factor::Artifact};
  return g;
}

}  // namespace cdrest
