#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <vector>

#include "cdrest/core/common.hpp"
#include "cdrest/core/rng.hpp"

namespace cdrest {

// Dense row-major n-d array with shared storage. Storage is treated as
// immutable once it participates in an autograd graph; ops allocate fresh
// outputs. Copies are cheap (shared_ptr). Op outputs that are fully written
// use uninit() to skip the zero fill; gradients and accumulators use the
// zero-filling constructor.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<idx> shape) : Tensor(std::move(shape), /*zero=*/true) {}

  static Tensor uninit(std::vector<idx> shape) { return Tensor(std::move(shape), false); }

  static Tensor zeros(std::vector<idx> shape) { return Tensor(std::move(shape), true); }

  static Tensor full(std::vector<idx> shape, T v) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(std::vector<idx> shape, const std::vector<T>& values) {
    Tensor t = uninit(std::move(shape));
    CR_CHECK(idx(values.size()) == t.numel(), "tensor init size mismatch");
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor randn(std::vector<idx> shape, Rng& rng, T std_dev = T(1), T mean = T(0)) {
    Tensor t = uninit(std::move(shape));
    for (idx i = 0; i < t.numel(); ++i) t[i] = mean + std_dev * T(rng.normal());
    return t;
  }

  static Tensor rand_uniform(std::vector<idx> shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor t = uninit(std::move(shape));
    for (idx i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(double(lo), double(hi)));
    return t;
  }

  bool defined() const { return store_ != nullptr; }
  const std::vector<idx>& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  idx dim(int i) const { return shape_[std::size_t(i)]; }
  idx numel() const { return n_; }

  T* data() { return store_.get(); }
  const T* data() const { return store_.get(); }
  T& operator[](idx i) { return store_.get()[i]; }
  const T& operator[](idx i) const { return store_.get()[i]; }

  T& at(std::initializer_list<idx> ix) { return store_.get()[offset(ix)]; }
  const T& at(std::initializer_list<idx> ix) const { return store_.get()[offset(ix)]; }

  idx offset(std::initializer_list<idx> ix) const {
    CR_CHECK(ix.size() == shape_.size(), "index rank mismatch");
    idx off = 0;
    auto it = ix.begin();
    for (std::size_t d = 0; d < shape_.size(); ++d, ++it) off = off * shape_[d] + *it;
    return off;
  }

  Tensor clone() const {
    Tensor t = uninit(shape_);
    std::memcpy(t.data(), data(), std::size_t(n_) * sizeof(T));
    return t;
  }

  // Shares storage.
  Tensor reshaped(std::vector<idx> shape) const {
    CR_CHECK(numel_of(shape) == n_, "reshape numel mismatch: ", shape_str(shape_), " -> ",
             shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = store_;
    t.n_ = n_;
    return t;
  }

  void fill(T v) { std::fill(data(), data() + n_, v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out = Tensor<U>::uninit(shape_);
    for (idx i = 0; i < n_; ++i) out[i] = U(store_.get()[i]);
    return out;
  }

  bool all_finite() const {
    for (idx i = 0; i < n_; ++i)
      if (!std::isfinite(double(store_.get()[i]))) return false;
    return true;
  }

  T max_abs() const {
    T m = 0;
    for (idx i = 0; i < n_; ++i) m = std::max(m, T(std::abs(double(store_.get()[i]))));
    return m;
  }

 private:
  Tensor(std::vector<idx> shape, bool zero)
      : shape_(std::move(shape)), n_(numel_of(shape_)), store_(new T[std::size_t(n_)]) {
    if (zero) std::memset(store_.get(), 0, std::size_t(n_) * sizeof(T));
  }

  std::vector<idx> shape_;
  idx n_ = 0;
  std::shared_ptr<T[]> store_;
};

// dst += scale * src (same numel)
template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T scale = T(1)) {
  CR_CHECK(dst.numel() == src.numel(), "axpy size mismatch");
  T* d = dst.data();
  const T* s = src.data();
  if (scale == T(1)) {
    for (idx i = 0; i < dst.numel(); ++i) d[i] += s[i];
  } else {
    for (idx i = 0; i < dst.numel(); ++i) d[i] += scale * s[i];
  }
}

}  // namespace cdrest
