#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "cdrest/core/autograd.hpp"
#include "cdrest/core/fastmath.hpp"

namespace cdrest {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  CR_CHECK(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()), " vs ",
           shape_str(b.shape()));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = a.val().clone();
  axpy(out, b.val());
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.needs_grad()) axpy(a.grad(), n.grad);
    if (b.needs_grad()) axpy(b.grad(), n.grad);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = a.val().clone();
  axpy(out, b.val(), T(-1));
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.needs_grad()) axpy(a.grad(), n.grad);
    if (b.needs_grad()) axpy(b.grad(), n.grad, T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  for (idx i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.needs_grad()) {
      Tensor<T>& g = a.grad();
      for (idx i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b.val()[i];
    }
    if (b.needs_grad()) {
      Tensor<T>& g = b.grad();
      for (idx i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a.val()[i];
    }
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  for (idx i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c;
  return make_node<T>(std::move(out), {a}, [a, c](Node<T>& n) mutable {
    if (a.needs_grad()) axpy(a.grad(), n.grad, c);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  for (idx i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) mutable {
    if (a.needs_grad()) axpy(a.grad(), n.grad);
  });
}

// out = x + s, s a 1-element var broadcast over x.
template <typename T>
Var<T> add_scalar_var(Var<T> x, Var<T> s) {
  CR_CHECK(s.numel() == 1, "add_scalar_var: s must be scalar");
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T sv = s.val()[0];
  for (idx i = 0; i < out.numel(); ++i) out[i] = x.val()[i] + sv;
  return make_node<T>(std::move(out), {x, s}, [x, s](Node<T>& n) mutable {
    if (x.needs_grad()) axpy(x.grad(), n.grad);
    if (s.needs_grad()) {
      T acc = 0;
      for (idx i = 0; i < n.grad.numel(); ++i) acc += n.grad[i];
      s.grad()[0] += acc;
    }
  });
}

// out = x * s, s a 1-element var.
template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s) {
  CR_CHECK(s.numel() == 1, "scale_by: s must be scalar");
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T sv = s.val()[0];
  for (idx i = 0; i < out.numel(); ++i) out[i] = x.val()[i] * sv;
  return make_node<T>(std::move(out), {x, s}, [x, s](Node<T>& n) mutable {
    if (x.needs_grad()) axpy(x.grad(), n.grad, s.val()[0]);
    if (s.needs_grad()) {
      T acc = 0;
      for (idx i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * x.val()[i];
      s.grad()[0] += acc;
    }
  });
}

template <typename T, typename FwdF, typename DervF>
Var<T> unary_ew(Var<T> a, FwdF f, DervF dfdx_from_in_out) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  for (idx i = 0; i < out.numel(); ++i) out[i] = f(a.val()[i]);
  return make_node<T>(std::move(out), {a}, [a, dfdx_from_in_out](Node<T>& n) mutable {
    if (!a.needs_grad()) return;
    Tensor<T>& g = a.grad();
    for (idx i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * dfdx_from_in_out(a.val()[i], n.value[i]);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const idx n = a.numel();
  for (idx i = 0; i < n; ++i) out[i] = -a.val()[i];
  FastMath<T>::exp_array(out.data(), out.data(), n);
  for (idx i = 0; i < n; ++i) out[i] = T(1) / (T(1) + out[i]);
  return make_node<T>(std::move(out), {a}, [a](Node<T>& nd) mutable {
    if (!a.needs_grad()) return;
    Tensor<T>& g = a.grad();
    for (idx i = 0; i < g.numel(); ++i)
      g[i] += nd.grad[i] * nd.value[i] * (T(1) - nd.value[i]);
  });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
  return unary_ew(
      a, [](T x) { return FastMath<T>::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  const idx n = a.numel();
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  for (idx i = 0; i < n; ++i) out[i] = a.val()[i] * T(0.7071067811865476);
  FastMath<T>::erf_array(out.data(), out.data(), n);
  for (idx i = 0; i < n; ++i) out[i] = T(0.5) * a.val()[i] * (T(1) + out[i]);
  return make_node<T>(std::move(out), {a}, [a](Node<T>& nd) mutable {
    if (!a.needs_grad()) return;
    const idx n = a.numel();
    Tensor<T> cdf = Tensor<T>::uninit(a.shape());
    Tensor<T> pdf = Tensor<T>::uninit(a.shape());
    for (idx i = 0; i < n; ++i) cdf[i] = a.val()[i] * T(0.7071067811865476);
    FastMath<T>::erf_array(cdf.data(), cdf.data(), n);
    for (idx i = 0; i < n; ++i) pdf[i] = T(-0.5) * a.val()[i] * a.val()[i];
    FastMath<T>::exp_array(pdf.data(), pdf.data(), n);
    Tensor<T>& g = a.grad();
    for (idx i = 0; i < n; ++i) {
      const T c = T(0.5) * (T(1) + cdf[i]);
      g[i] += nd.grad[i] * (c + a.val()[i] * T(0.3989422804014327) * pdf[i]);
    }
  });
}

template <typename T>
Var<T> sqrt_op(Var<T> a) {
  return unary_ew(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

// |x| with subgradient 0 at 0.
template <typename T>
Var<T> abs_op(Var<T> a) {
  return unary_ew(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  T acc = 0;
  for (idx i = 0; i < a.numel(); ++i) acc += a.val()[i];
  return make_node<T>(Tensor<T>::scalar(acc), {a}, [a](Node<T>& n) mutable {
    if (a.needs_grad()) {
      Tensor<T>& g = a.grad();
      const T gv = n.grad[0];
      for (idx i = 0; i < g.numel(); ++i) g[i] += gv;
    }
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  return mul_scalar(sum_all(a), T(1) / T(a.numel()));
}

// sum(w ⊙ x) with constant weights (pre-broadcast to x's shape).
template <typename T>
Var<T> weighted_sum(Var<T> x, Tensor<T> w) {
  CR_CHECK(w.numel() == x.numel(), "weighted_sum: weight size mismatch");
  T acc = 0;
  for (idx i = 0; i < x.numel(); ++i) acc += x.val()[i] * w[i];
  return make_node<T>(Tensor<T>::scalar(acc), {x}, [x, w](Node<T>& n) mutable {
    if (x.needs_grad()) {
      Tensor<T>& g = x.grad();
      const T gv = n.grad[0];
      for (idx i = 0; i < g.numel(); ++i) g[i] += gv * w[i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<idx> shape) {
  Tensor<T> out = a.val().reshaped(std::move(shape));
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) mutable {
    if (a.needs_grad()) axpy(a.grad(), n.grad);
  });
}

namespace detail {
inline std::vector<idx> permuted_shape(const std::vector<idx>& s, const std::vector<int>& perm) {
  std::vector<idx> out(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = s[std::size_t(perm[i])];
  return out;
}

// Walks the permuted output in row-major order, yielding (output linear
// index, source offset). src_shape is the shape of the un-permuted tensor.
template <typename Fn>
void permute_walk(const std::vector<idx>& src_shape, const std::vector<int>& perm, Fn&& fn) {
  const int nd = int(src_shape.size());
  std::vector<idx> sstride(std::size_t(nd), 1);
  for (int d = nd - 2; d >= 0; --d)
    sstride[std::size_t(d)] = sstride[std::size_t(d + 1)] * src_shape[std::size_t(d + 1)];
  const std::vector<idx> oshape = permuted_shape(src_shape, perm);
  std::vector<idx> ostride_in_src(static_cast<std::size_t>(nd));
  for (int d = 0; d < nd; ++d)
    ostride_in_src[std::size_t(d)] = sstride[std::size_t(perm[std::size_t(d)])];

  std::vector<idx> ix(std::size_t(nd), 0);
  const idx n = numel_of(src_shape);
  idx soff = 0;
  for (idx i = 0; i < n; ++i) {
    fn(i, soff);
    for (int d = nd - 1; d >= 0; --d) {
      ix[std::size_t(d)]++;
      soff += ostride_in_src[std::size_t(d)];
      if (ix[std::size_t(d)] < oshape[std::size_t(d)]) break;
      soff -= ostride_in_src[std::size_t(d)] * oshape[std::size_t(d)];
      ix[std::size_t(d)] = 0;
    }
  }
}
}  // namespace detail

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> perm) {
  CR_CHECK(int(perm.size()) == a.val().ndim(), "permute rank mismatch");
  Tensor<T> out = Tensor<T>::uninit(detail::permuted_shape(a.shape(), perm));
  {
    const T* src = a.val().data();
    T* dst = out.data();
    detail::permute_walk(a.shape(), perm, [&](idx i, idx soff) { dst[i] = src[soff]; });
  }
  return make_node<T>(std::move(out), {a}, [a, perm](Node<T>& n) mutable {
    if (!a.needs_grad()) return;
    T* gdst = a.grad().data();
    const T* gsrc = n.grad.data();
    detail::permute_walk(a.shape(), perm, [&](idx i, idx soff) { gdst[soff] += gsrc[i]; });
  });
}

template <typename T>
Var<T> slice(Var<T> a, int dim, idx start, idx len) {
  const auto& s = a.shape();
  CR_CHECK(dim >= 0 && dim < int(s.size()), "slice: bad dim");
  CR_CHECK(start >= 0 && start + len <= s[std::size_t(dim)], "slice: out of range");
  idx outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= s[std::size_t(d)];
  for (int d = dim + 1; d < int(s.size()); ++d) inner *= s[std::size_t(d)];
  std::vector<idx> oshape = s;
  oshape[std::size_t(dim)] = len;
  Tensor<T> out = Tensor<T>::uninit(oshape);
  const idx sdim = s[std::size_t(dim)];
  for (idx o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, a.val().data() + (o * sdim + start) * inner,
                std::size_t(len * inner) * sizeof(T));
  return make_node<T>(std::move(out), {a}, [a, dim, start, len, outer, inner, sdim](Node<T>& n) mutable {
    if (!a.needs_grad()) return;
    Tensor<T>& g = a.grad();
    for (idx o = 0; o < outer; ++o) {
      T* gp = g.data() + (o * sdim + start) * inner;
      const T* np = n.grad.data() + o * len * inner;
      for (idx i = 0; i < len * inner; ++i) gp[i] += np[i];
    }
  });
}

template <typename T>
Var<T> concat(std::vector<Var<T>> parts, int dim) {
  CR_CHECK(!parts.empty(), "concat: empty");
  const auto& s0 = parts[0].shape();
  idx outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= s0[std::size_t(d)];
  for (int d = dim + 1; d < int(s0.size()); ++d) inner *= s0[std::size_t(d)];
  idx total = 0;
  for (auto& p : parts) total += p.shape()[std::size_t(dim)];
  std::vector<idx> oshape = s0;
  oshape[std::size_t(dim)] = total;
  Tensor<T> out = Tensor<T>::uninit(oshape);
  std::vector<idx> offs;
  idx off = 0;
  for (auto& p : parts) {
    offs.push_back(off);
    const idx len = p.shape()[std::size_t(dim)];
    for (idx o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total + off) * inner, p.val().data() + o * len * inner,
                  std::size_t(len * inner) * sizeof(T));
    off += len;
  }
  return make_node<T>(std::move(out), parts,
                      [parts, offs, dim, outer, inner, total](Node<T>& n) mutable {
                        for (std::size_t k = 0; k < parts.size(); ++k) {
                          if (!parts[k].needs_grad()) continue;
                          const idx len = parts[k].shape()[std::size_t(dim)];
                          Tensor<T>& g = parts[k].grad();
                          for (idx o = 0; o < outer; ++o) {
                            T* gp = g.data() + o * len * inner;
                            const T* np = n.grad.data() + (o * total + offs[k]) * inner;
                            for (idx i = 0; i < len * inner; ++i) gp[i] += np[i];
                          }
                        }
                      });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<idx> indices) {
  CR_CHECK(x.val().ndim() == 2, "gather_rows expects 2-d");
  const idx C = x.shape()[1];
  Tensor<T> out = Tensor<T>::uninit({idx(indices.size()), C});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::memcpy(out.data() + idx(r) * C, x.val().data() + indices[r] * C, std::size_t(C) * sizeof(T));
  return make_node<T>(std::move(out), {x}, [x, indices, C](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      T* gp = g.data() + indices[r] * C;
      const T* np = n.grad.data() + idx(r) * C;
      for (idx i = 0; i < C; ++i) gp[i] += np[i];
    }
  });
}

// x (any shape) -> [N, ...x.shape]
template <typename T>
Var<T> broadcast_to_batch(Var<T> x, idx N) {
  std::vector<idx> oshape = x.shape();
  oshape.insert(oshape.begin(), N);
  Tensor<T> out = Tensor<T>::uninit(oshape);
  const idx sz = x.numel();
  for (idx n = 0; n < N; ++n)
    std::memcpy(out.data() + n * sz, x.val().data(), std::size_t(sz) * sizeof(T));
  return make_node<T>(std::move(out), {x}, [x, N, sz](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx b = 0; b < N; ++b) {
      const T* np = n.grad.data() + b * sz;
      for (idx i = 0; i < sz; ++i) g[i] += np[i];
    }
  });
}

// x: [N,C,H,W] -> [N,C], mean over H,W.
template <typename T>
Var<T> gap2d(Var<T> x) {
  const auto& s = x.shape();
  CR_CHECK(s.size() == 4, "gap2d expects NCHW");
  const idx N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit({N, C});
  const T inv = T(1) / T(HW);
  for (idx nc = 0; nc < N * C; ++nc) {
    T acc = 0;
    const T* p = x.val().data() + nc * HW;
    for (idx i = 0; i < HW; ++i) acc += p[i];
    out[nc] = acc * inv;
  }
  return make_node<T>(std::move(out), {x}, [x, HW, inv](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx nc = 0; nc < n.grad.numel(); ++nc) {
      const T gv = n.grad[nc] * inv;
      T* gp = g.data() + nc * HW;
      for (idx i = 0; i < HW; ++i) gp[i] += gv;
    }
  });
}

// x: [N,C,H,W] plus per-(n,c) offset v: [N,C], out = x + alpha*v broadcast over H,W.
template <typename T>
Var<T> add_nc(Var<T> x, Var<T> v, T alpha = T(1)) {
  const auto& s = x.shape();
  CR_CHECK(s.size() == 4 && v.shape() == std::vector<idx>({s[0], s[1]}), "add_nc shape");
  const idx HW = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit(s);
  for (idx nc = 0; nc < s[0] * s[1]; ++nc) {
    const T a = alpha * v.val()[nc];
    const T* p = x.val().data() + nc * HW;
    T* o = out.data() + nc * HW;
    for (idx i = 0; i < HW; ++i) o[i] = p[i] + a;
  }
  return make_node<T>(std::move(out), {x, v}, [x, v, HW, alpha](Node<T>& n) mutable {
    if (x.needs_grad()) axpy(x.grad(), n.grad);
    if (v.needs_grad()) {
      Tensor<T>& g = v.grad();
      for (idx nc = 0; nc < g.numel(); ++nc) {
        T acc = 0;
        const T* np = n.grad.data() + nc * HW;
        for (idx i = 0; i < HW; ++i) acc += np[i];
        g[nc] += alpha * acc;
      }
    }
  });
}

// x: [N,C,H,W] * r: [N,1,H,W] broadcast over channels.
template <typename T>
Var<T> mul_bcast_c(Var<T> x, Var<T> r) {
  const auto& s = x.shape();
  CR_CHECK(s.size() == 4 && r.shape() == std::vector<idx>({s[0], idx(1), s[2], s[3]}),
           "mul_bcast_c shape");
  const idx N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit(s);
  for (idx n = 0; n < N; ++n) {
    const T* rp = r.val().data() + n * HW;
    for (idx c = 0; c < C; ++c) {
      const T* p = x.val().data() + (n * C + c) * HW;
      T* o = out.data() + (n * C + c) * HW;
      for (idx i = 0; i < HW; ++i) o[i] = p[i] * rp[i];
    }
  }
  return make_node<T>(std::move(out), {x, r}, [x, r, N, C, HW](Node<T>& nd) mutable {
    if (x.needs_grad()) {
      Tensor<T>& g = x.grad();
      for (idx n = 0; n < N; ++n) {
        const T* rp = r.val().data() + n * HW;
        for (idx c = 0; c < C; ++c) {
          T* gp = g.data() + (n * C + c) * HW;
          const T* np = nd.grad.data() + (n * C + c) * HW;
          for (idx i = 0; i < HW; ++i) gp[i] += np[i] * rp[i];
        }
      }
    }
    if (r.needs_grad()) {
      Tensor<T>& g = r.grad();
      for (idx n = 0; n < N; ++n) {
        T* gp = g.data() + n * HW;
        for (idx c = 0; c < C; ++c) {
          const T* xp = x.val().data() + (n * C + c) * HW;
          const T* np = nd.grad.data() + (n * C + c) * HW;
          for (idx i = 0; i < HW; ++i) gp[i] += np[i] * xp[i];
        }
      }
    }
  });
}

// x: [N, ...] scaled per sample by s: [N].
template <typename T>
Var<T> scale_per_sample(Var<T> x, Var<T> s) {
  const idx N = x.shape()[0];
  CR_CHECK(s.numel() == N, "scale_per_sample: size mismatch");
  const idx sz = x.numel() / N;
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (idx n = 0; n < N; ++n) {
    const T sv = s.val()[n];
    const T* p = x.val().data() + n * sz;
    T* o = out.data() + n * sz;
    for (idx i = 0; i < sz; ++i) o[i] = p[i] * sv;
  }
  return make_node<T>(std::move(out), {x, s}, [x, s, N, sz](Node<T>& nd) mutable {
    if (x.needs_grad()) {
      Tensor<T>& g = x.grad();
      for (idx n = 0; n < N; ++n) {
        const T sv = s.val()[n];
        T* gp = g.data() + n * sz;
        const T* np = nd.grad.data() + n * sz;
        for (idx i = 0; i < sz; ++i) gp[i] += np[i] * sv;
      }
    }
    if (s.needs_grad()) {
      Tensor<T>& g = s.grad();
      for (idx n = 0; n < N; ++n) {
        T acc = 0;
        const T* xp = x.val().data() + n * sz;
        const T* np = nd.grad.data() + n * sz;
        for (idx i = 0; i < sz; ++i) acc += np[i] * xp[i];
        g[n] += acc;
      }
    }
  });
}

// Group-masked routing: out = pi ⊙ m / sum(pi ⊙ m) rowwise; an all-zero masked
// row stays exactly zero (Renorm(0) = 0).
template <typename T>
Var<T> mask_renorm(Var<T> pi, Tensor<T> mask) {
  const auto& s = pi.shape();
  CR_CHECK(s.size() == 2 && mask.shape() == s, "mask_renorm shape");
  const idx N = s[0], E = s[1];
  Tensor<T> out = Tensor<T>::uninit(s);
  for (idx n = 0; n < N; ++n) {
    T sum = 0;
    for (idx e = 0; e < E; ++e) sum += pi.val()[n * E + e] * mask[n * E + e];
    for (idx e = 0; e < E; ++e)
      out[n * E + e] = sum > T(0) ? pi.val()[n * E + e] * mask[n * E + e] / sum : T(0);
  }
  return make_node<T>(std::move(out), {pi}, [pi, mask, N, E](Node<T>& nd) mutable {
    if (!pi.needs_grad()) return;
    Tensor<T>& g = pi.grad();
    for (idx n = 0; n < N; ++n) {
      T sum = 0;
      for (idx e = 0; e < E; ++e) sum += pi.val()[n * E + e] * mask[n * E + e];
      if (!(sum > T(0))) continue;
      T dot = 0;  // sum_k g_out[k] * out[k]
      for (idx e = 0; e < E; ++e) dot += nd.grad[n * E + e] * nd.value[n * E + e];
      for (idx e = 0; e < E; ++e)
        g[n * E + e] += mask[n * E + e] / sum * (nd.grad[n * E + e] - dot);
    }
  });
}

template <typename T>
Var<T> clamp01_eval(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (idx i = 0; i < out.numel(); ++i) out[i] = std::min(T(1), std::max(T(0), x.val()[i]));
  return constant(std::move(out));
}

}  // namespace cdrest
