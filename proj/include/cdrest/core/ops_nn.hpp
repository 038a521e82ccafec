#pragma once

#include <Eigen/Core>

#include "cdrest/core/ops_basic.hpp"

namespace cdrest {

namespace detail {
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;
}  // namespace detail

// a: [M,K] x b: [K,N] -> [M,N]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  CR_CHECK(a.val().ndim() == 2 && b.val().ndim() == 2 && a.shape()[1] == b.shape()[0],
           "matmul shape ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  const idx M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  Tensor<T> out = Tensor<T>::uninit({M, N});
  detail::MapM<T>(out.data(), M, N).noalias() =
      detail::MapC<T>(a.val().data(), M, K) * detail::MapC<T>(b.val().data(), K, N);
  return make_node<T>(std::move(out), {a, b}, [a, b, M, K, N](Node<T>& n) mutable {
    detail::MapC<T> g(n.grad.data(), M, N);
    if (a.needs_grad())
      detail::MapM<T>(a.grad().data(), M, K).noalias() +=
          g * detail::MapC<T>(b.val().data(), K, N).transpose();
    if (b.needs_grad())
      detail::MapM<T>(b.grad().data(), K, N).noalias() +=
          detail::MapC<T>(a.val().data(), M, K).transpose() * g;
  });
}

// Batched matmul: a: [B,M,K], b: [B,K,N] (or [B,N,K] with trans_b).
template <typename T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_b = false, T scale = T(1)) {
  CR_CHECK(a.val().ndim() == 3 && b.val().ndim() == 3 && a.shape()[0] == b.shape()[0], "bmm rank");
  const idx B = a.shape()[0], M = a.shape()[1], K = a.shape()[2];
  const idx N = trans_b ? b.shape()[1] : b.shape()[2];
  CR_CHECK((trans_b ? b.shape()[2] : b.shape()[1]) == K, "bmm inner dim");
  Tensor<T> out = Tensor<T>::uninit({B, M, N});
  for (idx i = 0; i < B; ++i) {
    detail::MapC<T> A(a.val().data() + i * M * K, M, K);
    detail::MapM<T> O(out.data() + i * M * N, M, N);
    if (trans_b)
      O.noalias() = scale * (A * detail::MapC<T>(b.val().data() + i * N * K, N, K).transpose());
    else
      O.noalias() = scale * (A * detail::MapC<T>(b.val().data() + i * K * N, K, N));
  }
  return make_node<T>(std::move(out), {a, b},
                      [a, b, B, M, K, N, trans_b, scale](Node<T>& n) mutable {
    for (idx i = 0; i < B; ++i) {
      detail::MapC<T> g(n.grad.data() + i * M * N, M, N);
      detail::MapC<T> A(a.val().data() + i * M * K, M, K);
      if (trans_b) {
        detail::MapC<T> Bm(b.val().data() + i * N * K, N, K);
        if (a.needs_grad())
          detail::MapM<T>(a.grad().data() + i * M * K, M, K).noalias() += scale * (g * Bm);
        if (b.needs_grad())
          detail::MapM<T>(b.grad().data() + i * N * K, N, K).noalias() +=
              scale * (g.transpose() * A);
      } else {
        detail::MapC<T> Bm(b.val().data() + i * K * N, K, N);
        if (a.needs_grad())
          detail::MapM<T>(a.grad().data() + i * M * K, M, K).noalias() +=
              scale * (g * Bm.transpose());
        if (b.needs_grad())
          detail::MapM<T>(b.grad().data() + i * K * N, K, N).noalias() +=
              scale * (A.transpose() * g);
      }
    }
  });
}

// x: [..., in] -> [..., out]; w: [out, in]; optional bias [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b = {}) {
  const idx in = w.shape()[1], out_f = w.shape()[0];
  CR_CHECK(x.shape().back() == in, "linear: feature dim ", x.shape().back(), " != ", in);
  const idx R = x.numel() / in;
  std::vector<idx> oshape = x.shape();
  oshape.back() = out_f;
  Tensor<T> out = Tensor<T>::uninit(oshape);
  detail::MapM<T> O(out.data(), R, out_f);
  O.noalias() = detail::MapC<T>(x.val().data(), R, in) *
                detail::MapC<T>(w.val().data(), out_f, in).transpose();
  if (b.defined()) O.rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(b.val().data(), out_f);
  return make_node<T>(std::move(out), {x, w, b}, [x, w, b, R, in, out_f](Node<T>& n) mutable {
    detail::MapC<T> g(n.grad.data(), R, out_f);
    if (x.needs_grad())
      detail::MapM<T>(x.grad().data(), R, in).noalias() +=
          g * detail::MapC<T>(w.val().data(), out_f, in);
    if (w.needs_grad())
      detail::MapM<T>(w.grad().data(), out_f, in).noalias() +=
          g.transpose() * detail::MapC<T>(x.val().data(), R, in);
    if (b.defined() && b.needs_grad())
      Eigen::Map<Eigen::RowVectorX<T>>(b.grad().data(), out_f) += g.colwise().sum();
  });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  const idx F = x.shape().back();
  const idx R = x.numel() / F;
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (idx r = 0; r < R; ++r) {
    const T* p = x.val().data() + r * F;
    T* o = out.data() + r * F;
    T mx = p[0];
    for (idx i = 1; i < F; ++i) mx = std::max(mx, p[i]);
    for (idx i = 0; i < F; ++i) o[i] = p[i] - mx;
    FastMath<T>::exp_array(o, o, F);
    // fixed-order unrolled reduction (deterministic, vectorizable)
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    idx i = 0;
    for (; i + 4 <= F; i += 4) {
      s0 += o[i];
      s1 += o[i + 1];
      s2 += o[i + 2];
      s3 += o[i + 3];
    }
    T sum = (s0 + s1) + (s2 + s3);
    for (; i < F; ++i) sum += o[i];
    const T inv = T(1) / sum;
    for (idx j = 0; j < F; ++j) o[j] *= inv;
  }
  return make_node<T>(std::move(out), {x}, [x, R, F](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx r = 0; r < R; ++r) {
      const T* y = n.value.data() + r * F;
      const T* gy = n.grad.data() + r * F;
      T dot = 0;
      for (idx i = 0; i < F; ++i) dot += gy[i] * y[i];
      T* gp = g.data() + r * F;
      for (idx i = 0; i < F; ++i) gp[i] += y[i] * (gy[i] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_lastdim(Var<T> x) {
  const idx F = x.shape().back();
  const idx R = x.numel() / F;
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  std::vector<T> scratch(static_cast<std::size_t>(F));
  for (idx r = 0; r < R; ++r) {
    const T* p = x.val().data() + r * F;
    T* o = out.data() + r * F;
    T mx = p[0];
    for (idx i = 1; i < F; ++i) mx = std::max(mx, p[i]);
    for (idx i = 0; i < F; ++i) scratch[std::size_t(i)] = p[i] - mx;
    FastMath<T>::exp_array(scratch.data(), scratch.data(), F);
    T sum = 0;
    for (idx i = 0; i < F; ++i) sum += scratch[std::size_t(i)];
    const T lse = mx + std::log(sum);
    for (idx i = 0; i < F; ++i) o[i] = p[i] - lse;
  }
  return make_node<T>(std::move(out), {x}, [x, R, F](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    std::vector<T> scratch(static_cast<std::size_t>(F));
    for (idx r = 0; r < R; ++r) {
      const T* y = n.value.data() + r * F;
      const T* gy = n.grad.data() + r * F;
      T gsum = 0;
      for (idx i = 0; i < F; ++i) gsum += gy[i];
      FastMath<T>::exp_array(scratch.data(), y, F);
      T* gp = g.data() + r * F;
      for (idx i = 0; i < F; ++i) gp[i] += gy[i] - scratch[std::size_t(i)] * gsum;
    }
  });
}

// Normalization over the last dim; gamma/beta: [F].
template <typename T>
Var<T> layernorm_lastdim(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const idx F = x.shape().back();
  CR_CHECK(gamma.numel() == F && beta.numel() == F, "layernorm: affine size");
  const idx R = x.numel() / F;
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  Tensor<T> inv_std = Tensor<T>::uninit({R});
  for (idx r = 0; r < R; ++r) {
    const T* p = x.val().data() + r * F;
    T mean = 0;
    for (idx i = 0; i < F; ++i) mean += p[i];
    mean /= T(F);
    T var = 0;
    for (idx i = 0; i < F; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= T(F);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    T* o = out.data() + r * F;
    for (idx i = 0; i < F; ++i)
      o[i] = (p[i] - mean) * is * gamma.val()[i] + beta.val()[i];
  }
  return make_node<T>(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, R, F, inv_std](Node<T>& n) mutable {
    for (idx r = 0; r < R; ++r) {
      const T* p = x.val().data() + r * F;
      const T* gy = n.grad.data() + r * F;
      const T is = inv_std[r];
      T mean = 0;
      for (idx i = 0; i < F; ++i) mean += p[i];
      mean /= T(F);
      // xhat, then the two row sums the gradient needs
      T s1 = 0, s2 = 0;
      for (idx i = 0; i < F; ++i) {
        const T xh = (p[i] - mean) * is;
        const T gg = gy[i] * gamma.val()[i];
        s1 += gg;
        s2 += gg * xh;
      }
      s1 /= T(F);
      s2 /= T(F);
      if (x.needs_grad()) {
        T* gx = x.grad().data() + r * F;
        for (idx i = 0; i < F; ++i) {
          const T xh = (p[i] - mean) * is;
          gx[i] += is * (gy[i] * gamma.val()[i] - s1 - xh * s2);
        }
      }
      if (gamma.needs_grad() || beta.needs_grad()) {
        for (idx i = 0; i < F; ++i) {
          const T xh = (p[i] - mean) * is;
          if (gamma.needs_grad()) gamma.grad()[i] += gy[i] * xh;
          if (beta.needs_grad()) beta.grad()[i] += gy[i];
        }
      }
    }
  });
}

// Channel layernorm on NCHW via permute to NHWC and back.
template <typename T>
Var<T> layernorm_chw(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto s = x.shape();
  CR_CHECK(s.size() == 4, "layernorm_chw expects NCHW");
  Var<T> t = permute(x, {0, 2, 3, 1});
  t = layernorm_lastdim(t, gamma, beta, eps);
  return permute(t, {0, 3, 1, 2});
}

// Row-wise L2 normalization of a [R,C] matrix.
template <typename T>
Var<T> l2norm_rows(Var<T> x) {
  CR_CHECK(x.val().ndim() == 2, "l2norm_rows expects 2-d");
  const idx R = x.shape()[0], C = x.shape()[1];
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  Tensor<T> norms = Tensor<T>::uninit({R});
  for (idx r = 0; r < R; ++r) {
    const T* p = x.val().data() + r * C;
    T sq = 0;
    for (idx i = 0; i < C; ++i) sq += p[i] * p[i];
    const T nv = std::sqrt(sq);
    CR_CHECK(nv > T(0), "l2norm_rows: zero-norm row ", r);
    norms[r] = nv;
    T* o = out.data() + r * C;
    for (idx i = 0; i < C; ++i) o[i] = p[i] / nv;
  }
  return make_node<T>(std::move(out), {x}, [x, R, C, norms](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx r = 0; r < R; ++r) {
      const T* y = n.value.data() + r * C;
      const T* gy = n.grad.data() + r * C;
      T dot = 0;
      for (idx i = 0; i < C; ++i) dot += gy[i] * y[i];
      const T inv = T(1) / norms[r];
      T* gp = g.data() + r * C;
      for (idx i = 0; i < C; ++i) gp[i] += inv * (gy[i] - y[i] * dot);
    }
  });
}

// Mean element-wise binary cross-entropy from logits (stable log-sum-exp form).
template <typename T>
Var<T> bce_logits_mean(Var<T> z, Tensor<T> targets) {
  CR_CHECK(targets.numel() == z.numel(), "bce: target size");
  T acc = 0;
  for (idx i = 0; i < z.numel(); ++i) {
    const T zv = z.val()[i], t = targets[i];
    acc += std::max(zv, T(0)) - zv * t + std::log1p(FastMath<T>::exp(-std::abs(zv)));
  }
  const T inv = T(1) / T(z.numel());
  return make_node<T>(Tensor<T>::scalar(acc * inv), {z}, [z, targets, inv](Node<T>& n) mutable {
    if (!z.needs_grad()) return;
    Tensor<T>& g = z.grad();
    const T gv = n.grad[0] * inv;
    for (idx i = 0; i < g.numel(); ++i) {
      const T s = FastMath<T>::sigmoid(z.val()[i]);
      g[i] += gv * (s - targets[i]);
    }
  });
}

// ---- spatial ops ----

enum class PadMode { Zero, Reflect };  // Reflect = edge-inclusive mirror

namespace detail {
inline idx mirror_index(idx i, idx n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}
}  // namespace detail

template <typename T>
Var<T> pad2d(Var<T> x, idx top, idx bottom, idx left, idx right, PadMode mode = PadMode::Reflect) {
  const auto s = x.shape();
  CR_CHECK(s.size() == 4, "pad2d expects NCHW");
  const idx N = s[0], C = s[1], H = s[2], W = s[3];
  const idx Ho = H + top + bottom, Wo = W + left + right;
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  for (idx nc = 0; nc < N * C; ++nc) {
    const T* p = x.val().data() + nc * H * W;
    T* o = out.data() + nc * Ho * Wo;
    for (idx i = 0; i < Ho; ++i)
      for (idx j = 0; j < Wo; ++j) {
        const idx si = i - top, sj = j - left;
        if (mode == PadMode::Zero) {
          o[i * Wo + j] = (si >= 0 && si < H && sj >= 0 && sj < W) ? p[si * W + sj] : T(0);
        } else {
          o[i * Wo + j] = p[detail::mirror_index(si, H) * W + detail::mirror_index(sj, W)];
        }
      }
  }
  return make_node<T>(std::move(out), {x},
                      [x, top, left, N, C, H, W, Ho, Wo, mode](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx nc = 0; nc < N * C; ++nc) {
      T* gp = g.data() + nc * H * W;
      const T* np = n.grad.data() + nc * Ho * Wo;
      for (idx i = 0; i < Ho; ++i)
        for (idx j = 0; j < Wo; ++j) {
          const idx si = i - top, sj = j - left;
          if (mode == PadMode::Zero) {
            if (si >= 0 && si < H && sj >= 0 && sj < W) gp[si * W + sj] += np[i * Wo + j];
          } else {
            gp[detail::mirror_index(si, H) * W + detail::mirror_index(sj, W)] += np[i * Wo + j];
          }
        }
    }
  });
}

template <typename T>
Var<T> crop2d(Var<T> x, idx top, idx left, idx Ho, idx Wo) {
  const auto s = x.shape();
  CR_CHECK(s.size() == 4 && top + Ho <= s[2] && left + Wo <= s[3], "crop2d bounds");
  const idx N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  for (idx nc = 0; nc < N * C; ++nc)
    for (idx i = 0; i < Ho; ++i)
      std::memcpy(out.data() + (nc * Ho + i) * Wo,
                  x.val().data() + (nc * H + top + i) * W + left, std::size_t(Wo) * sizeof(T));
  return make_node<T>(std::move(out), {x}, [x, top, left, N, C, H, W, Ho, Wo](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx nc = 0; nc < N * C; ++nc)
      for (idx i = 0; i < Ho; ++i) {
        T* gp = g.data() + (nc * H + top + i) * W + left;
        const T* np = n.grad.data() + (nc * Ho + i) * Wo;
        for (idx j = 0; j < Wo; ++j) gp[j] += np[j];
      }
  });
}

// Grouped 2-d convolution, zero padding. x: [N,Cin,H,W], w: [Cout,Cin/g,kh,kw].
// im2col + GEMM for the general case; direct loops for depthwise.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, idx stride = 1, idx pad = 0, idx groups = 1) {
  const auto xs = x.shape(), ws = w.shape();
  CR_CHECK(xs.size() == 4 && ws.size() == 4, "conv2d rank");
  const idx N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const idx Cout = ws[0], Cg = ws[1], kh = ws[2], kw = ws[3];
  CR_CHECK(Cin == Cg * groups && Cout % groups == 0, "conv2d channel/groups mismatch");
  const idx Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  CR_CHECK(Ho >= 1 && Wo >= 1, "conv2d: empty output");

  // pointwise conv: per-sample GEMM, no im2col
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1) {
    Tensor<T> out = Tensor<T>::uninit({N, Cout, H, W});
    const idx HW = H * W;
    for (idx n = 0; n < N; ++n) {
      detail::MapM<T> O(out.data() + n * Cout * HW, Cout, HW);
      O.noalias() = detail::MapC<T>(w.val().data(), Cout, Cin) *
                    detail::MapC<T>(x.val().data() + n * Cin * HW, Cin, HW);
      if (b.defined())
        O.colwise() += Eigen::Map<const Eigen::VectorX<T>>(b.val().data(), Cout);
    }
    return make_node<T>(std::move(out), {x, w, b}, [x, w, b, N, Cin, Cout, HW](Node<T>& nd) mutable {
      for (idx n = 0; n < N; ++n) {
        detail::MapC<T> g(nd.grad.data() + n * Cout * HW, Cout, HW);
        if (x.needs_grad())
          detail::MapM<T>(x.grad().data() + n * Cin * HW, Cin, HW).noalias() +=
              detail::MapC<T>(w.val().data(), Cout, Cin).transpose() * g;
        if (w.needs_grad())
          detail::MapM<T>(w.grad().data(), Cout, Cin).noalias() +=
              g * detail::MapC<T>(x.val().data() + n * Cin * HW, Cin, HW).transpose();
        if (b.defined() && b.needs_grad())
          Eigen::Map<Eigen::VectorX<T>>(b.grad().data(), Cout) += g.rowwise().sum();
      }
    });
  }

  Tensor<T> out = Tensor<T>::uninit({N, Cout, Ho, Wo});
  const bool depthwise = (groups == Cin && Cg == 1 && Cout == Cin);
  if (depthwise) {
    const bool dw3 = (kh == 3 && kw == 3 && stride == 1 && pad == 1);
    for (idx n = 0; n < N; ++n)
      for (idx c = 0; c < Cin; ++c) {
        const T* xp = x.val().data() + (n * Cin + c) * H * W;
        const T* wp = w.val().data() + c * kh * kw;
        const T bv = b.defined() ? b.val()[c] : T(0);
        T* op = out.data() + (n * Cout + c) * Ho * Wo;
        if (dw3 && H >= 2 && W >= 3) {
          // raster over rows, bounds checks only at the borders
          for (idx ho = 0; ho < H; ++ho) {
            const T* r0 = (ho > 0) ? xp + (ho - 1) * W : nullptr;
            const T* r1 = xp + ho * W;
            const T* r2 = (ho < H - 1) ? xp + (ho + 1) * W : nullptr;
            T* orow = op + ho * W;
            auto edge = [&](idx wo) {
              T acc = bv;
              for (int i = 0; i < 3; ++i) {
                const T* rr = (i == 0) ? r0 : (i == 1 ? r1 : r2);
                if (!rr) continue;
                for (int j = 0; j < 3; ++j) {
                  const idx wi = wo - 1 + j;
                  if (wi < 0 || wi >= W) continue;
                  acc += wp[i * 3 + j] * rr[wi];
                }
              }
              orow[wo] = acc;
            };
            edge(0);
            if (r0 && r2) {
              const T w00 = wp[0], w01 = wp[1], w02 = wp[2];
              const T w10 = wp[3], w11 = wp[4], w12 = wp[5];
              const T w20 = wp[6], w21 = wp[7], w22 = wp[8];
              for (idx wo = 1; wo < W - 1; ++wo) {
                orow[wo] = bv + w00 * r0[wo - 1] + w01 * r0[wo] + w02 * r0[wo + 1] +
                           w10 * r1[wo - 1] + w11 * r1[wo] + w12 * r1[wo + 1] +
                           w20 * r2[wo - 1] + w21 * r2[wo] + w22 * r2[wo + 1];
              }
            } else {
              for (idx wo = 1; wo < W - 1; ++wo) {
                T acc = bv;
                if (r0) acc += wp[0] * r0[wo - 1] + wp[1] * r0[wo] + wp[2] * r0[wo + 1];
                acc += wp[3] * r1[wo - 1] + wp[4] * r1[wo] + wp[5] * r1[wo + 1];
                if (r2) acc += wp[6] * r2[wo - 1] + wp[7] * r2[wo] + wp[8] * r2[wo + 1];
                orow[wo] = acc;
              }
            }
            if (W > 1) edge(W - 1);
          }
          continue;
        }
        for (idx ho = 0; ho < Ho; ++ho)
          for (idx wo = 0; wo < Wo; ++wo) {
            T acc = bv;
            for (idx i = 0; i < kh; ++i) {
              const idx hi = ho * stride - pad + i;
              if (hi < 0 || hi >= H) continue;
              for (idx j = 0; j < kw; ++j) {
                const idx wi = wo * stride - pad + j;
                if (wi < 0 || wi >= W) continue;
                acc += wp[i * kw + j] * xp[hi * W + wi];
              }
            }
            op[ho * Wo + wo] = acc;
          }
      }
  }
  Tensor<T> cached_cols;  // kept alive for backward
  if (!depthwise) {
    const idx colw = Cg * kh * kw;
    Tensor<T> cols = Tensor<T>::uninit({groups, colw, N * Ho * Wo});
    for (idx g = 0; g < groups; ++g) {
      T* cp = cols.data() + g * colw * N * Ho * Wo;
      for (idx c = 0; c < Cg; ++c)
        for (idx i = 0; i < kh; ++i)
          for (idx j = 0; j < kw; ++j) {
            T* row = cp + ((c * kh + i) * kw + j) * N * Ho * Wo;
            for (idx n = 0; n < N; ++n) {
              const T* xp = x.val().data() + (n * Cin + g * Cg + c) * H * W;
              for (idx ho = 0; ho < Ho; ++ho) {
                const idx hi = ho * stride - pad + i;
                T* rr = row + (n * Ho + ho) * Wo;
                if (hi < 0 || hi >= H) {
                  for (idx wo = 0; wo < Wo; ++wo) rr[wo] = T(0);
                  continue;
                }
                for (idx wo = 0; wo < Wo; ++wo) {
                  const idx wi = wo * stride - pad + j;
                  rr[wo] = (wi >= 0 && wi < W) ? xp[hi * W + wi] : T(0);
                }
              }
            }
          }
      const idx Cog = Cout / groups;
      // out rows for group g: interleaved over batch; compute into scratch then scatter
      Tensor<T> og = Tensor<T>::uninit({Cog, N * Ho * Wo});
      detail::MapM<T>(og.data(), Cog, N * Ho * Wo).noalias() =
          detail::MapC<T>(w.val().data() + g * Cog * colw, Cog, colw) *
          detail::MapC<T>(cp, colw, N * Ho * Wo);
      for (idx co = 0; co < Cog; ++co) {
        const T bv = b.defined() ? b.val()[g * Cog + co] : T(0);
        for (idx n = 0; n < N; ++n) {
          T* op = out.data() + (n * Cout + g * Cog + co) * Ho * Wo;
          const T* sp = og.data() + co * N * Ho * Wo + n * Ho * Wo;
          for (idx i = 0; i < Ho * Wo; ++i) op[i] = sp[i] + bv;
        }
      }
    }
    if (grad_mode() && (x.needs_grad() || w.needs_grad())) cached_cols = std::move(cols);
  }

  return make_node<T>(
      std::move(out), {x, w, b},
      [x, w, b, N, Cin, H, W, Cout, Cg, kh, kw, Ho, Wo, stride, pad, groups, depthwise,
       cached_cols](Node<T>& nd) mutable {
        if (b.defined() && b.needs_grad()) {
          Tensor<T>& gb = b.grad();
          for (idx n = 0; n < N; ++n)
            for (idx c = 0; c < Cout; ++c) {
              const T* np = nd.grad.data() + (n * Cout + c) * Ho * Wo;
              T acc = 0;
              for (idx i = 0; i < Ho * Wo; ++i) acc += np[i];
              gb[c] += acc;
            }
        }
        if (depthwise) {
          for (idx n = 0; n < N; ++n)
            for (idx c = 0; c < Cin; ++c) {
              const T* xp = x.val().data() + (n * Cin + c) * H * W;
              const T* wp = w.val().data() + c * kh * kw;
              const T* np = nd.grad.data() + (n * Cout + c) * Ho * Wo;
              T* gx = x.needs_grad() ? x.grad().data() + (n * Cin + c) * H * W : nullptr;
              T* gw = w.needs_grad() ? w.grad().data() + c * kh * kw : nullptr;
              for (idx ho = 0; ho < Ho; ++ho)
                for (idx wo = 0; wo < Wo; ++wo) {
                  const T gv = np[ho * Wo + wo];
                  if (gv == T(0)) continue;
                  for (idx i = 0; i < kh; ++i) {
                    const idx hi = ho * stride - pad + i;
                    if (hi < 0 || hi >= H) continue;
                    for (idx j = 0; j < kw; ++j) {
                      const idx wi = wo * stride - pad + j;
                      if (wi < 0 || wi >= W) continue;
                      if (gx) gx[hi * W + wi] += gv * wp[i * kw + j];
                      if (gw) gw[i * kw + j] += gv * xp[hi * W + wi];
                    }
                  }
                }
            }
          return;
        }
        const idx colw = Cg * kh * kw;
        const idx Cog = Cout / groups;
        for (idx g = 0; g < groups; ++g) {
          const T* cols_g = cached_cols.data() + g * colw * N * Ho * Wo;
          // gather grad rows for this group: [Cog, N*Ho*Wo]
          Tensor<T> gr = Tensor<T>::uninit({Cog, N * Ho * Wo});
          for (idx co = 0; co < Cog; ++co)
            for (idx n = 0; n < N; ++n)
              std::memcpy(gr.data() + co * N * Ho * Wo + n * Ho * Wo,
                          nd.grad.data() + (n * Cout + g * Cog + co) * Ho * Wo,
                          std::size_t(Ho * Wo) * sizeof(T));
          if (w.needs_grad())
            detail::MapM<T>(w.grad().data() + g * Cog * colw, Cog, colw).noalias() +=
                detail::MapC<T>(gr.data(), Cog, N * Ho * Wo) *
                detail::MapC<T>(cols_g, colw, N * Ho * Wo).transpose();
          if (x.needs_grad()) {
            Tensor<T> gcols = Tensor<T>::uninit({colw, N * Ho * Wo});
            detail::MapM<T>(gcols.data(), colw, N * Ho * Wo).noalias() =
                detail::MapC<T>(w.val().data() + g * Cog * colw, Cog, colw).transpose() *
                detail::MapC<T>(gr.data(), Cog, N * Ho * Wo);
            Tensor<T>& gx = x.grad();
            for (idx c = 0; c < Cg; ++c)
              for (idx i = 0; i < kh; ++i)
                for (idx j = 0; j < kw; ++j) {
                  const T* row = gcols.data() + ((c * kh + i) * kw + j) * N * Ho * Wo;
                  for (idx n = 0; n < N; ++n) {
                    T* gp = gx.data() + (n * Cin + g * Cg + c) * H * W;
                    for (idx ho = 0; ho < Ho; ++ho) {
                      const idx hi = ho * stride - pad + i;
                      if (hi < 0 || hi >= H) continue;
                      const T* rr = row + (n * Ho + ho) * Wo;
                      for (idx wo = 0; wo < Wo; ++wo) {
                        const idx wi = wo * stride - pad + j;
                        if (wi >= 0 && wi < W) gp[hi * W + wi] += rr[wo];
                      }
                    }
                  }
                }
          }
        }
      });
}

// Transposed conv, kernel 2 stride 2 (non-overlapping). w: [Cin,Cout,2,2].
template <typename T>
Var<T> conv_transpose2d_k2s2(Var<T> x, Var<T> w, Var<T> b = {}) {
  const auto xs = x.shape(), ws = w.shape();
  CR_CHECK(xs.size() == 4 && ws.size() == 4 && ws[2] == 2 && ws[3] == 2, "convT rank");
  const idx N = xs[0], Cin = xs[1], H = xs[2], W = xs[3], Cout = ws[1];
  CR_CHECK(ws[0] == Cin, "convT channels");
  Tensor<T> out = Tensor<T>::uninit({N, Cout, 2 * H, 2 * W});
  for (idx n = 0; n < N; ++n)
    for (idx co = 0; co < Cout; ++co) {
      T* op = out.data() + (n * Cout + co) * 4 * H * W;
      const T bv = b.defined() ? b.val()[co] : T(0);
      for (idx i = 0; i < 4 * H * W; ++i) op[i] = bv;
      for (idx ci = 0; ci < Cin; ++ci) {
        const T* xp = x.val().data() + (n * Cin + ci) * H * W;
        const T* wp = w.val().data() + (ci * Cout + co) * 4;
        for (idx i = 0; i < H; ++i)
          for (idx j = 0; j < W; ++j) {
            const T xv = xp[i * W + j];
            T* o = op + (2 * i) * 2 * W + 2 * j;
            o[0] += xv * wp[0];
            o[1] += xv * wp[1];
            o[2 * W] += xv * wp[2];
            o[2 * W + 1] += xv * wp[3];
          }
      }
    }
  return make_node<T>(std::move(out), {x, w, b}, [x, w, b, N, Cin, Cout, H, W](Node<T>& nd) mutable {
    for (idx n = 0; n < N; ++n)
      for (idx co = 0; co < Cout; ++co) {
        const T* np = nd.grad.data() + (n * Cout + co) * 4 * H * W;
        if (b.defined() && b.needs_grad()) {
          T acc = 0;
          for (idx i = 0; i < 4 * H * W; ++i) acc += np[i];
          b.grad()[co] += acc;
        }
        for (idx ci = 0; ci < Cin; ++ci) {
          const T* xp = x.val().data() + (n * Cin + ci) * H * W;
          const T* wp = w.val().data() + (ci * Cout + co) * 4;
          T* gx = x.needs_grad() ? x.grad().data() + (n * Cin + ci) * H * W : nullptr;
          T* gw = w.needs_grad() ? w.grad().data() + (ci * Cout + co) * 4 : nullptr;
          for (idx i = 0; i < H; ++i)
            for (idx j = 0; j < W; ++j) {
              const T* o = np + (2 * i) * 2 * W + 2 * j;
              if (gx)
                gx[i * W + j] += o[0] * wp[0] + o[1] * wp[1] + o[2 * W] * wp[2] + o[2 * W + 1] * wp[3];
              if (gw) {
                const T xv = xp[i * W + j];
                gw[0] += o[0] * xv;
                gw[1] += o[1] * xv;
                gw[2] += o[2 * W] * xv;
                gw[3] += o[2 * W + 1] * xv;
              }
            }
        }
      }
  });
}

// Bilinear resize with half-pixel centers (and its exact adjoint backward).
template <typename T>
Var<T> bilinear_resize(Var<T> x, idx Ho, idx Wo) {
  const auto s = x.shape();
  CR_CHECK(s.size() == 4, "bilinear_resize expects NCHW");
  const idx N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out = Tensor<T>::uninit({N, C, Ho, Wo});
  const double sy = double(H) / double(Ho), sx = double(W) / double(Wo);
  std::vector<idx> y0(static_cast<std::size_t>(Ho)), y1(static_cast<std::size_t>(Ho)), x0(static_cast<std::size_t>(Wo)), x1(static_cast<std::size_t>(Wo));
  std::vector<T> wy(static_cast<std::size_t>(Ho)), wx(static_cast<std::size_t>(Wo));
  for (idx i = 0; i < Ho; ++i) {
    double src = (double(i) + 0.5) * sy - 0.5;
    src = std::max(0.0, std::min(double(H - 1), src));
    y0[std::size_t(i)] = idx(std::floor(src));
    y1[std::size_t(i)] = std::min(H - 1, y0[std::size_t(i)] + 1);
    wy[std::size_t(i)] = T(src - double(y0[std::size_t(i)]));
  }
  for (idx j = 0; j < Wo; ++j) {
    double src = (double(j) + 0.5) * sx - 0.5;
    src = std::max(0.0, std::min(double(W - 1), src));
    x0[std::size_t(j)] = idx(std::floor(src));
    x1[std::size_t(j)] = std::min(W - 1, x0[std::size_t(j)] + 1);
    wx[std::size_t(j)] = T(src - double(x0[std::size_t(j)]));
  }
  for (idx nc = 0; nc < N * C; ++nc) {
    const T* p = x.val().data() + nc * H * W;
    T* o = out.data() + nc * Ho * Wo;
    for (idx i = 0; i < Ho; ++i)
      for (idx j = 0; j < Wo; ++j) {
        const T a = p[y0[std::size_t(i)] * W + x0[std::size_t(j)]];
        const T bv = p[y0[std::size_t(i)] * W + x1[std::size_t(j)]];
        const T c = p[y1[std::size_t(i)] * W + x0[std::size_t(j)]];
        const T d = p[y1[std::size_t(i)] * W + x1[std::size_t(j)]];
        const T fy = wy[std::size_t(i)], fx = wx[std::size_t(j)];
        o[i * Wo + j] = (T(1) - fy) * ((T(1) - fx) * a + fx * bv) + fy * ((T(1) - fx) * c + fx * d);
      }
  }
  return make_node<T>(std::move(out), {x},
                      [x, N, C, H, W, Ho, Wo, y0, y1, x0, x1, wy, wx](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx nc = 0; nc < N * C; ++nc) {
      T* gp = g.data() + nc * H * W;
      const T* np = n.grad.data() + nc * Ho * Wo;
      for (idx i = 0; i < Ho; ++i)
        for (idx j = 0; j < Wo; ++j) {
          const T gv = np[i * Wo + j];
          const T fy = wy[std::size_t(i)], fx = wx[std::size_t(j)];
          gp[y0[std::size_t(i)] * W + x0[std::size_t(j)]] += gv * (T(1) - fy) * (T(1) - fx);
          gp[y0[std::size_t(i)] * W + x1[std::size_t(j)]] += gv * (T(1) - fy) * fx;
          gp[y1[std::size_t(i)] * W + x0[std::size_t(j)]] += gv * fy * (T(1) - fx);
          gp[y1[std::size_t(i)] * W + x1[std::size_t(j)]] += gv * fy * fx;
        }
    }
  });
}

}  // namespace cdrest
