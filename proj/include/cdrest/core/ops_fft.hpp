#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>

#include "cdrest/core/ops_basic.hpp"

namespace cdrest {

// Complex tensors are real tensors with a trailing dim of size 2 (re, im
// interleaved), which matches fftw_complex layout directly.

namespace fftcore {

struct Plan2d {
  fftw_plan fwd = nullptr, bwd = nullptr;
  fftw_complex* buf_in = nullptr;
  fftw_complex* buf_out = nullptr;
  idx n = 0;
};

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache c;
    return c;
  }

  // Executes one 2-d c2c transform of an H*W slab (interleaved doubles).
  void transform(const double* in, double* out, idx H, idx W, bool forward) {
    std::lock_guard<std::mutex> lock(mu_);
    Plan2d& p = plan(H, W);
    std::memcpy(p.buf_in, in, std::size_t(p.n) * sizeof(fftw_complex));
    fftw_execute(forward ? p.fwd : p.bwd);
    std::memcpy(out, p.buf_out, std::size_t(p.n) * sizeof(fftw_complex));
  }

 private:
  Plan2d& plan(idx H, idx W) {
    auto key = std::make_pair(H, W);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    Plan2d p;
    p.n = H * W;
    p.buf_in = fftw_alloc_complex(std::size_t(p.n));
    p.buf_out = fftw_alloc_complex(std::size_t(p.n));
    p.fwd = fftw_plan_dft_2d(int(H), int(W), p.buf_in, p.buf_out, FFTW_FORWARD, FFTW_ESTIMATE);
    p.bwd = fftw_plan_dft_2d(int(H), int(W), p.buf_in, p.buf_out, FFTW_BACKWARD, FFTW_ESTIMATE);
    return plans_.emplace(key, p).first->second;
  }

  std::mutex mu_;
  std::map<std::pair<idx, idx>, Plan2d> plans_;
};

// Transforms every [H,W,2] slab of t; scale applied to the result.
template <typename T>
Tensor<T> transform_slabs(const Tensor<T>& t, bool forward, double scale) {
  const auto& s = t.shape();
  CR_CHECK(s.size() >= 3 && s.back() == 2, "fft: expected [...,H,W,2]");
  const idx W = s[s.size() - 2], H = s[s.size() - 3];
  const idx slab = H * W * 2;
  const idx nslabs = t.numel() / slab;
  Tensor<T> out = Tensor<T>::uninit(s);
  std::vector<double> din(static_cast<std::size_t>(slab)), dout(static_cast<std::size_t>(slab));
  for (idx k = 0; k < nslabs; ++k) {
    const T* src = t.data() + k * slab;
    for (idx i = 0; i < slab; ++i) din[std::size_t(i)] = double(src[i]);
    PlanCache::instance().transform(din.data(), dout.data(), H, W, forward);
    T* dst = out.data() + k * slab;
    for (idx i = 0; i < slab; ++i) dst[i] = T(dout[std::size_t(i)] * scale);
  }
  return out;
}

}  // namespace fftcore

// Unnormalized forward 2-d DFT over the trailing [H,W,2] slab. The adjoint of
// the unnormalized forward transform is the unnormalized backward transform.
template <typename T>
Var<T> fft2c(Var<T> x) {
  Tensor<T> out = fftcore::transform_slabs(x.val(), true, 1.0);
  return make_node<T>(std::move(out), {x}, [x](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T> g = fftcore::transform_slabs(n.grad, false, 1.0);
    axpy(x.grad(), g);
  });
}

// Normalized inverse: backward transform / (H*W).
template <typename T>
Var<T> ifft2c(Var<T> x) {
  const auto& s = x.shape();
  const double inv = 1.0 / double(s[s.size() - 2] * s[s.size() - 3]);
  Tensor<T> out = fftcore::transform_slabs(x.val(), false, inv);
  return make_node<T>(std::move(out), {x}, [x, inv](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T> g = fftcore::transform_slabs(n.grad, true, inv);
    axpy(x.grad(), g);
  });
}

// [...,H,W] -> [...,H,W,2] with zero imaginary part.
template <typename T>
Var<T> complexify(Var<T> x) {
  std::vector<idx> oshape = x.shape();
  oshape.push_back(2);
  Tensor<T> out = Tensor<T>::uninit(oshape);
  for (idx i = 0; i < x.numel(); ++i) {
    out[2 * i] = x.val()[i];
    out[2 * i + 1] = T(0);
  }
  return make_node<T>(std::move(out), {x}, [x](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx i = 0; i < g.numel(); ++i) g[i] += n.grad[2 * i];
  });
}

// [...,H,W,2] -> [...,H,W], dropping the imaginary part.
template <typename T>
Var<T> real_part(Var<T> x) {
  std::vector<idx> oshape = x.shape();
  CR_CHECK(oshape.back() == 2, "real_part: not complex");
  oshape.pop_back();
  Tensor<T> out = Tensor<T>::uninit(oshape);
  for (idx i = 0; i < out.numel(); ++i) out[i] = x.val()[2 * i];
  return make_node<T>(std::move(out), {x}, [x](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx i = 0; i < n.grad.numel(); ++i) g[2 * i] += n.grad[i];
  });
}

// x: [N,C,H,W,2] * m: [N,H,W] (real mask broadcast over channels).
template <typename T>
Var<T> complex_mul_real(Var<T> x, Var<T> m) {
  const auto& s = x.shape();
  CR_CHECK(s.size() == 5 && s[4] == 2, "complex_mul_real: x must be [N,C,H,W,2]");
  const idx N = s[0], C = s[1], HW = s[2] * s[3];
  CR_CHECK(m.shape() == std::vector<idx>({N, s[2], s[3]}), "complex_mul_real: mask shape");
  Tensor<T> out = Tensor<T>::uninit(s);
  for (idx n = 0; n < N; ++n) {
    const T* mp = m.val().data() + n * HW;
    for (idx c = 0; c < C; ++c) {
      const T* p = x.val().data() + (n * C + c) * HW * 2;
      T* o = out.data() + (n * C + c) * HW * 2;
      for (idx i = 0; i < HW; ++i) {
        o[2 * i] = p[2 * i] * mp[i];
        o[2 * i + 1] = p[2 * i + 1] * mp[i];
      }
    }
  }
  return make_node<T>(std::move(out), {x, m}, [x, m, N, C, HW](Node<T>& nd) mutable {
    for (idx n = 0; n < N; ++n) {
      const T* mp = m.val().data() + n * HW;
      T* gm = m.needs_grad() ? m.grad().data() + n * HW : nullptr;
      for (idx c = 0; c < C; ++c) {
        const T* p = x.val().data() + (n * C + c) * HW * 2;
        const T* np = nd.grad.data() + (n * C + c) * HW * 2;
        T* gx = x.needs_grad() ? x.grad().data() + (n * C + c) * HW * 2 : nullptr;
        for (idx i = 0; i < HW; ++i) {
          if (gx) {
            gx[2 * i] += np[2 * i] * mp[i];
            gx[2 * i + 1] += np[2 * i + 1] * mp[i];
          }
          if (gm) gm[i] += np[2 * i] * p[2 * i] + np[2 * i + 1] * p[2 * i + 1];
        }
      }
    }
  });
}

// sqrt(re^2+im^2) with subgradient 0 at the origin.
template <typename T>
Var<T> complex_magnitude(Var<T> x) {
  std::vector<idx> oshape = x.shape();
  CR_CHECK(oshape.back() == 2, "complex_magnitude: not complex");
  oshape.pop_back();
  Tensor<T> out = Tensor<T>::uninit(oshape);
  for (idx i = 0; i < out.numel(); ++i)
    out[i] = std::sqrt(x.val()[2 * i] * x.val()[2 * i] + x.val()[2 * i + 1] * x.val()[2 * i + 1]);
  return make_node<T>(std::move(out), {x}, [x](Node<T>& n) mutable {
    if (!x.needs_grad()) return;
    Tensor<T>& g = x.grad();
    for (idx i = 0; i < n.grad.numel(); ++i) {
      const T mag = n.value[i];
      if (mag <= T(0)) continue;
      g[2 * i] += n.grad[i] * x.val()[2 * i] / mag;
      g[2 * i + 1] += n.grad[i] * x.val()[2 * i + 1] / mag;
    }
  });
}

// Builds per-sample full-grid spectral masks from a half-grid logit map.
//   logits: [H, W/2+1] (pre-sigmoid), dc: [N] per-sample zero-frequency value.
// The sigmoided half mask is mirrored Hermitian-symmetrically onto the full
// grid; the self-conjugate columns (w=0 and, for even W, w=W/2) are
// symmetrized in h so the masked spectrum of a real signal stays the spectrum
// of a real signal. When with_dc is true the (0,0) entry is replaced by dc[n].
template <typename T>
Var<T> spectral_mask_assemble(Var<T> logits, Var<T> dc, idx W_full, bool with_dc) {
  const auto& ls = logits.shape();
  CR_CHECK(ls.size() == 2, "spectral_mask_assemble: logits rank");
  const idx H = ls[0], Wh = ls[1];
  CR_CHECK(Wh == W_full / 2 + 1, "spectral_mask_assemble: half-grid width ", Wh, " vs W=", W_full);
  const idx N = with_dc ? dc.numel() : 1;
  const bool even_w = (W_full % 2 == 0);

  Tensor<T> sig = Tensor<T>::uninit({H, Wh});
  for (idx i = 0; i < sig.numel(); ++i) sig[i] = FastMath<T>::sigmoid(logits.val()[i]);
  auto is_selfconj = [&](idx w) { return w == 0 || (even_w && w == Wh - 1); };
  Tensor<T> symv = Tensor<T>::uninit({H, Wh});
  for (idx h = 0; h < H; ++h)
    for (idx w = 0; w < Wh; ++w) {
      const idx hm = (H - h) % H;
      symv[h * Wh + w] =
          is_selfconj(w) ? T(0.5) * (sig[h * Wh + w] + sig[hm * Wh + w]) : sig[h * Wh + w];
    }

  Tensor<T> base = Tensor<T>::uninit({H, W_full});
  for (idx h = 0; h < H; ++h)
    for (idx w = 0; w < W_full; ++w) {
      if (w <= W_full / 2)
        base[h * W_full + w] = symv[h * Wh + w];
      else
        base[h * W_full + w] = symv[((H - h) % H) * Wh + (W_full - w)];
    }

  Tensor<T> out = Tensor<T>::uninit({N, H, W_full});
  for (idx n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * H * W_full, base.data(), std::size_t(H * W_full) * sizeof(T));
    if (with_dc) out[n * H * W_full] = dc.val()[n];
  }

  return make_node<T>(std::move(out), {logits, dc},
                      [logits, dc, H, Wh, W_full, N, with_dc, sig, even_w](Node<T>& nd) mutable {
    auto is_selfconj = [&](idx w) { return w == 0 || (even_w && w == Wh - 1); };
    // fold sample grads onto the shared base grid; route (0,0) to dc
    Tensor<T> gf({H, W_full});
    for (idx n = 0; n < N; ++n) {
      const T* np = nd.grad.data() + n * H * W_full;
      for (idx i = 0; i < H * W_full; ++i) gf[i] += np[i];
      if (with_dc && dc.needs_grad()) dc.grad()[n] += np[0];
    }
    if (with_dc) gf[0] = T(0);
    if (!logits.needs_grad()) return;
    // full grid -> symmetrized half grid
    Tensor<T> gsym({H, Wh});
    for (idx h = 0; h < H; ++h)
      for (idx w = 0; w < W_full; ++w) {
        if (w <= W_full / 2)
          gsym[h * Wh + w] += gf[h * W_full + w];
        else
          gsym[((H - h) % H) * Wh + (W_full - w)] += gf[h * W_full + w];
      }
    // symmetrized half grid -> logits through sigmoid
    Tensor<T>& gl = logits.grad();
    for (idx h = 0; h < H; ++h)
      for (idx w = 0; w < Wh; ++w) {
        const T gv = gsym[h * Wh + w];
        if (gv == T(0)) continue;
        if (is_selfconj(w)) {
          const idx hm = (H - h) % H;
          gl[h * Wh + w] += T(0.5) * gv * sig[h * Wh + w] * (T(1) - sig[h * Wh + w]);
          gl[hm * Wh + w] += T(0.5) * gv * sig[hm * Wh + w] * (T(1) - sig[hm * Wh + w]);
        } else {
          gl[h * Wh + w] += gv * sig[h * Wh + w] * (T(1) - sig[h * Wh + w]);
        }
      }
  });
}

}  // namespace cdrest
