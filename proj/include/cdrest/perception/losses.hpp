#pragma once

#include "cdrest/perception/model.hpp"

namespace cdrest {

// Label similarity matrix S_ij = cos(t_i, t_j) over 9-bit task labels.
template <typename T>
Tensor<T> label_similarity(const Tensor<T>& labels) {
  CR_CHECK(labels.ndim() == 2, "label_similarity: labels must be [K,C]");
  const idx K = labels.dim(0), C = labels.dim(1);
  std::vector<T> norms(static_cast<std::size_t>(K));
  for (idx i = 0; i < K; ++i) {
    T sq = 0;
    for (idx c = 0; c < C; ++c) sq += labels[i * C + c] * labels[i * C + c];
    CR_CHECK(sq > T(0), "label_similarity: zero-norm label row ", i);
    norms[std::size_t(i)] = std::sqrt(sq);
  }
  Tensor<T> S({K, K});
  for (idx i = 0; i < K; ++i)
    for (idx j = 0; j < K; ++j) {
      T dot = 0;
      for (idx c = 0; c < C; ++c) dot += labels[i * C + c] * labels[j * C + c];
      S[i * K + j] = dot / (norms[std::size_t(i)] * norms[std::size_t(j)]);
    }
  return S;
}

template <typename T>
Tensor<T> labels_tensor(const std::vector<TaskConfig>& tasks) {
  Tensor<T> out({idx(tasks.size()), idx(kLabelBits)});
  for (idx k = 0; k < idx(tasks.size()); ++k) {
    const auto lab = tasks[std::size_t(k)].label.label9();
    for (int b = 0; b < kLabelBits; ++b) out[k * kLabelBits + b] = T(lab[std::size_t(b)]);
  }
  return out;
}

namespace detail {
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& m, T scale) {
  const idx K = m.dim(0), C = m.dim(1);
  Tensor<T> out({K, C});
  for (idx i = 0; i < K; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (idx j = 0; j < C; ++j) mx = std::max(mx, scale * m[i * C + j]);
    T sum = 0;
    for (idx j = 0; j < C; ++j) {
      out[i * C + j] = std::exp(scale * m[i * C + j] - mx);
      sum += out[i * C + j];
    }
    for (idx j = 0; j < C; ++j) out[i * C + j] /= sum;
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& m) {
  const idx R = m.dim(0), C = m.dim(1);
  Tensor<T> out({C, R});
  for (idx i = 0; i < R; ++i)
    for (idx j = 0; j < C; ++j) out[j * R + i] = m[i * C + j];
  return out;
}
}  // namespace detail

// Soft cross-modal targets: row softmax of alpha*S and alpha*S^T.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> soft_targets(const Tensor<T>& S, T alpha = T(2)) {
  CR_CHECK(S.ndim() == 2 && S.dim(0) == S.dim(1), "soft_targets: S must be square");
  return {detail::row_softmax(S, alpha), detail::row_softmax(detail::transpose2d(S), alpha)};
}

struct AlignmentOptions {
  double tau = 0.07;
  double alpha = 2.0;
  bool kl_swapped = false;  // true: KL(Q||P) instead of the printed KL(P||Q)
};

// Label-similarity-guided cross-modal alignment loss.
//   A = Norm(F_i) Norm(F_t)^T / tau, P = row-softmax(A) (resp. A^T),
//   L = 1/2 [ KL(P_it||Q_it) + KL(P_ti||Q_ti) ], row-wise means.
template <typename T>
Var<T> alignment_loss(Var<T> F_i, Var<T> F_t, const Tensor<T>& S,
                      const AlignmentOptions& opt = {}) {
  const idx K = F_i.shape()[0];
  CR_CHECK(F_t.shape()[0] == K && S.shape() == std::vector<idx>({K, K}),
           "alignment_loss: K mismatch");
  auto [Qit_t, Qti_t] = soft_targets(S, T(opt.alpha));

  Var<T> Ni = l2norm_rows(F_i);
  Var<T> Nt = l2norm_rows(F_t);
  Var<T> A = mul_scalar(matmul(Ni, permute(Nt, {1, 0})), T(1.0 / opt.tau));
  Var<T> At = permute(A, {1, 0});

  auto kl_term = [&](Var<T> logits, const Tensor<T>& Q) {
    Var<T> P = softmax_lastdim(logits);
    Var<T> logP = log_softmax_lastdim(logits);
    Tensor<T> logQ(Q.shape());
    for (idx i = 0; i < Q.numel(); ++i) logQ[i] = std::log(std::max(Q[i], T(1e-30)));
    if (!opt.kl_swapped) {
      // sum_j P (logP - logQ), mean over rows
      Var<T> inner = mul(P, sub(logP, constant(logQ)));
      return mul_scalar(sum_all(inner), T(1) / T(K));
    }
    // sum_j Q (logQ - logP), mean over rows; only -Q.logP carries gradient
    Var<T> inner = mul(constant(Q.clone()), sub(constant(logQ), logP));
    return mul_scalar(sum_all(inner), T(1) / T(K));
  };

  Var<T> loss = add(kl_term(A, Qit_t), kl_term(At, Qti_t));
  return mul_scalar(loss, T(0.5));
}

struct PerceptionLossWeights {
  double lambda_align = 0.1;
  double lambda_cls = 0.9;
};

// Final perception objective: lambda_align*L_align + lambda_cls*L_cls where
// L_cls is mean element-wise BCE over all 9 bits.
template <typename T>
Var<T> perception_loss(Var<T> logits, const Tensor<T>& labels, Var<T> F_i, Var<T> F_t,
                       const Tensor<T>& S, const PerceptionLossWeights& w = {},
                       const AlignmentOptions& opt = {}) {
  Var<T> cls = bce_logits_mean(logits, labels.clone());
  if (w.lambda_align == 0)
    return mul_scalar(cls, T(w.lambda_cls));
  Var<T> align = alignment_loss(F_i, F_t, S, opt);
  return add(mul_scalar(align, T(w.lambda_align)), mul_scalar(cls, T(w.lambda_cls)));
}

}  // namespace cdrest
