#pragma once

#include "cdrest/core/layers.hpp"
#include "cdrest/core/serialize.hpp"
#include "cdrest/synth/catalog.hpp"

namespace cdrest {

template <typename T>
Tensor<T> stack_images(const std::vector<Image>& imgs) {
  CR_CHECK(!imgs.empty(), "stack_images: empty");
  const idx C = imgs[0].dim(0), H = imgs[0].dim(1), W = imgs[0].dim(2);
  Tensor<T> out = Tensor<T>::uninit({idx(imgs.size()), C, H, W});
  for (idx n = 0; n < idx(imgs.size()); ++n) {
    CR_CHECK(imgs[std::size_t(n)].shape() == imgs[0].shape(), "stack_images: ragged shapes");
    for (idx i = 0; i < C * H * W; ++i) out[n * C * H * W + i] = T(imgs[std::size_t(n)][i]);
  }
  return out;
}

// Hard degradation mask from logits: bit j set iff z_j >= 0 (sigmoid(0)=0.5,
// boundary counts as present). The trailing clean bit is discarded.
template <typename T>
FactorMask threshold_mask(const Tensor<T>& logits9) {
  CR_CHECK(logits9.numel() >= kNumFactors, "threshold_mask: need at least 8 logits");
  FactorMask m;
  for (int j = 0; j < kNumFactors; ++j) m.set(j, logits9[j] >= T(0));
  return m;
}

// Prompt text for one task configuration.
inline std::string task_prompt(const TaskConfig& cfg) {
  if (cfg.order == 0) return "This image is clean.";
  std::string list;
  for (std::size_t i = 0; i < cfg.factors.size(); ++i) {
    if (i) list += " and ";
    list += factor_name(cfg.factors[i]);
  }
  return "This image contains " + list + ".";
}

// Small trainable image encoder: 4 strided conv blocks, GAP, projection.
template <typename T>
struct TinyEncoder {
  Conv2dLayer<T> c1, c2, c3, c4;
  LinearLayer<T> proj;
  idx d = 128;

  TinyEncoder() = default;
  TinyEncoder(idx d_, Rng& rng)
      : c1(3, 16, 3, 2, 1, 1, rng),
        c2(16, 32, 3, 2, 1, 1, rng),
        c3(32, 64, 3, 2, 1, 1, rng),
        c4(64, 128, 3, 2, 1, 1, rng),
        proj(128, d_, rng),
        d(d_) {}

  Var<T> operator()(Var<T> x) const {
    Var<T> h = add_scalar(mul_scalar(x, T(2)), T(-1));  // [0,1] -> [-1,1]
    h = gelu(c1(h));
    h = gelu(c2(h));
    h = gelu(c3(h));
    h = gelu(c4(h));
    return proj(gap2d(h));
  }

  void collect(Params<T>& ps, const std::string& p) const {
    c1.collect(ps, p + ".c1");
    c2.collect(ps, p + ".c2");
    c3.collect(ps, p + ".c3");
    c4.collect(ps, p + ".c4");
    proj.collect(ps, p + ".proj");
  }
};

// Multi-label head: LN -> linear(d->2d) -> GELU -> linear(2d->9).
template <typename T>
struct PerceptionHead {
  LayerNormLayer<T> ln;
  LinearLayer<T> fc1, fc2;

  PerceptionHead() = default;
  PerceptionHead(idx d, Rng& rng) : ln(d), fc1(d, 2 * d, rng), fc2(2 * d, kLabelBits, rng) {}

  Var<T> operator()(Var<T> f) const { return fc2(gelu(fc1(ln(f)))); }

  void collect(Params<T>& ps, const std::string& p) const {
    ln.collect(ps, p + ".ln");
    fc1.collect(ps, p + ".fc1");
    fc2.collect(ps, p + ".fc2");
  }
};

template <typename T>
struct PerceptionOutput {
  Tensor<T> logits;  // [9]
  FactorMask mask;
  Tensor<T> embedding;  // [d]
};

enum class BackendKind { Tiny, Vlm };

// Degradation perception model. The image tower and head are trainable; text
// embeddings are computed once at construction and stay frozen (the cached
// prompt anchors the alignment loss pulls image embeddings toward).
template <typename T>
class PerceptionModel {
 public:
  PerceptionModel() = default;

  PerceptionModel(BackendKind kind, idx d, const std::vector<TaskConfig>& tasks,
                  std::uint64_t seed)
      : kind_(kind), d_(d) {
    CR_CHECK(kind == BackendKind::Tiny,
             "vlm backend: pretrained weights are not bundled; pass tiny or load a checkpoint "
             "exported from an external encoder");
    Rng rng = Rng(seed).fork(fnv1a64("perception"));
    enc_ = TinyEncoder<T>(d, rng);
    head_ = PerceptionHead<T>(d, rng);
    set_tasks(tasks, seed);
  }

  // Checkpoint-loading shell: text embeddings/prompts come from the metadata.
  PerceptionModel(idx d, idx n_tasks) : kind_(BackendKind::Tiny), d_(d) {
    Rng rng = Rng(0).fork(fnv1a64("perception"));
    enc_ = TinyEncoder<T>(d, rng);
    head_ = PerceptionHead<T>(d, rng);
    text_emb_ = Tensor<T>::zeros({n_tasks, d});
  }

  // Text prompts are encoded once: a fixed random projection of the 9-bit
  // task label plus a small prompt-hash component, L2-normalized. Cosine
  // structure then mirrors label overlap, which is what the soft-alignment
  // targets expect of a text encoder.
  void set_tasks(const std::vector<TaskConfig>& tasks, std::uint64_t seed) {
    tasks_ = tasks;
    prompts_.clear();
    for (const auto& t : tasks) prompts_.push_back(task_prompt(t));
    Rng prng = Rng(seed).fork(fnv1a64("text-anchors"));
    Tensor<T> A = Tensor<T>::randn({d_, idx(kLabelBits)}, prng, T(1));
    text_emb_ = Tensor<T>::zeros({idx(tasks.size()), d_});
    for (idx k = 0; k < idx(tasks.size()); ++k) {
      const auto lab = tasks[std::size_t(k)].label.label9();
      Rng hrng = prng.fork(fnv1a64(prompts_[std::size_t(k)]));
      T norm2 = 0;
      for (idx i = 0; i < d_; ++i) {
        T acc = 0;
        for (int b = 0; b < kLabelBits; ++b) acc += A[i * kLabelBits + b] * T(lab[std::size_t(b)]);
        acc += T(0.25) * T(hrng.normal());
        text_emb_[k * d_ + i] = acc;
        norm2 += acc * acc;
      }
      const T inv = T(1) / std::sqrt(norm2);
      for (idx i = 0; i < d_; ++i) text_emb_[k * d_ + i] *= inv;
    }
  }

  idx d() const { return d_; }
  const std::vector<TaskConfig>& tasks() const { return tasks_; }
  const std::vector<std::string>& prompts() const { return prompts_; }
  const Tensor<T>& text_embeddings() const { return text_emb_; }

  Var<T> embed(Var<T> imgs) const { return enc_(imgs); }
  Var<T> logits_from_embedding(Var<T> f) const { return head_(f); }

  // (m̂, p) = P(x)
  PerceptionOutput<T> infer(const Image& img) const {
    NoGrad ng;
    Var<T> x = constant(stack_images<T>({img}));
    Var<T> f = embed(x);
    Var<T> z = logits_from_embedding(f);
    PerceptionOutput<T> out;
    out.logits = z.val().reshaped({idx(kLabelBits)}).clone();
    out.mask = threshold_mask(out.logits);
    out.embedding = f.val().reshaped({d_}).clone();
    return out;
  }

  Params<T> parameters() const {
    Params<T> ps;
    enc_.collect(ps, "enc");
    head_.collect(ps, "head");
    return ps;
  }

  nlohmann::json meta(const std::string& catalog_hash) const {
    nlohmann::json j;
    j["model"] = "perception";
    j["backend"] = kind_ == BackendKind::Tiny ? "tiny" : "vlm";
    j["d"] = d_;
    j["catalog_hash"] = catalog_hash;
    j["prompts"] = prompts_;
    nlohmann::json te = nlohmann::json::array();
    for (idx i = 0; i < text_emb_.numel(); ++i) te.push_back(double(text_emb_[i]));
    j["text_embeddings"] = te;
    return j;
  }

  void load_text_embeddings(const nlohmann::json& meta) {
    const auto te = meta.at("text_embeddings");
    CR_CHECK(idx(te.size()) == text_emb_.numel(), "text embedding size mismatch in checkpoint");
    for (idx i = 0; i < text_emb_.numel(); ++i) text_emb_[i] = T(te[std::size_t(i)].get<double>());
    prompts_ = meta.at("prompts").get<std::vector<std::string>>();
  }

 private:
  BackendKind kind_ = BackendKind::Tiny;
  idx d_ = 128;
  TinyEncoder<T> enc_;
  PerceptionHead<T> head_;
  Tensor<T> text_emb_;  // [K, d], frozen
  std::vector<TaskConfig> tasks_;
  std::vector<std::string> prompts_;
};

}  // namespace cdrest
