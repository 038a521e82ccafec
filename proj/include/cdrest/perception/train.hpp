#pragma once

#include <iostream>

#include "cdrest/perception/losses.hpp"

namespace cdrest {

// One scene's K aligned task views plus the [K,9] label matrix.
template <typename T>
struct SceneViews {
  std::string scene_id;
  std::vector<Image> views;
  Tensor<T> labels;
};

template <typename T>
SceneViews<T> make_scene_views(const std::string& scene_id, const Image& scene,
                               const Catalog& cat, const std::vector<TaskConfig>& tasks,
                               idx crop, std::uint64_t seed) {
  SceneViews<T> sv;
  sv.scene_id = scene_id;
  auto views = aligned_views(scene, scene_id, cat, tasks, crop, seed);
  sv.labels = Tensor<T>({idx(views.size()), idx(kLabelBits)});
  for (idx k = 0; k < idx(views.size()); ++k) {
    sv.views.push_back(std::move(views[std::size_t(k)].first));
    const auto lab = views[std::size_t(k)].second.label9();
    for (int b = 0; b < kLabelBits; ++b) sv.labels[k * kLabelBits + b] = T(lab[std::size_t(b)]);
  }
  return sv;
}

struct Stage1Config {
  int epochs = 10;
  double lr = 2e-4;
  double weight_decay = 0.02;
  std::uint64_t seed = 0;
  PerceptionLossWeights weights;
  AlignmentOptions align;
  bool verbose = false;
};

// Stage-I training: fine-tunes the image tower and head against the frozen
// text anchors. The alignment term is computed per scene over its K aligned
// views; BCE covers the same views. Aborts on a non-finite loss.
template <typename T>
std::vector<double> train_stage1(PerceptionModel<T>& model, const std::vector<SceneViews<T>>& data,
                                 const Stage1Config& cfg) {
  CR_CHECK(!data.empty(), "train_stage1: no data");
  const Tensor<T> S = label_similarity(data[0].labels);
  Var<T> F_t = constant(model.text_embeddings().clone());
  AdamW<T> opt(model.parameters(), T(cfg.lr), T(cfg.weight_decay));
  Rng order_rng = Rng(cfg.seed).fork(fnv1a64("stage1-order"));

  std::vector<double> epoch_losses;
  std::vector<idx> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = idx(i);

  for (int ep = 0; ep < cfg.epochs; ++ep) {
    // Fisher-Yates with the project RNG
    for (idx i = idx(order.size()) - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[std::size_t(order_rng.uniform_int(i + 1))]);
    double total = 0;
    for (idx si : order) {
      const SceneViews<T>& sv = data[std::size_t(si)];
      Var<T> x = constant(stack_images<T>(sv.views));
      Var<T> f = model.embed(x);
      Var<T> z = model.logits_from_embedding(f);
      Var<T> loss = perception_loss(z, sv.labels, f, F_t, S, cfg.weights, cfg.align);
      const double lv = double(loss.val()[0]);
      CR_CHECK(std::isfinite(lv), "stage-1 training diverged: non-finite loss at epoch ", ep,
               ", scene ", sv.scene_id);
      opt.zero_grad();
      backward(loss);
      opt.step();
      total += lv;
    }
    epoch_losses.push_back(total / double(data.size()));
    if (cfg.verbose)
      std::cout << "[stage1] epoch " << ep + 1 << "/" << cfg.epochs << " loss "
                << epoch_losses.back() << "\n";
  }
  return epoch_losses;
}

// Mean per-bit accuracy over the 8 factor bits.
template <typename T>
double per_bit_accuracy(const PerceptionModel<T>& model, const std::vector<SceneViews<T>>& data) {
  NoGrad ng;
  idx correct = 0, total = 0;
  for (const auto& sv : data) {
    Var<T> x = constant(stack_images<T>(sv.views));
    Var<T> z = model.logits_from_embedding(model.embed(x));
    const idx K = z.shape()[0];
    for (idx k = 0; k < K; ++k)
      for (int b = 0; b < kNumFactors; ++b) {
        const bool pred = z.val()[k * kLabelBits + b] >= T(0);
        const bool truth = sv.labels[k * kLabelBits + b] > T(0.5);
        correct += (pred == truth) ? 1 : 0;
        ++total;
      }
  }
  return double(correct) / double(total);
}

}  // namespace cdrest
