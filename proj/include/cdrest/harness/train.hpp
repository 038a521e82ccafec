#pragma once

#include <fstream>
#include <iostream>

#include "cdrest/harness/eval.hpp"
#include "cdrest/objectives/losses.hpp"
#include "cdrest/perception/train.hpp"

namespace cdrest {

// Builds the Stage-I aligned-views data (K = 22 views per scene) for the
// scenes of a given role, reading clean scenes from the built dataset.
template <typename T>
std::vector<SceneViews<T>> build_stage1_data(const Catalog& cat, const std::string& root,
                                             const DatasetManifest& man, const std::string& role,
                                             idx crop, std::uint64_t seed) {
  const auto tasks = cat.perception_tasks();
  std::vector<SceneViews<T>> data;
  for (const auto& s : man.scenes) {
    if (s.role != role) continue;
    Image scene = load_png(str(root, "/", s.file));
    data.push_back(make_scene_views<T>(s.id, scene, cat, tasks, crop, seed));
  }
  CR_CHECK(!data.empty(), "no '", role, "' scenes found in the manifest");
  return data;
}

// In-memory Stage-II training set: seen-config degraded/clean pairs from the
// train-role scenes.
template <typename T>
struct RestoDataset {
  struct Item {
    std::string scene, config;
    idx scene_idx = 0;
    Image degraded;
    FactorMask gt_mask;
  };
  std::vector<std::string> scene_ids;
  std::vector<Image> cleans;
  std::vector<Tensor<T>> base_targets;  // guided-filter targets, cached per scene
  std::vector<Item> items;

  static RestoDataset load(const Catalog& cat, const std::string& root,
                           const DatasetManifest& man, const std::string& role = "train") {
    RestoDataset ds;
    std::map<std::string, idx> scene_index;
    std::map<std::string, std::map<std::string, std::string>> files;
    for (const auto& e : man.entries) files[e.config][e.scene] = e.file;
    for (const auto& s : man.scenes) {
      if (s.role != role) continue;
      scene_index[s.id] = idx(ds.scene_ids.size());
      ds.scene_ids.push_back(s.id);
      ds.cleans.push_back(load_png(str(root, "/", s.file)));
    }
    CR_CHECK(!ds.scene_ids.empty(), "resto dataset: no '", role, "' scenes");
    ds.base_targets.resize(ds.scene_ids.size());
    for (const auto& cfg : cat.with_split(Split::Seen)) {
      for (const auto& [sid, sidx] : scene_index) {
        Item it;
        it.scene = sid;
        it.config = cfg.name;
        it.scene_idx = sidx;
        it.degraded = load_png(str(root, "/", files.at(cfg.name).at(sid)));
        it.gt_mask = cfg.label;
        ds.items.push_back(std::move(it));
      }
    }
    return ds;
  }

  const Tensor<T>& base_target_for(idx scene_idx) {
    Tensor<T>& t = base_targets[std::size_t(scene_idx)];
    if (!t.defined()) {
      Tensor<T> y = cleans[std::size_t(scene_idx)].template cast<T>();
      t = base_target(y);
    }
    return t;
  }
};

struct Stage2Config {
  int epochs = 10;
  int steps_per_epoch = 0;  // 0 = one full pass over the items
  idx batch = 8;
  double lr = 2e-4;
  double weight_decay = 0.02;
  std::uint64_t seed = 0;
  LossWeights lw;
  OverloadSpec overload;
  MaskSource train_mask = MaskSource::Predicted;
  bool soft_mask = false;
  bool use_overload = true;
  bool verbose = false;
  std::string loss_log_path;  // JSONL: {step, l1, l_freq, l_base, total}
};

// Per-item frozen perception outputs, computed once up front.
template <typename T>
struct PerceptionCache {
  std::vector<FactorMask> masks;
  std::vector<std::vector<T>> probs;  // sigmoid(logits) over 8 factor bits
  std::vector<Tensor<T>> embeddings;
};

template <typename T>
PerceptionCache<T> cache_perception(const PerceptionModel<T>& fdpm,
                                    const RestoDataset<T>& ds) {
  PerceptionCache<T> c;
  for (const auto& it : ds.items) {
    auto out = fdpm.infer(it.degraded);
    c.masks.push_back(out.mask);
    std::vector<T> pr(static_cast<std::size_t>(kNumFactors));
    for (int b = 0; b < kNumFactors; ++b)
      pr[std::size_t(b)] = T(1) / (T(1) + std::exp(-out.logits[b]));
    c.probs.push_back(std::move(pr));
    c.embeddings.push_back(out.embedding);
  }
  return c;
}

// Stage-II training. The perception model is frozen: its parameters are not
// registered with the optimizer and its outputs enter the graph as constants;
// the caller additionally asserts the parameter digest is unchanged.
template <typename T>
std::vector<double> train_stage2(RestorationNet<T>& net, const PerceptionModel<T>& fdpm,
                                 RestoDataset<T>& ds, const Stage2Config& cfg) {
  const AblationFlags& ab = net.config().ab;
  PerceptionCache<T> cache = cache_perception(fdpm, ds);
  AdamW<T> opt(net.parameters(), T(cfg.lr), T(cfg.weight_decay));
  Rng order_rng = Rng(cfg.seed).fork(fnv1a64("stage2-order"));
  const idx d = net.config().d;

  std::ofstream log;
  if (!cfg.loss_log_path.empty()) log.open(cfg.loss_log_path);

  std::vector<idx> order(ds.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = idx(i);

  LossWeights lw = cfg.lw;
  if (ab.no_freq_loss) lw.lambda_f = 0;
  if (ab.no_base_loss || ab.no_dual_branch) lw.lambda_p = 0;

  std::vector<double> epoch_losses;
  long gstep = 0;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    for (idx i = idx(order.size()) - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[std::size_t(order_rng.uniform_int(i + 1))]);
    const int steps = cfg.steps_per_epoch > 0
                          ? cfg.steps_per_epoch
                          : int((idx(order.size()) + cfg.batch - 1) / cfg.batch);
    double total = 0;
    for (int st = 0; st < steps; ++st) {
      std::vector<idx> batch_items;
      for (idx b = 0; b < cfg.batch; ++b)
        batch_items.push_back(order[std::size_t((idx(st) * cfg.batch + b) % idx(order.size()))]);
      const idx B = idx(batch_items.size());

      std::vector<Image> xs;
      std::vector<FactorMask> masks;
      for (idx bi : batch_items) {
        const auto& it = ds.items[std::size_t(bi)];
        xs.push_back(it.degraded);
        masks.push_back(cfg.train_mask == MaskSource::Oracle ? it.gt_mask
                                                             : cache.masks[std::size_t(bi)]);
      }
      if (cfg.use_overload && !ab.no_mask_overload) {
        const std::uint64_t ov_seed = Rng(cfg.seed).fork(fnv1a64("overload")).fork(gstep).next_u64();
        masks = mask_overload(masks, ov_seed, cfg.overload);
      }

      Tensor<T> mask_t({B, idx(kNumFactors)});
      Tensor<T> p_t({B, d});
      Tensor<T> y({B, 3, xs[0].dim(1), xs[0].dim(2)});
      Tensor<T> ybt({B, 3, xs[0].dim(1), xs[0].dim(2)});
      for (idx b = 0; b < B; ++b) {
        const idx bi = batch_items[std::size_t(b)];
        const auto& it = ds.items[std::size_t(bi)];
        for (int f = 0; f < kNumFactors; ++f) {
          T v = masks[std::size_t(b)].get(f) ? T(1) : T(0);
          if (cfg.soft_mask) {
            v = cache.probs[std::size_t(bi)][std::size_t(f)];
            if (masks[std::size_t(b)].get(f) && !cache.masks[std::size_t(bi)].get(f)) v = T(1);
          }
          mask_t[b * kNumFactors + f] = v;
        }
        const Tensor<T>& emb = cache.embeddings[std::size_t(bi)];
        for (idx i = 0; i < d; ++i) p_t[b * d + i] = emb[i];
        const Image& cl = ds.cleans[std::size_t(it.scene_idx)];
        const Tensor<T>& bt = ds.base_target_for(it.scene_idx);
        const idx sz = 3 * cl.dim(1) * cl.dim(2);
        for (idx i = 0; i < sz; ++i) {
          y[b * sz + i] = T(cl[i]);
          ybt[b * sz + i] = bt[i];
        }
      }

      Var<T> x = constant(stack_images<T>(xs));
      auto out = net.restore(x, mask_t, constant(p_t));
      auto loss = restoration_loss(out.y, out.y_base, y, ybt, lw);
      const double lv = double(loss.total.val()[0]);
      CR_CHECK(std::isfinite(lv), "stage-2 training diverged: non-finite loss at step ", gstep);
      opt.zero_grad();
      backward(loss.total);
      opt.step();
      total += lv;
      if (log.is_open())
        log << nlohmann::json({{"step", gstep},
                               {"l1", loss.l1},
                               {"l_freq", loss.freq},
                               {"l_base", loss.base},
                               {"total", lv}})
                   .dump()
            << "\n";
      ++gstep;
    }
    epoch_losses.push_back(total / double(steps));
    if (cfg.verbose)
      std::cout << "[stage2] epoch " << ep + 1 << "/" << cfg.epochs << " loss "
                << epoch_losses.back() << std::endl;
  }
  return epoch_losses;
}

inline void write_run_json(const std::string& dir, const nlohmann::json& j) {
  std::filesystem::create_directories(dir);
  std::ofstream f(std::filesystem::path(dir) / "run.json");
  f << j.dump(1) << "\n";
  CR_CHECK(f.good(), "cannot write run.json under ", dir);
}

}  // namespace cdrest
