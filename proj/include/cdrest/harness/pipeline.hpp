#pragma once

#include "cdrest/harness/train.hpp"

namespace cdrest {

// Two-stage orchestration shared by the CLI and the acceptance suite.

struct PerceptionRunConfig {
  std::string catalog_path, data_root, out_dir;
  BackendKind backend = BackendKind::Tiny;
  idx d = 128;
  idx crop = 48;
  int epochs = 10;
  double lr = 2e-4, weight_decay = 0.02;
  std::uint64_t seed = 0;
  bool verbose = false;
};

template <typename T>
std::string run_train_perception(const PerceptionRunConfig& rc) {
  const Catalog cat = enumerate_configs(rc.catalog_path);
  const DatasetManifest man = load_manifest(str(rc.data_root, "/manifest.json"));
  CR_CHECK(man.catalog_hash == cat.file_hash,
           "dataset was built from a different catalog (hash mismatch)");
  PerceptionModel<T> model(rc.backend, rc.d, cat.perception_tasks(), rc.seed);

  const Tensor<T> text_before = model.text_embeddings().clone();
  auto data = build_stage1_data<T>(cat, rc.data_root, man, "train", rc.crop, rc.seed);
  Stage1Config s1;
  s1.epochs = rc.epochs;
  s1.lr = rc.lr;
  s1.weight_decay = rc.weight_decay;
  s1.seed = rc.seed;
  s1.verbose = rc.verbose;
  const auto losses = train_stage1(model, data, s1);

  // frozen-text contract
  CR_CHECK(text_before.numel() == model.text_embeddings().numel(), "text table resized");
  for (idx i = 0; i < text_before.numel(); ++i)
    CR_CHECK(text_before[i] == model.text_embeddings()[i],
             "frozen-text contract violated during stage-1 training");

  std::filesystem::create_directories(rc.out_dir);
  const std::string ckpt = str(rc.out_dir, "/perception.ckpt");
  save_checkpoint(ckpt, model.meta(cat.file_hash), model.parameters());

  nlohmann::json run;
  run["stage"] = "perception";
  run["catalog_hash"] = cat.file_hash;
  run["seed"] = rc.seed;
  run["epochs"] = rc.epochs;
  run["crop"] = rc.crop;
  run["lr"] = rc.lr;
  run["weight_decay"] = rc.weight_decay;
  run["d"] = rc.d;
  run["backend"] = rc.backend == BackendKind::Tiny ? "tiny" : "vlm";
  run["epoch_losses"] = losses;
  run["checkpoint"] = ckpt;
  run["checkpoint_hash"] = sha256_file(ckpt);
  write_run_json(rc.out_dir, run);
  return ckpt;
}

template <typename T>
PerceptionModel<T> load_perception(const std::string& ckpt_path) {
  nlohmann::json meta = peek_checkpoint_meta(ckpt_path);
  CR_CHECK(meta.value("model", "") == "perception", "not a perception checkpoint: ", ckpt_path);
  PerceptionModel<T> model(meta.at("d").get<idx>(), idx(meta.at("prompts").size()));
  auto params = model.parameters();
  load_checkpoint(ckpt_path, params);
  model.load_text_embeddings(meta);
  return model;
}

struct RestorationRunConfig {
  std::string catalog_path, data_root, out_dir, perception_ckpt;
  RestorationConfig rc = desk_restoration_config();
  std::string ablation = "full";
  Stage2Config s2;
};

template <typename T>
std::string run_train_restoration(const RestorationRunConfig& rr) {
  const Catalog cat = enumerate_configs(rr.catalog_path);
  const DatasetManifest man = load_manifest(str(rr.data_root, "/manifest.json"));
  CR_CHECK(man.catalog_hash == cat.file_hash,
           "dataset was built from a different catalog (hash mismatch)");
  CR_CHECK(std::filesystem::exists(rr.perception_ckpt),
           "missing perception checkpoint: ", rr.perception_ckpt);
  PerceptionModel<T> fdpm = load_perception<T>(rr.perception_ckpt);

  RestorationConfig rc = rr.rc;
  rc.ab = ablation_from_name(rr.ablation);
  rc.base_grid_h = man.scene_h;
  rc.base_grid_w = man.scene_w;
  RestorationNet<T> net(rc, rr.s2.seed);

  auto ds = RestoDataset<T>::load(cat, rr.data_root, man);
  Stage2Config s2 = rr.s2;
  s2.soft_mask = rc.ab.soft_mask;
  if (s2.loss_log_path.empty()) s2.loss_log_path = str(rr.out_dir, "/losses.jsonl");
  std::filesystem::create_directories(rr.out_dir);

  const std::string digest_before = params_digest(fdpm.parameters());
  const auto losses = train_stage2(net, fdpm, ds, s2);
  CR_CHECK(params_digest(fdpm.parameters()) == digest_before,
           "frozen perception parameters drifted during stage-2 training");

  const std::string ckpt = str(rr.out_dir, "/restoration.ckpt");
  nlohmann::json meta = net.meta(cat.file_hash, sha256_file(rr.perception_ckpt));
  meta["ablation"] = rr.ablation;
  save_checkpoint(ckpt, meta, net.parameters());

  nlohmann::json run;
  run["stage"] = "restoration";
  run["catalog_hash"] = cat.file_hash;
  run["perception_ckpt"] = rr.perception_ckpt;
  run["perception_hash"] = sha256_file(rr.perception_ckpt);
  run["seed"] = rr.s2.seed;
  run["epochs"] = rr.s2.epochs;
  run["batch"] = rr.s2.batch;
  run["lr"] = rr.s2.lr;
  run["weight_decay"] = rr.s2.weight_decay;
  run["ablation"] = rr.ablation;
  run["widths"] = rc.widths;
  run["blocks_per_stage"] = rc.blocks_per_stage;
  run["epoch_losses"] = losses;
  run["checkpoint"] = ckpt;
  run["checkpoint_hash"] = sha256_file(ckpt);
  write_run_json(rr.out_dir, run);
  return ckpt;
}

template <typename T>
RestorationNet<T> load_restoration(const std::string& ckpt_path) {
  nlohmann::json meta = peek_checkpoint_meta(ckpt_path);
  CR_CHECK(meta.value("model", "") == "restoration", "not a restoration checkpoint: ", ckpt_path);
  RestorationConfig rc;
  rc.widths = meta.at("widths").get<std::vector<idx>>();
  rc.blocks_per_stage = meta.at("blocks_per_stage").get<idx>();
  rc.window = meta.at("window").get<idx>();
  rc.e = meta.at("e").get<idx>();
  rc.d = meta.at("d").get<idx>();
  rc.freq_experts = meta.at("freq_experts").get<idx>();
  rc.freq_rank = meta.at("freq_rank").get<idx>();
  rc.base_grid_h = meta.at("base_grid")[0].get<idx>();
  rc.base_grid_w = meta.at("base_grid")[1].get<idx>();
  rc.base_channels = meta.at("base_channels").get<idx>();
  rc.ab = ablation_from_name(meta.value("ablation", "full"));
  RestorationNet<T> net(rc, /*seed=*/0);
  auto params = net.parameters();
  load_checkpoint(ckpt_path, params);
  return net;
}

}  // namespace cdrest
