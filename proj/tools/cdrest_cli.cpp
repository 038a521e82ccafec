// cdrest: compositional degradation restoration toolkit CLI.

#include <CLI11.hpp>

#include <iostream>

#include "cdrest/cdrest.hpp"

namespace {

using namespace cdrest;
using Engine = float;

int cmd_gen_scenes(const std::string& out, int count, idx size, std::uint64_t seed) {
  std::filesystem::create_directories(out);
  for (int i = 0; i < count; ++i) {
    const std::string id = str("scene_", i < 10 ? "00" : (i < 100 ? "0" : ""), i);
    save_png(str(out, "/", id, ".png"), generate_scene(id, seed, size, size));
  }
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

std::vector<std::string> list_scene_ids(const std::string& scenes_dir) {
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(scenes_dir))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  CR_CHECK(!ids.empty(), "no .png scenes in ", scenes_dir);
  return ids;
}

int cmd_synth(const std::string& catalog, const std::string& scenes, const std::string& out,
              std::uint64_t seed, double train_frac, bool verify) {
  const Catalog cat = enumerate_configs(catalog);
  if (verify) {
    const DatasetManifest man = load_manifest(str(out, "/manifest.json"));
    CR_CHECK(man.catalog_hash == cat.file_hash, "manifest hash mismatch: catalog changed");
    const auto bad = verify_dataset(out, man);
    for (const auto& f : bad) std::cout << "MISMATCH " << f << "\n";
    std::cout << (bad.empty() ? "dataset verified: all hashes match\n"
                              : str(bad.size(), " files mismatch\n"));
    return bad.empty() ? 0 : 1;
  }
  const auto ids = list_scene_ids(scenes);
  auto loader = [&](const std::string& id) { return load_png(str(scenes, "/", id, ".png")); };
  const DatasetManifest man = build_dataset(cat, ids, loader, out, seed, train_frac);
  std::cout << "built " << man.entries.size() << " images (" << man.scenes.size()
            << " scenes x " << cat.configs.size() << " configs) under " << out << "\n";
  return 0;
}

int cmd_train_perception(const PerceptionRunConfig& rc) {
  const std::string ckpt = run_train_perception<Engine>(rc);
  std::cout << "perception checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_train_restoration(const RestorationRunConfig& rr) {
  const std::string ckpt = run_train_restoration<Engine>(rr);
  std::cout << "restoration checkpoint: " << ckpt << "\n";
  return 0;
}

void write_report_files(const EvalReport& rep, const std::string& out_dir,
                        const std::string& stem) {
  std::filesystem::create_directories(out_dir);
  std::ofstream(str(out_dir, "/", stem, ".json")) << rep.to_json().dump(1) << "\n";
  std::ofstream(str(out_dir, "/", stem, ".csv")) << rep.to_csv();
  std::ofstream(str(out_dir, "/", stem, ".md")) << rep.to_markdown(stem);
}

int cmd_eval(const std::string& catalog, const std::string& data, const std::string& perception,
             const std::string& restoration, const std::string& out_dir, bool oracle_mask,
             idx batch) {
  const Catalog cat = enumerate_configs(catalog);
  const DatasetManifest man = load_manifest(str(data, "/manifest.json"));
  PerceptionModel<Engine> fdpm = load_perception<Engine>(perception);
  RestorationNet<Engine> net = load_restoration<Engine>(restoration);
  EvalOptions opt;
  opt.mask_source = oracle_mask ? MaskSource::Oracle : MaskSource::Predicted;
  opt.soft_mask = net.config().ab.soft_mask;
  opt.batch = batch;
  const EvalReport rep = evaluate(net, fdpm, cat, data, man, opt);
  const std::string stem = oracle_mask ? "eval_oracle" : "eval";
  write_report_files(rep, out_dir, stem);
  nlohmann::json run;
  run["command"] = "eval";
  run["mask_source"] = rep.mask_source;
  run["catalog_hash"] = cat.file_hash;
  run["perception_hash"] = sha256_file(perception);
  run["restoration_hash"] = sha256_file(restoration);
  write_run_json(out_dir, run);
  std::cout << rep.to_markdown(stem);
  if (!rep.missing_configs.empty()) {
    std::cout << "WARNING: partial report, missing configs:";
    for (const auto& m : rep.missing_configs) std::cout << " " << m;
    std::cout << "\n";
    return 1;
  }
  return 0;
}

int cmd_ablate(const std::string& variant, const std::string& catalog, const std::string& data,
               const std::string& perception, const std::string& out_root, int epochs, idx batch,
               double lr, std::uint64_t seed, const std::vector<idx>& widths, idx blocks) {
  if (variant != "full") ablation_from_name(variant);  // validates the name
  const std::string out_dir = str(out_root, "/", variant);
  RestorationRunConfig rr;
  rr.catalog_path = catalog;
  rr.data_root = data;
  rr.out_dir = out_dir;
  rr.perception_ckpt = perception;
  rr.ablation = variant;
  rr.rc = desk_restoration_config();
  if (!widths.empty()) rr.rc.widths = widths;
  rr.rc.blocks_per_stage = blocks;
  rr.s2.epochs = epochs;
  rr.s2.batch = batch;
  rr.s2.lr = lr;
  rr.s2.seed = seed;
  const std::string ckpt = run_train_restoration<Engine>(rr);
  return cmd_eval(catalog, data, perception, ckpt, out_dir, /*oracle_mask=*/false, batch);
}

int cmd_report(const std::vector<std::string>& inputs, const std::vector<std::string>& names,
               const std::string& out_dir) {
  CR_CHECK(!inputs.empty(), "report: need at least one input report json");
  std::vector<std::pair<std::string, EvalReport>> reports;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::ifstream f(inputs[i]);
    CR_CHECK(f.good(), "cannot open report: ", inputs[i]);
    nlohmann::json j;
    f >> j;
    const std::string name =
        i < names.size() ? names[i] : std::filesystem::path(inputs[i]).stem().string();
    reports.push_back({name, EvalReport::from_json(j)});
  }
  std::filesystem::create_directories(out_dir);
  auto [csv, md] = comparison_tables(reports);
  std::ofstream(str(out_dir, "/comparison.csv")) << csv;
  std::ofstream(str(out_dir, "/comparison.md")) << md;
  std::ofstream(str(out_dir, "/psnr_vs_order.svg")) << order_plot_svg(reports);
  std::cout << md;
  std::cout << "wrote comparison.{csv,md} and psnr_vs_order.svg to " << out_dir << "\n";
  return 0;
}

int cmd_perceive(const std::string& img_path, const std::string& ckpt) {
  PerceptionModel<Engine> fdpm = load_perception<Engine>(ckpt);
  const Image img = load_png(img_path);
  const auto out = fdpm.infer(img);
  nlohmann::json j;
  j["mask"] = out.mask.to_string();
  j["factors"] = nlohmann::json::object();
  for (int b = 0; b < kNumFactors; ++b) {
    const double prob = 1.0 / (1.0 + std::exp(-double(out.logits[b])));
    j["factors"][factor_names()[std::size_t(b)]] = {{"present", bool(out.mask.get(b))},
                                                    {"probability", prob}};
  }
  j["clean_probability"] = 1.0 / (1.0 + std::exp(-double(out.logits[kNumFactors])));
  std::cout << j.dump(1) << "\n";
  return 0;
}

int cmd_restore(const std::string& img_path, const std::string& ckpt,
                const std::string& perception, const std::string& mask_override,
                const std::string& out_path, const std::string& dump_conditioning) {
  PerceptionModel<Engine> fdpm = load_perception<Engine>(perception);
  RestorationNet<Engine> net = load_restoration<Engine>(ckpt);
  const nlohmann::json meta = peek_checkpoint_meta(ckpt);
  const std::string expect = meta.value("perception_hash", "");
  if (!expect.empty() && expect != sha256_file(perception))
    std::cerr << "warning: perception checkpoint differs from the one this restoration model was "
                 "trained against\n";
  const Image img = load_png(img_path);
  const auto pout = fdpm.infer(img);
  FactorMask mask = pout.mask;
  if (!mask_override.empty()) mask = FactorMask::from_string(mask_override);

  NoGrad ng;
  Tensor<Engine> mask_t({1, idx(kNumFactors)});
  for (int b = 0; b < kNumFactors; ++b) mask_t[b] = mask.get(b) ? 1.0f : 0.0f;
  Tensor<Engine> p({1, net.config().d});
  for (idx i = 0; i < net.config().d; ++i) p[i] = pout.embedding[i];
  Var<Engine> x = constant(stack_images<Engine>({img}));
  std::vector<AttentionTrace<Engine>> traces;
  auto out = net.restore(x, mask_t, constant(p), dump_conditioning.empty() ? nullptr : &traces);
  Var<Engine> y = clamp01_eval(out.y);
  const idx H = y.shape()[2], W = y.shape()[3];
  Image rest = make_image(H, W);
  for (idx i = 0; i < 3 * H * W; ++i) rest[i] = float(y.val()[i]);
  save_png(out_path, rest);
  std::cout << "mask " << mask.to_string() << (mask_override.empty() ? " (predicted)" : " (override)")
            << ", restored image written to " << out_path << "\n";
  if (!dump_conditioning.empty()) {
    nlohmann::json j;
    j["mask"] = mask.to_string();
    j["attention"] = nlohmann::json::array();
    for (const auto& tr : traces) {
      nlohmann::json t;
      t["active_keys"] = tr.active_keys;
      t["probs_shape"] = tr.probs.shape();
      nlohmann::json pr = nlohmann::json::array();
      for (idx i = 0; i < tr.probs.numel(); ++i) pr.push_back(double(tr.probs[i]));
      t["probs"] = pr;
      j["attention"].push_back(t);
    }
    std::ofstream(dump_conditioning) << j.dump(1) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional degradation restoration toolkit"};
  app.require_subcommand(1);

  // gen-scenes
  auto* gs = app.add_subcommand("gen-scenes", "generate procedural clean scenes");
  std::string gs_out = "scenes";
  int gs_count = 200;
  idx gs_size = 64;
  std::uint64_t gs_seed = 0;
  gs->add_option("--out", gs_out, "output directory");
  gs->add_option("--count", gs_count, "number of scenes");
  gs->add_option("--size", gs_size, "scene side length");
  gs->add_option("--seed", gs_seed, "seed");

  // synth
  auto* sy = app.add_subcommand("synth", "build the degradation dataset from clean scenes");
  std::string sy_catalog, sy_scenes, sy_out;
  std::uint64_t sy_seed = 0;
  double sy_frac = 0.85;
  bool sy_verify = false;
  sy->add_option("--catalog", sy_catalog, "catalog json")->required();
  sy->add_option("--scenes", sy_scenes, "clean scene directory");
  sy->add_option("--out", sy_out, "output dataset root")->required();
  sy->add_option("--seed", sy_seed, "seed");
  sy->add_option("--train-frac", sy_frac, "fraction of scenes tagged train");
  sy->add_flag("--verify", sy_verify, "verify an existing dataset against its manifest");

  // train-perception
  auto* tp = app.add_subcommand("train-perception", "stage-1: train the degradation perception model");
  PerceptionRunConfig prc;
  std::string tp_backend = "tiny";
  tp->add_option("--data", prc.data_root, "dataset root")->required();
  tp->add_option("--catalog", prc.catalog_path, "catalog json")->required();
  tp->add_option("--out", prc.out_dir, "run output directory")->required();
  tp->add_option("--backend", tp_backend, "embedding backend: tiny|vlm");
  tp->add_option("--epochs", prc.epochs, "epochs");
  tp->add_option("--seed", prc.seed, "seed");
  tp->add_option("--crop", prc.crop, "aligned-view crop");
  tp->add_option("--lr", prc.lr, "learning rate");
  tp->add_option("--d", prc.d, "embedding width");
  bool tp_quiet = false;
  tp->add_flag("--quiet", tp_quiet, "suppress per-epoch output");

  // train-restoration
  auto* tr = app.add_subcommand("train-restoration", "stage-2: train the restoration backbone");
  RestorationRunConfig rrc;
  std::vector<idx> tr_widths;
  tr->add_option("--data", rrc.data_root, "dataset root")->required();
  tr->add_option("--catalog", rrc.catalog_path, "catalog json")->required();
  tr->add_option("--perception", rrc.perception_ckpt, "stage-1 checkpoint")->required();
  tr->add_option("--out", rrc.out_dir, "run output directory")->required();
  tr->add_option("--epochs", rrc.s2.epochs, "epochs");
  tr->add_option("--steps-per-epoch", rrc.s2.steps_per_epoch, "0 = full pass");
  tr->add_option("--batch", rrc.s2.batch, "batch size");
  tr->add_option("--lr", rrc.s2.lr, "learning rate");
  tr->add_option("--weight-decay", rrc.s2.weight_decay, "weight decay");
  tr->add_option("--seed", rrc.s2.seed, "seed");
  tr->add_option("--ablation", rrc.ablation, "ablation variant or 'full'");
  tr->add_option("--widths", tr_widths, "5 stage widths");
  tr->add_option("--blocks", rrc.rc.blocks_per_stage, "blocks per stage");
  bool tr_oracle_train = false, tr_quiet = false;
  tr->add_flag("--oracle-mask-train", tr_oracle_train, "condition on ground-truth masks");
  tr->add_flag("--quiet", tr_quiet, "suppress per-epoch output");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a trained pipeline on the test scenes");
  std::string ev_catalog, ev_data, ev_perc, ev_rest, ev_out = "eval_out";
  bool ev_oracle = false;
  idx ev_batch = 8;
  ev->add_option("--catalog", ev_catalog, "catalog json")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--perception", ev_perc, "stage-1 checkpoint")->required();
  ev->add_option("--restoration", ev_rest, "stage-2 checkpoint")->required();
  ev->add_option("--out", ev_out, "report output directory");
  ev->add_flag("--oracle-mask", ev_oracle, "feed ground-truth masks, bypassing perception");
  ev->add_option("--batch", ev_batch, "evaluation batch");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train + evaluate one ablation variant");
  std::string ab_variant, ab_catalog, ab_data, ab_perc, ab_out = "ablations";
  int ab_epochs = 1;
  idx ab_batch = 8, ab_blocks = 1;
  double ab_lr = 2e-4;
  std::uint64_t ab_seed = 0;
  std::vector<idx> ab_widths;
  ab->add_option("--variant", ab_variant, "variant name (see --list-variants)")->required();
  ab->add_option("--catalog", ab_catalog, "catalog json")->required();
  ab->add_option("--data", ab_data, "dataset root")->required();
  ab->add_option("--perception", ab_perc, "stage-1 checkpoint")->required();
  ab->add_option("--out", ab_out, "output root (per-variant subdirs)");
  ab->add_option("--epochs", ab_epochs, "training epochs");
  ab->add_option("--batch", ab_batch, "batch size");
  ab->add_option("--lr", ab_lr, "learning rate");
  ab->add_option("--seed", ab_seed, "seed");
  ab->add_option("--widths", ab_widths, "5 stage widths");
  ab->add_option("--blocks", ab_blocks, "blocks per stage");

  auto* lv = app.add_subcommand("list-variants", "print supported ablation variants");

  // report
  auto* rp = app.add_subcommand("report", "render comparison tables and plots from report jsons");
  std::vector<std::string> rp_inputs, rp_names;
  std::string rp_out = "report_out";
  rp->add_option("--inputs", rp_inputs, "eval report .json files")->required();
  rp->add_option("--names", rp_names, "display names (parallel to --inputs)");
  rp->add_option("--out", rp_out, "output directory");

  // perceive
  auto* pc = app.add_subcommand("perceive", "predict the degradation mask of one image");
  std::string pc_img, pc_ckpt;
  pc->add_option("--img", pc_img, "input png")->required();
  pc->add_option("--ckpt", pc_ckpt, "perception checkpoint")->required();

  // restore
  auto* rs = app.add_subcommand("restore", "restore one image");
  std::string rs_img, rs_ckpt, rs_perc, rs_mask, rs_out = "restored.png", rs_dump;
  rs->add_option("--img", rs_img, "input png")->required();
  rs->add_option("--ckpt", rs_ckpt, "restoration checkpoint")->required();
  rs->add_option("--perception", rs_perc, "perception checkpoint")->required();
  rs->add_option("--mask", rs_mask, "8-bit mask override (e.g. 10100000)");
  rs->add_option("--out", rs_out, "output png");
  rs->add_option("--dump-conditioning", rs_dump, "write conditioning attention maps as json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gs->parsed()) return cmd_gen_scenes(gs_out, gs_count, gs_size, gs_seed);
    if (sy->parsed()) {
      if (!sy_verify) CR_CHECK(!sy_scenes.empty(), "--scenes is required to build a dataset");
      return cmd_synth(sy_catalog, sy_scenes, sy_out, sy_seed, sy_frac, sy_verify);
    }
    if (tp->parsed()) {
      prc.backend = tp_backend == "vlm" ? BackendKind::Vlm : BackendKind::Tiny;
      prc.verbose = !tp_quiet;
      return cmd_train_perception(prc);
    }
    if (tr->parsed()) {
      if (!tr_widths.empty()) {
        CR_CHECK(tr_widths.size() == 5, "--widths needs exactly 5 values");
        rrc.rc.widths = tr_widths;
      }
      rrc.s2.train_mask = tr_oracle_train ? MaskSource::Oracle : MaskSource::Predicted;
      rrc.s2.verbose = !tr_quiet;
      return cmd_train_restoration(rrc);
    }
    if (ev->parsed())
      return cmd_eval(ev_catalog, ev_data, ev_perc, ev_rest, ev_out, ev_oracle, ev_batch);
    if (ab->parsed())
      return cmd_ablate(ab_variant, ab_catalog, ab_data, ab_perc, ab_out, ab_epochs, ab_batch,
                        ab_lr, ab_seed, ab_widths, ab_blocks);
    if (lv->parsed()) {
      for (const auto& v : ablation_variant_names()) std::cout << v << "\n";
      return 0;
    }
    if (rp->parsed()) return cmd_report(rp_inputs, rp_names, rp_out);
    if (pc->parsed()) return cmd_perceive(pc_img, pc_ckpt);
    if (rs->parsed()) return cmd_restore(rs_img, rs_ckpt, rs_perc, rs_mask, rs_out, rs_dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
