#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace cdrest;
using namespace cdrest::testutil;
namespace fs = std::filesystem;

namespace {

Image const_image(idx h, idx w, float r, float g, float b) {
  Image img = make_image(h, w);
  for (idx i = 0; i < h * w; ++i) {
    img[i] = r;
    img[h * w + i] = g;
    img[2 * h * w + i] = b;
  }
  return img;
}

struct MiniWorld {
  fs::path root;
  Catalog cat;
  DatasetManifest man;

  static MiniWorld build(const std::string& tag, int scenes, idx size, std::uint64_t seed) {
    MiniWorld w{fs::temp_directory_path() / ("cdrest_mw_" + tag),
                enumerate_configs(default_catalog()), {}};
    fs::remove_all(w.root);
    std::vector<std::string> ids;
    for (int i = 0; i < scenes; ++i) ids.push_back(str("sc", i));
    auto loader = [&](const std::string& id) { return generate_scene(id, seed, size, size); };
    w.man = build_dataset(w.cat, ids, loader, w.root.string(), seed, 0.5);
    return w;
  }
};

RestorationConfig micro_cfg() {
  RestorationConfig c = desk_restoration_config();
  c.widths = {8, 16, 32, 16, 8};
  c.base_grid_h = 32;
  c.base_grid_w = 32;
  c.base_channels = 8;
  return c;
}

}  // namespace

TEST_CASE("psnr-y: cap, hand fixtures") {
  const Image a = const_image(16, 16, 0.3f, 0.5f, 0.7f);
  REQUIRE(psnr_y(a, a) == 99.0);

  // constant offset delta on all channels: MSE_Y = delta^2 (weights sum to 1)
  Image b = a.clone();
  for (idx i = 0; i < b.numel(); ++i) b[i] += 0.1f;
  REQUIRE(psnr_y(a, b) == Catch::Approx(20.0).margin(1e-5));

  // grayscale pair with per-pixel differences giving MSE_Y = 0.01 exactly
  Image c = const_image(16, 16, 0.4f, 0.4f, 0.4f);
  Image d = c.clone();
  for (idx i = 0; i < 3 * 256; ++i) d[i] = (i % 256 % 2 == 0) ? 0.5f : 0.3f;
  REQUIRE(psnr_y(c, d) == Catch::Approx(10.0 * std::log10(1.0 / 0.01)).margin(1e-6));
  REQUIRE(psnr_y(c, d) == Catch::Approx(20.0).margin(1e-5));

  REQUIRE_THROWS(psnr_y(a, const_image(8, 8, 0, 0, 0)));
}

TEST_CASE("ssim-y: identity, anti-correlation, per-window oracle") {
  const Image scene = generate_scene("ssim", 3, 32, 32);
  REQUIRE(ssim_y(scene, scene) == Catch::Approx(1.0).margin(1e-12));

  Image inv = scene.clone();
  for (idx i = 0; i < inv.numel(); ++i) inv[i] = 1.0f - inv[i];
  REQUIRE(ssim_y(scene, inv) < 0.5);

  // direct per-window oracle with its own gaussian and loops
  Rng rng(5);
  Image a = make_image(32, 32), b = make_image(32, 32);
  for (idx i = 0; i < a.numel(); ++i) {
    a[i] = float(rng.uniform(0, 1));
    b[i] = float(rng.uniform(0, 1));
  }
  const auto ya = luminance_y(a), yb = luminance_y(b);
  const int win = 11;
  std::vector<double> k(win * win);
  double ks = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - 5, dj = j - 5;
      k[std::size_t(i * win + j)] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      ks += k[std::size_t(i * win + j)];
    }
  for (auto& v : k) v /= ks;
  double total = 0;
  int cnt = 0;
  for (idx i = 0; i + win <= 32; ++i)
    for (idx j = 0; j + win <= 32; ++j) {
      double mx = 0, my = 0, vx = 0, vy = 0, vxy = 0;
      for (int u = 0; u < win; ++u)
        for (int v = 0; v < win; ++v) {
          const double wgt = k[std::size_t(u * win + v)];
          mx += wgt * ya[std::size_t((i + u) * 32 + j + v)];
          my += wgt * yb[std::size_t((i + u) * 32 + j + v)];
        }
      for (int u = 0; u < win; ++u)
        for (int v = 0; v < win; ++v) {
          const double wgt = k[std::size_t(u * win + v)];
          const double dx = ya[std::size_t((i + u) * 32 + j + v)] - mx;
          const double dy = yb[std::size_t((i + u) * 32 + j + v)] - my;
          vx += wgt * dx * dx;
          vy += wgt * dy * dy;
          vxy += wgt * dx * dy;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * mx * my + c1) * (2 * vxy + c2) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++cnt;
    }
  REQUIRE(ssim_y(a, b) == Catch::Approx(total / cnt).margin(1e-6));

  REQUIRE_THROWS(ssim_y(const_image(8, 8, 0, 0, 0), const_image(8, 8, 0, 0, 0)));
}

TEST_CASE("eval report: group means recomputable from the per-config table") {
  Rng rng(6);
  const Catalog cat = enumerate_configs(default_catalog());
  EvalReport rep;
  rep.mask_source = "predicted";
  for (const auto& c : cat.degraded())
    rep.per_config.push_back({c.name, split_name(c.split), c.order, rng.uniform(15, 35),
                              rng.uniform(0.3, 0.95), 4});
  REQUIRE(rep.per_config.size() == 43);

  auto mean_of = [&](const std::string& split, int order, bool ssim) {
    double acc = 0;
    int n = 0;
    for (const auto& c : rep.per_config) {
      if (!split.empty() && c.split != split) continue;
      if (order > 0 && c.order != order) continue;
      acc += ssim ? c.ssim : c.psnr;
      ++n;
    }
    return acc / n;
  };
  const auto groups = rep.groups();
  auto find_group = [&](const std::string& name) {
    for (const auto& [n, p, s] : groups)
      if (n == name) return std::make_pair(p, s);
    fail("missing group " + name);
  };
  REQUIRE(find_group("avg_seen_single").first ==
          Catch::Approx(mean_of("seen", 1, false)).margin(1e-9));
  REQUIRE(find_group("overall_seen").first == Catch::Approx(mean_of("seen", 0, false)).margin(1e-9));
  REQUIRE(find_group("avg_unseen_quad").second ==
          Catch::Approx(mean_of("unseen", 4, true)).margin(1e-9));
  REQUIRE(find_group("overall_unseen").first ==
          Catch::Approx(mean_of("unseen", 0, false)).margin(1e-9));
  REQUIRE(find_group("all_43_mean").first == Catch::Approx(mean_of("", 0, false)).margin(1e-9));

  // serialization round trip preserves the table
  EvalReport back = EvalReport::from_json(rep.to_json());
  for (std::size_t i = 0; i < rep.per_config.size(); ++i) {
    REQUIRE(back.per_config[i].name == rep.per_config[i].name);
    REQUIRE(back.per_config[i].psnr == rep.per_config[i].psnr);
  }
  REQUIRE(!rep.to_csv().empty());
  REQUIRE(!rep.to_markdown("t").empty());
  REQUIRE(order_plot_svg({{"run", rep}}).find("<svg") != std::string::npos);
}

TEST_CASE("checkpoint save/load round trip") {
  const fs::path dir = fs::temp_directory_path() / "cdrest_ckpt_test";
  fs::create_directories(dir);
  const Catalog cat = enumerate_configs(default_catalog());
  // perception
  {
    PerceptionModel<float> m(BackendKind::Tiny, 32, cat.perception_tasks(), 11);
    const std::string path = (dir / "p.ckpt").string();
    save_checkpoint(path, m.meta(cat.file_hash), m.parameters());
    PerceptionModel<float> l = load_perception<float>(path);
    REQUIRE(params_digest(l.parameters()) == params_digest(m.parameters()));
    for (idx i = 0; i < m.text_embeddings().numel(); ++i)
      REQUIRE(l.text_embeddings()[i] == m.text_embeddings()[i]);
    REQUIRE(l.prompts() == m.prompts());
  }
  // restoration, including ablation flags in the metadata
  {
    RestorationConfig cfg = micro_cfg();
    cfg.ab = ablation_from_name("no_gate");
    RestorationNet<float> net(cfg, 12);
    const std::string path = (dir / "r.ckpt").string();
    nlohmann::json meta = net.meta(cat.file_hash, "fedcba");
    meta["ablation"] = "no_gate";
    save_checkpoint(path, meta, net.parameters());
    RestorationNet<float> l = load_restoration<float>(path);
    REQUIRE(l.config().ab.no_gate);
    REQUIRE(l.config().widths == cfg.widths);
    REQUIRE(params_digest(l.parameters()) == params_digest(net.parameters()));
    REQUIRE(peek_checkpoint_meta(path).at("perception_hash") == "fedcba");
  }
  // wrong-model guards
  REQUIRE_THROWS(load_restoration<float>((dir / "p.ckpt").string()));
  REQUIRE_THROWS(load_perception<float>((dir / "r.ckpt").string()));
  fs::remove_all(dir);
}

TEST_CASE("evaluate: runs end to end, deterministic, oracle mode differs only by masks") {
  MiniWorld w = MiniWorld::build("eval", 4, 32, 5);
  PerceptionModel<float> fdpm(BackendKind::Tiny, 32, w.cat.perception_tasks(), 3);
  RestorationNet<float> net(micro_cfg(), 4);

  EvalOptions opt;
  const EvalReport a = evaluate(net, fdpm, w.cat, w.root.string(), w.man, opt);
  const EvalReport b = evaluate(net, fdpm, w.cat, w.root.string(), w.man, opt);
  REQUIRE(a.per_config.size() == 43);
  REQUIRE(a.missing_configs.empty());
  REQUIRE(a.to_json().dump() == b.to_json().dump());
  for (const auto& c : a.per_config) REQUIRE(c.n_scenes == 2);  // train_frac 0.5 of 4

  EvalOptions oracle;
  oracle.mask_source = MaskSource::Oracle;
  const EvalReport c = evaluate(net, fdpm, w.cat, w.root.string(), w.man, oracle);
  REQUIRE(c.mask_source == "oracle");
  REQUIRE(c.per_config.size() == 43);

  // identity baseline is reproducible and sane (psnr of degraded inputs)
  const EvalReport ident = evaluate_identity(w.cat, w.root.string(), w.man);
  for (const auto& cr : ident.per_config) {
    REQUIRE(cr.psnr > 5.0);
    REQUIRE(cr.psnr < 99.0);
  }
  fs::remove_all(w.root);
}

TEST_CASE("evaluate: missing configs produce a flagged partial report") {
  MiniWorld w = MiniWorld::build("partial", 2, 32, 6);
  // drop one config's entries from the manifest copy
  DatasetManifest man = w.man;
  man.entries.erase(std::remove_if(man.entries.begin(), man.entries.end(),
                                   [](const ManifestEntry& e) { return e.config == "rain"; }),
                    man.entries.end());
  PerceptionModel<float> fdpm(BackendKind::Tiny, 32, w.cat.perception_tasks(), 3);
  RestorationNet<float> net(micro_cfg(), 4);
  const EvalReport rep = evaluate(net, fdpm, w.cat, w.root.string(), man, EvalOptions{});
  REQUIRE(rep.missing_configs == std::vector<std::string>{"rain"});
  REQUIRE(rep.per_config.size() == 42);
  REQUIRE(rep.to_json()["partial"] == true);
  fs::remove_all(w.root);
}

TEST_CASE("two identical training runs produce identical eval reports") {
  MiniWorld w = MiniWorld::build("repro", 4, 32, 7);

  auto run_once = [&]() {
    PerceptionRunConfig prc;
    prc.catalog_path = default_catalog();
    prc.data_root = w.root.string();
    prc.out_dir = (w.root / "run_p").string();
    prc.d = 32;
    prc.crop = 24;
    prc.epochs = 1;
    prc.seed = 9;
    const std::string pckpt = run_train_perception<float>(prc);

    RestorationRunConfig rr;
    rr.catalog_path = default_catalog();
    rr.data_root = w.root.string();
    rr.out_dir = (w.root / "run_r").string();
    rr.perception_ckpt = pckpt;
    rr.rc = micro_cfg();
    rr.s2.epochs = 1;
    rr.s2.steps_per_epoch = 2;
    rr.s2.batch = 4;
    rr.s2.seed = 9;
    const std::string rckpt = run_train_restoration<float>(rr);

    PerceptionModel<float> fdpm = load_perception<float>(pckpt);
    RestorationNet<float> net = load_restoration<float>(rckpt);
    return evaluate(net, fdpm, w.cat, w.root.string(), w.man, EvalOptions{}).to_json().dump();
  };
  const std::string a = run_once();
  const std::string b = run_once();
  REQUIRE(a == b);
  // run.json artifacts exist
  REQUIRE(fs::exists(w.root / "run_p/run.json"));
  REQUIRE(fs::exists(w.root / "run_r/run.json"));
  REQUIRE(fs::exists(w.root / "run_r/losses.jsonl"));
  fs::remove_all(w.root);
}

TEST_CASE("stage-2 guards: missing checkpoint and frozen perception") {
  MiniWorld w = MiniWorld::build("guards", 2, 32, 8);
  RestorationRunConfig rr;
  rr.catalog_path = default_catalog();
  rr.data_root = w.root.string();
  rr.out_dir = (w.root / "r").string();
  rr.perception_ckpt = (w.root / "nope.ckpt").string();
  rr.rc = micro_cfg();
  REQUIRE_THROWS_WITH(run_train_restoration<float>(rr),
                      Catch::Matchers::ContainsSubstring("missing perception checkpoint"));
  fs::remove_all(w.root);
}
