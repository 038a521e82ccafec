#pragma once

#include <filesystem>
#include <fstream>

#include "cdrest/synth/catalog.hpp"

namespace cdrest {

// Applies a config's factors in the canonical application order.
inline std::pair<Image, FactorMask> compose(const Image& img, const TaskConfig& cfg,
                                            const std::vector<DegradationSpec>& specs,
                                            std::uint64_t seed) {
  CR_CHECK(specs.size() == cfg.factors.size(), "compose: spec count mismatch for ", cfg.name);
  Image out = img;
  for (const auto& s : specs) out = apply_degradation(out, s, seed);
  return {out, cfg.label};
}

// Convenience overload: severities sampled from the catalog ranges.
inline std::pair<Image, FactorMask> compose_sampled(const Image& img, const Catalog& cat,
                                                    const TaskConfig& cfg,
                                                    const std::string& scene_id,
                                                    std::uint64_t seed) {
  const auto sev = cat.sample_severities(scene_id, cfg.name, seed);
  return compose(img, cfg, Catalog::specs_from_severities(cfg, sev), Rng(seed).fork(fnv1a64(scene_id)).fork(fnv1a64(cfg.name)).next_u64());
}

// Procedural clean scene: low-frequency color gradients, soft-edged shapes
// and a faint texture. Enough structure for blur/noise/streaks to be
// distinguishable and for PSNR/SSIM to move.
inline Image generate_scene(const std::string& scene_id, std::uint64_t seed, idx H, idx W) {
  Rng rng = Rng(seed).fork(fnv1a64(scene_id));
  Image img = make_image(H, W);
  // base gradients
  for (idx c = 0; c < 3; ++c) {
    const double a = rng.uniform(0, 2 * 3.141592653589793);
    const double fr = rng.uniform(0.5, 1.6);
    const double ph = rng.uniform(0, 2 * 3.141592653589793);
    const double base = rng.uniform(0.35, 0.6);
    const double amp = rng.uniform(0.08, 0.2);
    for (idx y = 0; y < H; ++y)
      for (idx x = 0; x < W; ++x) {
        const double u = (std::cos(a) * x + std::sin(a) * y) / double(std::max(H, W));
        img[(c * H + y) * W + x] = float(base + amp * std::sin(2 * 3.141592653589793 * fr * u + ph));
      }
  }
  // shapes
  const int nshapes = 6 + int(rng.uniform_int(7));
  for (int s = 0; s < nshapes; ++s) {
    const bool rect = rng.bernoulli(0.5);
    const double cx = rng.uniform(0, double(W)), cy = rng.uniform(0, double(H));
    const double rx = rng.uniform(double(W) * 0.06, double(W) * 0.25);
    const double ry = rng.uniform(double(H) * 0.06, double(H) * 0.25);
    double col[3] = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    const double edge = rng.uniform(0.8, 2.5);
    for (idx y = 0; y < H; ++y)
      for (idx x = 0; x < W; ++x) {
        double d;
        if (rect) {
          const double dx = std::abs(double(x) - cx) - rx;
          const double dy = std::abs(double(y) - cy) - ry;
          d = std::max(dx, dy);
        } else {
          const double dx = (double(x) - cx) / rx, dy = (double(y) - cy) / ry;
          d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
        }
        const double alpha = 1.0 / (1.0 + std::exp(d / edge));  // soft edge
        if (alpha < 1e-4) continue;
        for (idx c = 0; c < 3; ++c) {
          float& v = img[(c * H + y) * W + x];
          v = float((1.0 - alpha) * v + alpha * col[c]);
        }
      }
  }
  // faint texture
  const double tf = rng.uniform(6.0, 14.0), ta = rng.uniform(0.01, 0.04);
  const double tp = rng.uniform(0, 6.28);
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x) {
      const double t = ta * std::sin(tf * 6.283185307179586 * double(x) / double(W) + tp) *
                       std::sin(tf * 6.283185307179586 * double(y) / double(H));
      for (idx c = 0; c < 3; ++c) {
        float& v = img[(c * H + y) * W + x];
        v = float(std::min(0.95, std::max(0.05, double(v) + t)));
      }
    }
  return img;
}

// All configs cropped with the same random window; the window is a
// deterministic function of (scene id, seed).
inline std::vector<std::pair<Image, FactorMask>> aligned_views(
    const Image& scene, const std::string& scene_id, const Catalog& cat,
    const std::vector<TaskConfig>& configs, idx crop, std::uint64_t seed) {
  const idx H = scene.dim(1), W = scene.dim(2);
  CR_CHECK(H > crop && W > crop, "scene ", scene_id, " (", H, "x", W,
           ") must be larger than the crop ", crop);
  Rng wrng = Rng(seed).fork(fnv1a64(scene_id)).fork(fnv1a64("window"));
  const idx top = wrng.uniform_int(H - crop + 1);
  const idx left = wrng.uniform_int(W - crop + 1);
  std::vector<std::pair<Image, FactorMask>> out;
  out.reserve(configs.size());
  for (const auto& cfg : configs) {
    auto [img, label] = compose_sampled(scene, cat, cfg, scene_id, seed);
    out.push_back({crop_image(img, top, left, crop, crop), label});
  }
  return out;
}

struct ManifestEntry {
  std::string scene, config, split, file, sha256;
  std::map<std::string, std::map<std::string, double>> severity;
};

struct SceneEntry {
  std::string id, file, role;  // role: train|test
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string catalog_hash, catalog_version;
  idx scene_h = 0, scene_w = 0;
  std::vector<SceneEntry> scenes;
  std::vector<ManifestEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["catalog_hash"] = catalog_hash;
    j["catalog_version"] = catalog_version;
    j["scene_size"] = {scene_h, scene_w};
    j["scenes"] = nlohmann::json::array();
    for (const auto& s : scenes)
      j["scenes"].push_back({{"id", s.id}, {"file", s.file}, {"role", s.role}});
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"scene", e.scene},
                              {"config", e.config},
                              {"split", e.split},
                              {"file", e.file},
                              {"sha256", e.sha256},
                              {"severity", e.severity}});
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.catalog_hash = j.at("catalog_hash").get<std::string>();
    m.catalog_version = j.value("catalog_version", "");
    m.scene_h = j.at("scene_size")[0].get<idx>();
    m.scene_w = j.at("scene_size")[1].get<idx>();
    for (const auto& s : j.at("scenes"))
      m.scenes.push_back({s.at("id").get<std::string>(), s.at("file").get<std::string>(),
                          s.at("role").get<std::string>()});
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.scene = e.at("scene").get<std::string>();
      me.config = e.at("config").get<std::string>();
      me.split = e.at("split").get<std::string>();
      me.file = e.at("file").get<std::string>();
      me.sha256 = e.at("sha256").get<std::string>();
      me.severity =
          e.at("severity").get<std::map<std::string, std::map<std::string, double>>>();
      m.entries.push_back(std::move(me));
    }
    return m;
  }
};

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  CR_CHECK(f.good(), "cannot open manifest: ", path);
  nlohmann::json j;
  f >> j;
  return DatasetManifest::from_json(j);
}

// Builds root/<split>/<config>/<scene>.png for every (scene, config) pair
// plus root/manifest.json. Deterministic in (catalog, scenes, seed);
// rebuilding with the same inputs is byte-identical.
inline DatasetManifest build_dataset(const Catalog& cat, const std::vector<std::string>& scene_ids,
                                     const std::function<Image(const std::string&)>& scene_loader,
                                     const std::string& out_dir, std::uint64_t seed,
                                     double train_frac = 0.85) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DatasetManifest man;
  man.seed = seed;
  man.catalog_hash = cat.file_hash;
  man.catalog_version = cat.version;

  const idx n_train = idx(std::llround(train_frac * double(scene_ids.size())));
  for (idx i = 0; i < idx(scene_ids.size()); ++i) {
    const std::string& sid = scene_ids[std::size_t(i)];
    SceneEntry se;
    se.id = sid;
    se.role = i < n_train ? "train" : "test";
    se.file = "clean/clean/" + sid + ".png";
    man.scenes.push_back(se);
  }

  for (const auto& scene : man.scenes) {
    const Image img = scene_loader(scene.id);
    if (man.scene_h == 0) {
      man.scene_h = img.dim(1);
      man.scene_w = img.dim(2);
    }
    CR_CHECK(img.dim(1) == man.scene_h && img.dim(2) == man.scene_w,
             "scene size mismatch at ", scene.id);
    for (const auto& cfg : cat.configs) {
      ManifestEntry e;
      e.scene = scene.id;
      e.config = cfg.name;
      e.split = split_name(cfg.split);
      e.file = e.split + "/" + cfg.name + "/" + scene.id + ".png";
      e.severity = cat.sample_severities(scene.id, cfg.name, seed);
      const auto specs = Catalog::specs_from_severities(cfg, e.severity);
      const std::uint64_t pix_seed =
          Rng(seed).fork(fnv1a64(scene.id)).fork(fnv1a64(cfg.name)).next_u64();
      auto [out, label] = compose(img, cfg, specs, pix_seed);
      const fs::path p = fs::path(out_dir) / e.file;
      fs::create_directories(p.parent_path());
      save_png(p.string(), out);
      e.sha256 = sha256_file(p.string());
      man.entries.push_back(std::move(e));
    }
  }

  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << man.to_json().dump(1) << "\n";
  CR_CHECK(mf.good(), "manifest write failed");
  return man;
}

// Re-hashes every file against the manifest. Returns the list of mismatches.
inline std::vector<std::string> verify_dataset(const std::string& root,
                                               const DatasetManifest& man) {
  namespace fs = std::filesystem;
  std::vector<std::string> bad;
  for (const auto& e : man.entries) {
    const fs::path p = fs::path(root) / e.file;
    if (!fs::exists(p) || sha256_file(p.string()) != e.sha256) bad.push_back(e.file);
  }
  return bad;
}

}  // namespace cdrest
