#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace cdrest;
using namespace cdrest::testutil;
namespace fs = std::filesystem;

namespace {

std::string write_temp_catalog(const nlohmann::json& j, const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream f(p);
  f << j.dump(1);
  return p.string();
}

nlohmann::json load_default_json() {
  std::ifstream f(default_catalog());
  nlohmann::json j;
  f >> j;
  return j;
}

Image mid_gray_random(idx h, idx w, std::uint64_t seed) {
  Rng rng(seed);
  Image img = make_image(h, w);
  for (idx i = 0; i < img.numel(); ++i) img[i] = float(rng.uniform(0.25, 0.75));
  return img;
}

}  // namespace

TEST_CASE("default catalog enumerates 1+21+22 = 44 configs") {
  const Catalog cat = enumerate_configs(default_catalog());
  REQUIRE(cat.configs.size() == 44);
  REQUIRE(cat.degraded().size() == 43);
  REQUIRE(cat.with_split(Split::Clean).size() == 1);
  REQUIRE(cat.with_split(Split::Seen).size() == 21);
  REQUIRE(cat.with_split(Split::Unseen).size() == 22);
  REQUIRE(cat.perception_tasks().size() == 22);
  // per-order counts match the declared counts in the shipped file
  const nlohmann::json j = load_default_json();
  auto count = [&](Split s, int order) {
    int n = 0;
    for (const auto& c : cat.configs) n += (c.split == s && c.order == order) ? 1 : 0;
    return n;
  };
  for (const auto& [key, val] : j["declared_counts"]["seen"].items())
    REQUIRE(count(Split::Seen, std::stoi(key)) == val.get<int>());
  for (const auto& [key, val] : j["declared_counts"]["unseen"].items())
    REQUIRE(count(Split::Unseen, std::stoi(key)) == val.get<int>());
  // label bit j set iff factor j appears
  for (const auto& c : cat.configs) {
    REQUIRE(c.order == int(c.factors.size()));
    FactorMask expect;
    for (Factor f : c.factors) expect.set(f, true);
    REQUIRE(c.label == expect);
  }
}

TEST_CASE("catalog rejection paths") {
  nlohmann::json base = load_default_json();

  // clean-only catalog -> cardinality rejection
  nlohmann::json only_clean = base;
  only_clean["configs"] = nlohmann::json::array({base["configs"][0]});
  only_clean.erase("declared_counts");
  REQUIRE_THROWS_WITH(enumerate_configs(write_temp_catalog(only_clean, "cat_clean.json")),
                      Catch::Matchers::ContainsSubstring("count != 44"));

  // duplicate config name
  nlohmann::json dup = base;
  dup["configs"][2]["name"] = dup["configs"][1]["name"];
  dup.erase("declared_counts");
  REQUIRE_THROWS_WITH(enumerate_configs(write_temp_catalog(dup, "cat_dup.json")),
                      Catch::Matchers::ContainsSubstring("duplicate"));

  // declared label inconsistent with the factor list
  nlohmann::json mislabel = base;
  mislabel["configs"][1]["label"] = "01000000";  // config 1 is rain
  REQUIRE_THROWS_WITH(enumerate_configs(write_temp_catalog(mislabel, "cat_mislabel.json")),
                      Catch::Matchers::ContainsSubstring("label/spec mismatch"));

  // low-light + over-exposure must never co-occur
  nlohmann::json conflict = base;
  conflict["configs"][1]["factors"] = {"low-light", "over-exposure"};
  conflict.erase("declared_counts");
  REQUIRE_THROWS(enumerate_configs(write_temp_catalog(conflict, "cat_conflict.json")));

  // parse failure
  const fs::path bad = fs::temp_directory_path() / "cat_bad.json";
  std::ofstream(bad) << "{ not json";
  REQUIRE_THROWS_WITH(enumerate_configs(bad.string()),
                      Catch::Matchers::ContainsSubstring("parse error"));
}

TEST_CASE("zero-severity degradations are exact no-ops") {
  const Image img = mid_gray_random(16, 16, 3);
  DegradationSpec noise{Factor::Noise, {{"sigma", 0.0}}};
  const Image out = apply_degradation(img, noise, 99);
  for (idx i = 0; i < img.numel(); ++i) REQUIRE(out[i] == img[i]);
  DegradationSpec blur{Factor::Blur, {{"sigma", 0.0}}};
  const Image out2 = apply_degradation(img, blur, 99);
  for (idx i = 0; i < img.numel(); ++i) REQUIRE(out2[i] == img[i]);
}

TEST_CASE("haze on a constant image is the scattering formula") {
  Image img = make_image(8, 8);
  const float c = 0.42f;
  img.fill(c);
  const double t = 0.55, A = 0.85;
  DegradationSpec haze{Factor::Haze, {{"transmission", t}, {"airlight", A}}};
  const Image out = apply_degradation(img, haze, 0);
  const float expect = float(c * t + A * (1.0 - t));
  for (idx i = 0; i < out.numel(); ++i) REQUIRE(out[i] == Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("blur: dense-convolution oracle and sum preservation") {
  const Image img = mid_gray_random(8, 8, 7);
  DegradationSpec blur{Factor::Blur, {{"sigma", 1.0}}};
  const Image out = apply_degradation(img, blur, 0);

  // dense oracle with edge-inclusive mirror padding
  const double sigma = 1.0;
  const idx r = idx(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t(2 * r + 1));
  double ksum = 0;
  for (idx i = -r; i <= r; ++i) {
    k[std::size_t(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    ksum += k[std::size_t(i + r)];
  }
  for (auto& v : k) v /= ksum;
  auto mirror = [](idx i, idx n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  const idx H = 8, W = 8;
  double sum_in = 0, sum_out = 0;
  for (idx c = 0; c < 3; ++c)
    for (idx y = 0; y < H; ++y)
      for (idx x = 0; x < W; ++x) {
        double acc = 0;
        for (idx dy = -r; dy <= r; ++dy)
          for (idx dx = -r; dx <= r; ++dx)
            acc += k[std::size_t(dy + r)] * k[std::size_t(dx + r)] *
                   double(img[(c * H + mirror(y + dy, H)) * W + mirror(x + dx, W)]);
        REQUIRE(double(out[(c * H + y) * W + x]) == Catch::Approx(acc).margin(1e-5));
        sum_in += double(img[(c * H + y) * W + x]);
        sum_out += double(out[(c * H + y) * W + x]);
      }
  REQUIRE(sum_out == Catch::Approx(sum_in).margin(1e-4));
}

TEST_CASE("severity out of range is rejected") {
  const Image img = mid_gray_random(8, 8, 1);
  DegradationSpec bad{Factor::Haze, {{"transmission", 1.5}, {"airlight", 0.9}}};
  REQUIRE_THROWS_WITH(apply_degradation(img, bad, 0),
                      Catch::Matchers::ContainsSubstring("severity out of range"));
  DegradationSpec missing{Factor::Rain, {{"density", 0.5}}};
  REQUIRE_THROWS(apply_degradation(img, missing, 0));
}

TEST_CASE("compose: identity for clean, correct labels, deterministic") {
  const Catalog cat = enumerate_configs(default_catalog());
  const Image img = generate_scene("cs", 11, 48, 48);

  auto [clean_out, clean_label] = compose_sampled(img, cat, cat.by_name("clean"), "cs", 5);
  REQUIRE(clean_label.popcount() == 0);
  for (idx i = 0; i < img.numel(); ++i) REQUIRE(clean_out[i] == img[i]);

  auto [rh, label] = compose_sampled(img, cat, cat.by_name("rain+haze"), "cs", 5);
  REQUIRE(label.to_string() == "10100000");

  auto [a, la] = compose_sampled(img, cat, cat.by_name("rain+haze+noise"), "cs", 7);
  auto [b, lb] = compose_sampled(img, cat, cat.by_name("rain+haze+noise"), "cs", 7);
  REQUIRE(la == lb);
  for (idx i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

  // range invariant over a sweep of configs
  for (const auto& name : {"snow", "low-light", "over-exposure", "artifact",
                           "haze+low-light", "low-light+blur+noise+artifact"}) {
    auto [out, lbl] = compose_sampled(img, cat, cat.by_name(name), "cs", 13);
    REQUIRE(out.all_finite());
    for (idx i = 0; i < out.numel(); ++i) {
      REQUIRE(out[i] >= 0.0f);
      REQUIRE(out[i] <= 1.0f);
    }
  }
}

TEST_CASE("aligned views share one window and the clean view is a raw crop") {
  const Catalog cat = enumerate_configs(default_catalog());
  const auto tasks = cat.perception_tasks();
  const Image scene = generate_scene("sv", 21, 64, 64);
  const idx crop = 48;
  const auto views = aligned_views(scene, "sv", cat, tasks, crop, 77);
  REQUIRE(views.size() == 22);

  // locate the shared window from the clean view
  idx top = -1, left = -1;
  std::size_t clean_idx = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    if (tasks[k].order == 0) clean_idx = k;
  for (idx t = 0; t <= 64 - crop && top < 0; ++t)
    for (idx l = 0; l <= 64 - crop && top < 0; ++l) {
      const Image c = crop_image(scene, t, l, crop, crop);
      bool equal = true;
      for (idx i = 0; i < c.numel() && equal; ++i)
        equal = (c[i] == views[clean_idx].first[i]);
      if (equal) {
        top = t;
        left = l;
      }
    }
  REQUIRE(top >= 0);

  // every other view equals the same window cropped from its full composition
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto [full, label] = compose_sampled(scene, cat, tasks[k], "sv", 77);
    REQUIRE(label == views[k].second);
    const Image expect = crop_image(full, top, left, crop, crop);
    for (idx i = 0; i < expect.numel(); ++i) REQUIRE(expect[i] == views[k].first[i]);
  }

  // scene not larger than the crop is rejected
  REQUIRE_THROWS(aligned_views(crop_image(scene, 0, 0, 48, 48), "sv", cat, tasks, 48, 1));
}

TEST_CASE("dataset build: layout, manifest, byte-identical regeneration") {
  const Catalog cat = enumerate_configs(default_catalog());
  const fs::path root = fs::temp_directory_path() / "cdrest_ds_test";
  fs::remove_all(root);
  std::vector<std::string> ids = {"s0", "s1", "s2"};
  auto loader = [](const std::string& id) { return generate_scene(id, 31, 40, 40); };
  const DatasetManifest man = build_dataset(cat, ids, loader, root.string(), 123, 2.0 / 3.0);

  REQUIRE(man.entries.size() == 3 * 44);
  REQUIRE(man.scenes.size() == 3);
  REQUIRE(man.scenes[0].role == "train");
  REQUIRE(man.scenes[2].role == "test");
  REQUIRE(fs::exists(root / "clean/clean/s0.png"));
  REQUIRE(fs::exists(root / "seen/rain+haze/s1.png"));
  REQUIRE(fs::exists(root / "unseen/low-light+blur/s2.png"));
  REQUIRE(fs::exists(root / "manifest.json"));

  // (scene, config) pairs listed exactly once
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : man.entries) REQUIRE(pairs.insert({e.scene, e.config}).second);

  // verification passes, regeneration is byte-identical
  const DatasetManifest reloaded = load_manifest((root / "manifest.json").string());
  REQUIRE(reloaded.catalog_hash == cat.file_hash);
  REQUIRE(verify_dataset(root.string(), reloaded).empty());

  const fs::path root2 = fs::temp_directory_path() / "cdrest_ds_test2";
  fs::remove_all(root2);
  build_dataset(cat, ids, loader, root2.string(), 123, 2.0 / 3.0);
  for (const auto& e : man.entries)
    REQUIRE(sha256_file((root2 / e.file).string()) == e.sha256);

  // corruption detection
  {
    std::ofstream f(root / man.entries[5].file, std::ios::binary | std::ios::trunc);
    f << "corrupted";
  }
  const auto bad = verify_dataset(root.string(), reloaded);
  REQUIRE(bad.size() == 1);
  REQUIRE(bad[0] == man.entries[5].file);
  fs::remove_all(root);
  fs::remove_all(root2);
}

TEST_CASE("png round trip is exact at 8 bits") {
  const Image img = generate_scene("png", 5, 24, 32);
  const fs::path p = fs::temp_directory_path() / "cdrest_roundtrip.png";
  save_png(p.string(), img);
  const Image back = load_png(p.string());
  REQUIRE(back.shape() == img.shape());
  for (idx i = 0; i < img.numel(); ++i) {
    const float q = float(std::lround(std::min(1.0f, std::max(0.0f, img[i])) * 255.0f)) / 255.0f;
    REQUIRE(back[i] == Catch::Approx(q).margin(1e-7));
  }
  fs::remove(p);
}
