#pragma once

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cdrest/core/hash.hpp"
#include "cdrest/synth/degrade.hpp"

namespace cdrest {

enum class Split { Clean, Seen, Unseen };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Clean: return "clean";
    case Split::Seen: return "seen";
    case Split::Unseen: return "unseen";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "clean") return Split::Clean;
  if (s == "seen") return Split::Seen;
  if (s == "unseen") return Split::Unseen;
  fail(str("unknown split tag: '", s, "'"));
}

// One degradation configuration from the catalog.
struct TaskConfig {
  std::string name;
  std::vector<Factor> factors;  // canonical order, distinct
  FactorMask label;
  Split split = Split::Clean;
  int order = 0;
};

struct SeverityRange {
  double lo = 0, hi = 0;
};

// Parsed catalog: the 44 task configurations plus per-factor severity ranges.
struct Catalog {
  std::string version;
  std::string file_hash;  // sha256 of the catalog file bytes
  std::vector<TaskConfig> configs;
  std::map<Factor, std::map<std::string, SeverityRange>> ranges;

  const TaskConfig& by_name(const std::string& n) const {
    for (const auto& c : configs)
      if (c.name == n) return c;
    fail(str("config not in catalog: '", n, "'"));
  }

  std::vector<TaskConfig> with_split(Split s) const {
    std::vector<TaskConfig> out;
    for (const auto& c : configs)
      if (c.split == s) out.push_back(c);
    return out;
  }

  std::vector<TaskConfig> degraded() const {
    std::vector<TaskConfig> out;
    for (const auto& c : configs)
      if (c.order > 0) out.push_back(c);
    return out;
  }

  // The K = 22 perception training tasks: clean + all seen, in catalog order.
  std::vector<TaskConfig> perception_tasks() const {
    std::vector<TaskConfig> out;
    for (const auto& c : configs)
      if (c.split != Split::Unseen) out.push_back(c);
    return out;
  }

  // Samples concrete severities for (scene, config); deterministic in
  // (seed, scene id, config name), keys drawn in the fixed per-factor order.
  std::map<std::string, std::map<std::string, double>> sample_severities(
      const std::string& scene_id, const std::string& config_name, std::uint64_t seed) const {
    Rng rng = Rng(seed).fork(fnv1a64(scene_id)).fork(fnv1a64(config_name));
    std::map<std::string, std::map<std::string, double>> out;
    const TaskConfig& cfg = by_name(config_name);
    for (Factor f : cfg.factors) {
      auto& dst = out[factor_name(f)];
      const auto& fr = ranges.at(f);
      for (const auto& key : factor_param_keys(f)) {
        const auto& r = fr.at(key);
        dst[key] = rng.uniform(r.lo, r.hi);
      }
    }
    return out;
  }

  static std::vector<DegradationSpec> specs_from_severities(
      const TaskConfig& cfg, const std::map<std::string, std::map<std::string, double>>& sev) {
    std::vector<DegradationSpec> specs;
    for (Factor f : cfg.factors) {
      DegradationSpec s;
      s.factor = f;
      const auto it = sev.find(factor_name(f));
      CR_CHECK(it != sev.end(), "severity missing for factor ", factor_name(f));
      for (const auto& [k, v] : it->second) s.params[k] = v;
      specs.push_back(std::move(s));
    }
    return specs;
  }
};

// Parses and validates the catalog file. Every constraint the benchmark
// relies on is enforced here so a bad file is rejected up front.
inline Catalog enumerate_configs(const std::string& path) {
  std::ifstream f(path);
  CR_CHECK(f.good(), "cannot open catalog: ", path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    fail(str("catalog parse error: ", e.what()));
  }

  Catalog cat;
  cat.version = j.value("version", "");
  cat.file_hash = sha256_file(path);

  CR_CHECK(j.contains("factors") && j["factors"].is_array(), "catalog: missing factors list");
  std::vector<std::string> fl = j["factors"].get<std::vector<std::string>>();
  CR_CHECK(fl.size() == kNumFactors, "catalog: factor list must have 8 entries");
  for (int i = 0; i < kNumFactors; ++i)
    CR_CHECK(fl[std::size_t(i)] == factor_names()[std::size_t(i)],
             "catalog: factor list must be canonical; got '", fl[std::size_t(i)], "' at ", i);

  CR_CHECK(j.contains("severity_ranges"), "catalog: missing severity_ranges");
  for (int i = 0; i < kNumFactors; ++i) {
    const Factor fa = Factor(i);
    const std::string& fn = factor_name(fa);
    CR_CHECK(j["severity_ranges"].contains(fn), "catalog: no severity range for ", fn);
    for (const auto& key : factor_param_keys(fa)) {
      CR_CHECK(j["severity_ranges"][fn].contains(key), "catalog: ", fn, " missing range for ", key);
      const auto arr = j["severity_ranges"][fn][key];
      CR_CHECK(arr.is_array() && arr.size() == 2, "catalog: range for ", fn, ".", key,
               " must be [lo,hi]");
      SeverityRange r{arr[0].get<double>(), arr[1].get<double>()};
      const auto [blo, bhi] = factor_param_bounds(fa, key);
      CR_CHECK(r.lo <= r.hi && r.lo >= blo && r.hi <= bhi, "catalog: range for ", fn, ".", key,
               " outside valid bounds");
      cat.ranges[fa][key] = r;
    }
  }

  CR_CHECK(j.contains("configs") && j["configs"].is_array(), "catalog: missing configs");
  std::set<std::string> names;
  std::set<std::string> label_keys;
  int n_clean = 0, n_seen = 0, n_unseen = 0;
  for (const auto& cj : j["configs"]) {
    TaskConfig c;
    c.name = cj.at("name").get<std::string>();
    CR_CHECK(names.insert(c.name).second, "catalog: duplicate config name '", c.name, "'");
    c.split = split_from_name(cj.at("split").get<std::string>());
    for (const auto& fs : cj.at("factors")) {
      const Factor fa = factor_from_name(fs.get<std::string>());
      CR_CHECK(!c.label.get(fa), "catalog: repeated factor in '", c.name, "'");
      c.label.set(fa, true);
    }
    // factors kept in canonical order regardless of file order
    for (int i = 0; i < kNumFactors; ++i)
      if (c.label.get(i)) c.factors.push_back(Factor(i));
    c.order = c.label.popcount();
    CR_CHECK(!(c.label.get(Factor::LowLight) && c.label.get(Factor::OverExposure)),
             "catalog: low-light and over-exposure co-occur in '", c.name, "'");
    CR_CHECK(label_keys.insert(c.label.to_string()).second,
             "catalog: duplicate factor combination in '", c.name, "'");
    if (cj.contains("label")) {
      const FactorMask declared = FactorMask::from_string(cj["label"].get<std::string>());
      CR_CHECK(declared == c.label, "catalog: label/spec mismatch in '", c.name, "'");
    }
    switch (c.split) {
      case Split::Clean:
        CR_CHECK(c.order == 0, "catalog: clean config must have no factors");
        ++n_clean;
        break;
      case Split::Seen:
        CR_CHECK(c.order >= 1 && c.order <= 3, "catalog: seen order out of {1,2,3} in '", c.name,
                 "'");
        ++n_seen;
        break;
      case Split::Unseen:
        CR_CHECK(c.order >= 2 && c.order <= 4, "catalog: unseen order out of {2,3,4} in '",
                 c.name, "'");
        ++n_unseen;
        break;
    }
    cat.configs.push_back(std::move(c));
  }

  CR_CHECK(cat.configs.size() == 44, "catalog rejected: count != 44 (got ",
           cat.configs.size(), ")");
  CR_CHECK(n_clean == 1, "catalog rejected: clean count != 1");
  CR_CHECK(n_seen == 21, "catalog rejected: seen count != 21 (got ", n_seen, ")");
  CR_CHECK(n_unseen == 22, "catalog rejected: unseen count != 22 (got ", n_unseen, ")");

  // all 8 singles must be seen
  for (int i = 0; i < kNumFactors; ++i) {
    FactorMask single;
    single.set(i, true);
    bool found = false;
    for (const auto& c : cat.configs)
      if (c.label == single && c.split == Split::Seen) found = true;
    CR_CHECK(found, "catalog rejected: single '", factor_names()[std::size_t(i)],
             "' missing from seen split");
  }

  // unseen split anchors: low-light+blur and low-light+artifact pairs plus
  // higher-order extensions of each, and at least one quad
  auto contains_pair = [&](Factor a, Factor b, int min_order, int max_order) {
    for (const auto& c : cat.configs)
      if (c.split == Split::Unseen && c.label.get(a) && c.label.get(b) && c.order >= min_order &&
          c.order <= max_order)
        return true;
    return false;
  };
  CR_CHECK(contains_pair(Factor::LowLight, Factor::Blur, 2, 2),
           "catalog rejected: unseen low-light+blur pair missing");
  CR_CHECK(contains_pair(Factor::LowLight, Factor::Artifact, 2, 2),
           "catalog rejected: unseen low-light+artifact pair missing");
  CR_CHECK(contains_pair(Factor::LowLight, Factor::Blur, 3, 4),
           "catalog rejected: no higher-order extension of low-light+blur");
  CR_CHECK(contains_pair(Factor::LowLight, Factor::Artifact, 3, 4),
           "catalog rejected: no higher-order extension of low-light+artifact");
  bool has_quad = false;
  for (const auto& c : cat.configs) has_quad |= (c.split == Split::Unseen && c.order == 4);
  CR_CHECK(has_quad, "catalog rejected: no unseen quad configuration");

  // optional declared per-order counts must match the enumerated ones
  if (j.contains("declared_counts")) {
    const auto& dc = j["declared_counts"];
    auto count = [&](Split s, int order) {
      int n = 0;
      for (const auto& c : cat.configs) n += (c.split == s && c.order == order) ? 1 : 0;
      return n;
    };
    CR_CHECK(dc.at("clean").get<int>() == 1, "catalog rejected: declared clean count mismatch");
    for (const auto& [key, val] : dc.at("seen").items())
      CR_CHECK(count(Split::Seen, std::stoi(key)) == val.get<int>(),
               "catalog rejected: declared seen order-", key, " count mismatch");
    for (const auto& [key, val] : dc.at("unseen").items())
      CR_CHECK(count(Split::Unseen, std::stoi(key)) == val.get<int>(),
               "catalog rejected: declared unseen order-", key, " count mismatch");
  }

  return cat;
}

}  // namespace cdrest
