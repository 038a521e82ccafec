#pragma once

#include <functional>
#include <iomanip>

#include "cdrest/harness/metrics.hpp"
#include "cdrest/restoration/net.hpp"
#include "cdrest/perception/model.hpp"
#include "cdrest/synth/dataset.hpp"

namespace cdrest {

struct ConfigResult {
  std::string name;
  std::string split;  // seen|unseen
  int order = 0;
  double psnr = 0, ssim = 0;
  int n_scenes = 0;
};

// Table-shaped evaluation report: per-config metrics plus the grouped
// averages (group mean = arithmetic mean over member configs).
struct EvalReport {
  std::vector<ConfigResult> per_config;
  std::vector<std::string> missing_configs;  // non-empty marks a partial report
  std::string mask_source;                   // predicted|oracle

  double group_mean(const std::function<bool(const ConfigResult&)>& pred, bool ssim = false,
                    int* n_out = nullptr) const {
    double acc = 0;
    int n = 0;
    for (const auto& c : per_config)
      if (pred(c)) {
        acc += ssim ? c.ssim : c.psnr;
        ++n;
      }
    if (n_out) *n_out = n;
    return n > 0 ? acc / n : 0.0;
  }

  // Group rows in table order.
  std::vector<std::tuple<std::string, double, double>> groups() const {
    auto seen = [](int order) {
      return [order](const ConfigResult& c) {
        return c.split == "seen" && (order == 0 || c.order == order);
      };
    };
    auto unseen = [](int order) {
      return [order](const ConfigResult& c) {
        return c.split == "unseen" && (order == 0 || c.order == order);
      };
    };
    auto all = [](const ConfigResult&) { return true; };
    auto quad = [](const ConfigResult& c) { return c.order == 4; };
    std::vector<std::tuple<std::string, double, double>> rows;
    auto push = [&](const std::string& name, const std::function<bool(const ConfigResult&)>& p) {
      rows.push_back({name, group_mean(p, false), group_mean(p, true)});
    };
    push("avg_seen_single", seen(1));
    push("avg_seen_double", seen(2));
    push("avg_seen_triple", seen(3));
    push("overall_seen", seen(0));
    push("avg_unseen_double", unseen(2));
    push("avg_unseen_triple", unseen(3));
    push("avg_unseen_quad", unseen(4));
    push("overall_unseen", unseen(0));
    push("all_43_mean", all);
    push("quad_subset_mean", quad);
    return rows;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mask_source"] = mask_source;
    j["partial"] = !missing_configs.empty();
    j["missing_configs"] = missing_configs;
    j["per_config"] = nlohmann::json::array();
    for (const auto& c : per_config)
      j["per_config"].push_back({{"name", c.name},
                                 {"split", c.split},
                                 {"order", c.order},
                                 {"psnr", c.psnr},
                                 {"ssim", c.ssim},
                                 {"n_scenes", c.n_scenes}});
    j["groups"] = nlohmann::json::object();
    for (const auto& [name, p, s] : groups()) j["groups"][name] = {{"psnr", p}, {"ssim", s}};
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.mask_source = j.value("mask_source", "");
    for (const auto& m : j.value("missing_configs", nlohmann::json::array()))
      r.missing_configs.push_back(m.get<std::string>());
    for (const auto& c : j.at("per_config"))
      r.per_config.push_back({c.at("name").get<std::string>(), c.at("split").get<std::string>(),
                              c.at("order").get<int>(), c.at("psnr").get<double>(),
                              c.at("ssim").get<double>(), c.at("n_scenes").get<int>()});
    return r;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(12);
    os << "row,name,split,order,psnr,ssim,n\n";
    for (const auto& c : per_config)
      os << "config," << c.name << "," << c.split << "," << c.order << "," << c.psnr << ","
         << c.ssim << "," << c.n_scenes << "\n";
    for (const auto& [name, p, s] : groups()) os << "group," << name << ",,," << p << "," << s << ",\n";
    return os.str();
  }

  std::string to_markdown(const std::string& title) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "### " << title << "\n\n";
    os << "| Setting | PSNR | SSIM |\n|---|---|---|\n";
    for (const auto& [name, p, s] : groups()) os << "| " << name << " | " << p << " | " << s << " |\n";
    return os.str();
  }
};

template <typename T>
using PerceiveFn = std::function<std::pair<FactorMask, Tensor<T>>(const Image&)>;

template <typename T>
PerceiveFn<T> perceive_with_model(const PerceptionModel<T>& model) {
  return [&model](const Image& img) {
    auto out = model.infer(img);
    return std::make_pair(out.mask, out.embedding);
  };
}

enum class MaskSource { Predicted, Oracle };

struct EvalOptions {
  MaskSource mask_source = MaskSource::Predicted;
  bool soft_mask = false;  // feed sigmoid probabilities (predicted mode only)
  idx batch = 8;
};

// Runs the restoration model over every degraded config on the test-role
// scenes and aggregates PSNR-Y/SSIM-Y per config. Oracle mode swaps only the
// mask for the ground-truth one; the semantic embedding stays predicted.
template <typename T>
EvalReport evaluate(const RestorationNet<T>& net, const PerceptionModel<T>& fdpm,
                    const Catalog& cat, const std::string& root, const DatasetManifest& man,
                    const EvalOptions& opt = {}) {
  NoGrad ng;
  EvalReport rep;
  rep.mask_source = opt.mask_source == MaskSource::Oracle ? "oracle" : "predicted";

  std::vector<std::string> test_scenes;
  for (const auto& s : man.scenes)
    if (s.role == "test") test_scenes.push_back(s.id);
  CR_CHECK(!test_scenes.empty(), "evaluate: no test-role scenes in the manifest");

  std::map<std::string, std::map<std::string, std::string>> files;  // config -> scene -> file
  for (const auto& e : man.entries) files[e.config][e.scene] = e.file;

  std::map<std::string, Image> cleans;
  for (const auto& sid : test_scenes)
    cleans[sid] = load_png(str(root, "/", files.at("clean").at(sid)));

  for (const auto& cfg : cat.degraded()) {
    auto fit = files.find(cfg.name);
    if (fit == files.end()) {
      rep.missing_configs.push_back(cfg.name);
      continue;
    }
    ConfigResult cr;
    cr.name = cfg.name;
    cr.split = split_name(cfg.split);
    cr.order = cfg.order;
    for (std::size_t s0 = 0; s0 < test_scenes.size(); s0 += std::size_t(opt.batch)) {
      const std::size_t s1 = std::min(test_scenes.size(), s0 + std::size_t(opt.batch));
      std::vector<Image> degraded;
      Tensor<T> mask({idx(s1 - s0), idx(kNumFactors)});
      Tensor<T> p({idx(s1 - s0), net.config().d});
      for (std::size_t k = s0; k < s1; ++k) {
        auto mit = fit->second.find(test_scenes[k]);
        CR_CHECK(mit != fit->second.end(), "evaluate: missing file for ", cfg.name, "/",
                 test_scenes[k]);
        Image img = load_png(str(root, "/", mit->second));
        auto out = fdpm.infer(img);
        const idx n = idx(k - s0);
        if (opt.mask_source == MaskSource::Oracle) {
          for (int b = 0; b < kNumFactors; ++b)
            mask[n * kNumFactors + b] = cfg.label.get(b) ? T(1) : T(0);
        } else if (opt.soft_mask) {
          for (int b = 0; b < kNumFactors; ++b)
            mask[n * kNumFactors + b] = T(1) / (T(1) + std::exp(-out.logits[b]));
        } else {
          for (int b = 0; b < kNumFactors; ++b)
            mask[n * kNumFactors + b] = out.mask.get(b) ? T(1) : T(0);
        }
        for (idx i = 0; i < net.config().d; ++i) p[n * net.config().d + i] = out.embedding[i];
        degraded.push_back(std::move(img));
      }
      Var<T> x = constant(stack_images<T>(degraded));
      auto out = net.restore(x, mask, constant(p));
      Var<T> y = clamp01_eval(out.y);
      const idx H = y.shape()[2], W = y.shape()[3];
      for (std::size_t k = s0; k < s1; ++k) {
        const idx n = idx(k - s0);
        Image rest = make_image(H, W);
        for (idx i = 0; i < 3 * H * W; ++i) rest[i] = float(y.val()[n * 3 * H * W + i]);
        cr.psnr += psnr_y(rest, cleans.at(test_scenes[k]));
        cr.ssim += ssim_y(rest, cleans.at(test_scenes[k]));
        ++cr.n_scenes;
      }
    }
    cr.psnr /= double(cr.n_scenes);
    cr.ssim /= double(cr.n_scenes);
    rep.per_config.push_back(cr);
  }
  return rep;
}

// PSNR of the raw degraded inputs against clean, per the same grouping
// (baseline for the improvement checks).
inline EvalReport evaluate_identity(const Catalog& cat, const std::string& root,
                                    const DatasetManifest& man) {
  EvalReport rep;
  rep.mask_source = "identity";
  std::vector<std::string> test_scenes;
  for (const auto& s : man.scenes)
    if (s.role == "test") test_scenes.push_back(s.id);
  std::map<std::string, std::map<std::string, std::string>> files;
  for (const auto& e : man.entries) files[e.config][e.scene] = e.file;
  std::map<std::string, Image> cleans;
  for (const auto& sid : test_scenes)
    cleans[sid] = load_png(str(root, "/", files.at("clean").at(sid)));
  for (const auto& cfg : cat.degraded()) {
    ConfigResult cr;
    cr.name = cfg.name;
    cr.split = split_name(cfg.split);
    cr.order = cfg.order;
    for (const auto& sid : test_scenes) {
      Image img = load_png(str(root, "/", files.at(cfg.name).at(sid)));
      cr.psnr += psnr_y(img, cleans.at(sid));
      cr.ssim += ssim_y(img, cleans.at(sid));
      ++cr.n_scenes;
    }
    cr.psnr /= double(cr.n_scenes);
    cr.ssim /= double(cr.n_scenes);
    rep.per_config.push_back(cr);
  }
  return rep;
}

// PSNR-vs-degradation-order line plot (seen and unseen series) as a small
// standalone SVG.
inline std::string order_plot_svg(const std::vector<std::pair<std::string, EvalReport>>& reports) {
  const double Wd = 560, Hd = 360, mL = 60, mB = 44, mT = 28, mR = 16;
  std::ostringstream os;
  double lo = 1e9, hi = -1e9;
  struct Series {
    std::string label;
    std::vector<std::pair<int, double>> pts;
  };
  std::vector<Series> series;
  for (const auto& [name, rep] : reports) {
    for (const std::string split : {"seen", "unseen"}) {
      Series s;
      s.label = name + " (" + split + ")";
      for (int order = 1; order <= 4; ++order) {
        int n = 0;
        const double v = rep.group_mean(
            [&](const ConfigResult& c) { return c.split == split && c.order == order; }, false,
            &n);
        if (n > 0) {
          s.pts.push_back({order, v});
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      if (!s.pts.empty()) series.push_back(std::move(s));
    }
  }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  const double pad = std::max(0.5, (hi - lo) * 0.1);
  lo -= pad;
  hi += pad;
  auto X = [&](double order) { return mL + (order - 1) / 3.0 * (Wd - mL - mR); };
  auto Y = [&](double v) { return Hd - mB - (v - lo) / (hi - lo) * (Hd - mB - mT); };
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << Wd << "' height='" << Hd << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<line x1='" << mL << "' y1='" << Hd - mB << "' x2='" << Wd - mR << "' y2='" << Hd - mB
     << "' stroke='black'/>\n";
  os << "<line x1='" << mL << "' y1='" << mT << "' x2='" << mL << "' y2='" << Hd - mB
     << "' stroke='black'/>\n";
  for (int o = 1; o <= 4; ++o)
    os << "<text x='" << X(o) << "' y='" << Hd - mB + 18
       << "' font-size='12' text-anchor='middle'>" << o << "</text>\n";
  os << "<text x='" << (mL + Wd - mR) / 2 << "' y='" << Hd - 8
     << "' font-size='13' text-anchor='middle'>degradation order</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<text x='" << mL - 8 << "' y='" << Y(v) + 4
       << "' font-size='11' text-anchor='end'>" << std::fixed << std::setprecision(1) << v
       << "</text>\n";
  }
  os << "<text x='14' y='" << (mT + Hd - mB) / 2
     << "' font-size='13' text-anchor='middle' transform='rotate(-90 14 "
     << (mT + Hd - mB) / 2 << ")'>PSNR-Y (dB)</text>\n";
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#e377c2"};
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* col = colors[si % 8];
    std::ostringstream pts;
    for (const auto& [o, v] : series[si].pts) pts << X(o) << "," << Y(v) << " ";
    os << "<polyline fill='none' stroke='" << col << "' stroke-width='2' points='" << pts.str()
       << "'/>\n";
    for (const auto& [o, v] : series[si].pts)
      os << "<circle cx='" << X(o) << "' cy='" << Y(v) << "' r='3' fill='" << col << "'/>\n";
    os << "<text x='" << Wd - mR - 4 << "' y='" << mT + 16 * double(si + 1)
       << "' font-size='11' text-anchor='end' fill='" << col << "'>" << series[si].label
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Side-by-side comparison of several reports, table-shaped (CSV + Markdown).
inline std::pair<std::string, std::string> comparison_tables(
    const std::vector<std::pair<std::string, EvalReport>>& reports) {
  std::ostringstream csv, md;
  csv << std::setprecision(10);
  md << std::fixed << std::setprecision(4);
  csv << "setting";
  md << "| Setting |";
  for (const auto& [name, rep] : reports) {
    csv << "," << name << "_psnr," << name << "_ssim";
    md << " " << name << " PSNR | " << name << " SSIM |";
  }
  csv << "\n";
  md << "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i) md << "---|---|";
  md << "\n";
  if (!reports.empty()) {
    const auto rows = reports[0].second.groups();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      csv << std::get<0>(rows[r]);
      md << "| " << std::get<0>(rows[r]) << " |";
      for (const auto& [name, rep] : reports) {
        const auto g = rep.groups();
        csv << "," << std::get<1>(g[r]) << "," << std::get<2>(g[r]);
        md << " " << std::get<1>(g[r]) << " | " << std::get<2>(g[r]) << " |";
      }
      csv << "\n";
      md << "\n";
    }
  }
  return {csv.str(), md.str()};
}

}  // namespace cdrest
