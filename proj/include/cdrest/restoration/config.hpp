#pragma once

#include <vector>

#include "cdrest/core/common.hpp"

namespace cdrest {

// Architecture/training switches for the ablation study. Flags marked (loss)
// are consumed by the training harness, the rest by model construction.
struct AblationFlags {
  bool no_semantic_embedding = false;  // zero the semantic embedding p
  bool no_global_token = false;        // drop u_g from the key set
  bool no_strict_masking = false;      // soft attention bias instead of hard mask
  bool soft_mask = false;              // feed sigmoid probabilities, not binarized m
  bool no_semantic_token = false;      // drop u_p from the key set
  bool no_stagewise = false;           // broadcast g_1 to all stages
  bool no_freq_branch = false;
  bool no_gate = false;                // fixed w = 0.5
  bool shared_moe = false;             // single undecoupled expert pool, mask ignored
  bool no_decouple_gate = false;       // one gate over all 8 experts, masked jointly
  bool no_spatial_router = false;      // R_j == 1
  bool no_dc_correction = false;
  bool no_dual_branch = false;         // y = y_res
  bool no_freq_loss = false;           // (loss) lambda_f = 0
  bool no_mask_overload = false;       // (loss) disable overload augmentation
  bool no_base_loss = false;           // (loss) lambda_p = 0
};

inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names = {
      "no_semantic_embedding", "no_global_token", "no_strict_masking", "soft_mask",
      "no_semantic_token",     "no_stagewise",    "no_freq_branch",    "no_gate",
      "shared_moe",            "no_decouple_gate", "no_spatial_router", "no_dc_correction",
      "no_dual_branch",        "no_freq_loss",    "no_mask_overload",  "no_base_loss"};
  return names;
}

inline AblationFlags ablation_from_name(const std::string& name) {
  AblationFlags f;
  if (name == "full" || name.empty()) return f;
  if (name == "no_semantic_embedding") f.no_semantic_embedding = true;
  else if (name == "no_global_token") f.no_global_token = true;
  else if (name == "no_strict_masking") f.no_strict_masking = true;
  else if (name == "soft_mask") f.soft_mask = true;
  else if (name == "no_semantic_token") f.no_semantic_token = true;
  else if (name == "no_stagewise") f.no_stagewise = true;
  else if (name == "no_freq_branch") f.no_freq_branch = true;
  else if (name == "no_gate") f.no_gate = true;
  else if (name == "shared_moe") f.shared_moe = true;
  else if (name == "no_decouple_gate") f.no_decouple_gate = true;
  else if (name == "no_spatial_router") f.no_spatial_router = true;
  else if (name == "no_dc_correction") f.no_dc_correction = true;
  else if (name == "no_dual_branch") f.no_dual_branch = true;
  else if (name == "no_freq_loss") f.no_freq_loss = true;
  else if (name == "no_mask_overload") f.no_mask_overload = true;
  else if (name == "no_base_loss") f.no_base_loss = true;
  else fail(str("unknown ablation variant: '", name, "'"));
  return f;
}

struct RestorationConfig {
  std::vector<idx> widths = {24, 48, 96, 48, 24};  // 5-stage U shape
  idx blocks_per_stage = 2;
  idx window = 8;
  int spatial_heads = 2;
  int cond_heads = 4;
  idx e = 256;   // conditioning width
  idx d = 128;   // semantic embedding width
  idx freq_experts = 2;
  idx freq_rank = 4;
  idx base_grid_h = 64, base_grid_w = 64;  // spectral factor base grid (full res)
  idx base_channels = 16;                  // low-frequency branch CNN width
  AblationFlags ab;
};

inline RestorationConfig desk_restoration_config() {
  RestorationConfig c;
  c.widths = {12, 24, 48, 24, 12};
  c.blocks_per_stage = 1;
  return c;
}

}  // namespace cdrest
