#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bafpn/galm.hpp"
#include "bafpn/params.hpp"
#include "bafpn/rng.hpp"
#include "bafpn/seam.hpp"
#include "bafpn/spam.hpp"

namespace bafpn {

struct ExperimentConfig {
  int base_hw = 64;
  int batch = 2;
  double shift_dy = 0.0;
  double shift_dx = 2.0;
  double warp_amp = 0.0;
  int steps = 200;
  double lr = 1e-3;
  std::string optimizer = "adam";
};

struct NeckConfig {
  int levels = 2;
  std::vector<std::int64_t> in_channels;
  std::int64_t out_channels = 256;
  std::int64_t galm_groups = 4;
  int attn_kernel = 7;
  int attn_reduction = 16;
  std::string variant = "bafpn";  // bafpn | bafpn_r | fpn
  std::string upsample = "nearest";
  bool output_convs = true;
  std::string dtype = "float32";
  std::uint64_t seed = 0;
  ExperimentConfig experiment;
};

inline void validate_neck_config(const NeckConfig& cfg) {
  if (cfg.levels < 2 || cfg.levels > 5) {
    throw ConfigError("levels: expected 2..5, got " + std::to_string(cfg.levels));
  }
  if (static_cast<int>(cfg.in_channels.size()) != cfg.levels) {
    throw ConfigError("in_channels: expected " + std::to_string(cfg.levels) + " entries, got " +
                      std::to_string(cfg.in_channels.size()));
  }
  if (cfg.out_channels < 1) throw ConfigError("out_channels: must be positive");
  if (cfg.galm_groups < 1) throw ConfigError("galm_groups: must be positive");
  for (int i = 0; i < cfg.levels; ++i) {
    if (cfg.in_channels[i] < 1) {
      throw ConfigError("in_channels: level " + std::to_string(i + 1) + " must be positive");
    }
    if (cfg.in_channels[i] % cfg.galm_groups != 0) {
      throw ConfigError("galm_groups: " + std::to_string(cfg.in_channels[i]) +
                        " channels at level " + std::to_string(i + 1) + " not divisible by " +
                        std::to_string(cfg.galm_groups));
    }
  }
  if (cfg.attn_kernel < 1 || cfg.attn_kernel % 2 == 0) {
    throw ConfigError("attn_kernel: must be odd and positive, got " + std::to_string(cfg.attn_kernel));
  }
  if (cfg.attn_reduction < 1) throw ConfigError("attn_reduction: must be positive");
  if (cfg.variant != "bafpn" && cfg.variant != "bafpn_r" && cfg.variant != "fpn") {
    throw ConfigError("variant: '" + cfg.variant + "' not one of bafpn, bafpn_r, fpn");
  }
  if (cfg.upsample != "nearest" && cfg.upsample != "bilinear") {
    throw ConfigError("upsample: '" + cfg.upsample + "' not one of nearest, bilinear");
  }
  if (cfg.dtype != "float32" && cfg.dtype != "float64") {
    throw ConfigError("dtype: '" + cfg.dtype + "' not one of float32, float64");
  }
}

inline std::int64_t attn_hidden(std::int64_t channels, int reduction) {
  return std::max<std::int64_t>(channels / reduction, 8);
}

template <typename T>
struct Neck {
  NeckConfig cfg;
  std::vector<GalmParams<T>> galm;                  // per level (bafpn variants)
  std::vector<SpamParams<T>> spam;                  // per level boundary
  std::vector<SeamParams<T>> seam;                  // per level boundary
  std::vector<std::array<Tensor<T>, 2>> lateral;    // fpn variant 1x1 convs
  std::vector<std::array<Tensor<T>, 2>> out_conv;   // optional per-level 3x3
  ParamRegistry<T> params;
};

namespace detail {

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from_vector(shape, std::move(v));
}

}  // namespace detail

// Deterministic construction: parameters are created (and the seed consumed)
// in a fixed order. The offset/mask head's final conv and all SEAM weights
// start at zero so a fresh neck's forward is the plain additive baseline with
// half-gain deformable alignment; GALM starts as the group average of its
// shared 1x1 kernel.
template <typename T>
Neck<T> build_neck(const NeckConfig& cfg) {
  validate_neck_config(cfg);
  Neck<T> neck;
  neck.cfg = cfg;
  Rng rng(cfg.seed);
  const std::int64_t C = cfg.out_channels;
  const std::int64_t L = cfg.levels;

  auto reg_kaiming = [&](const std::string& name, const Shape& shape, std::int64_t fan_in) {
    return neck.params.add(name, detail::kaiming_uniform<T>(shape, fan_in, rng), "kaiming_uniform");
  };
  auto reg_zeros = [&](const std::string& name, const Shape& shape) {
    return neck.params.add(name, Tensor<T>::zeros(shape), "zeros");
  };

  const bool has_galm = cfg.variant != "fpn";
  for (std::int64_t i = 1; i <= L; ++i) {
    const std::string lv = std::to_string(i);
    const std::int64_t cin = cfg.in_channels[i - 1];
    if (has_galm) {
      const std::int64_t g = cfg.galm_groups;
      GalmParams<T> p;
      p.groups = g;
      p.shared_w = reg_kaiming("galm." + lv + ".shared_w", {C, cin / g, 1, 1}, cin / g);
      p.shared_b = reg_zeros("galm." + lv + ".shared_b", {C});
      // identity mix: out channel s averages the s-th semantic group
      std::vector<T> mix(static_cast<std::size_t>(C * g * C), T(0));
      for (std::int64_t s = 0; s < C; ++s) {
        for (std::int64_t j = 0; j < g; ++j) mix[(s * g + j) * C + s] = T(1) / static_cast<T>(g);
      }
      p.mix_w = neck.params.add("galm." + lv + ".mix_w",
                                Tensor<T>::from_vector({C, g, C}, std::move(mix)), "identity_mix");
      neck.galm.push_back(p);
    } else {
      auto w = reg_kaiming("lateral." + lv + ".w", {C, cin, 1, 1}, cin);
      auto b = reg_zeros("lateral." + lv + ".b", {C});
      neck.lateral.push_back({w, b});
    }
  }

  if (has_galm) {
    for (std::int64_t i = 1; i < L; ++i) {
      const std::string lv = std::to_string(i);
      SpamParams<T> p;
      const int k = cfg.attn_kernel;
      const std::int64_t c4 = 4 * C;
      const std::int64_t hid = attn_hidden(c4, cfg.attn_reduction);
      p.stdds.sa_kernel = k;
      p.stdds.sa_w = reg_kaiming("spam." + lv + ".stdds.sa_w", {1, 2, k, k}, 2 * k * k);
      p.stdds.sa_b = reg_zeros("spam." + lv + ".stdds.sa_b", {1});
      p.stdds.ca_w1 = reg_kaiming("spam." + lv + ".stdds.ca_w1", {hid, c4, 1, 1}, c4);
      p.stdds.ca_b1 = reg_zeros("spam." + lv + ".stdds.ca_b1", {hid});
      p.stdds.ca_w2 = reg_kaiming("spam." + lv + ".stdds.ca_w2", {c4, hid, 1, 1}, hid);
      p.stdds.ca_b2 = reg_zeros("spam." + lv + ".stdds.ca_b2", {c4});
      p.stdds.compress_w = reg_kaiming("spam." + lv + ".stdds.compress_w", {C, c4, 1, 1}, c4);
      p.stdds.compress_b = reg_zeros("spam." + lv + ".stdds.compress_b", {C});
      p.om1_w = reg_kaiming("spam." + lv + ".om1_w", {C, 2 * C, 1, 1}, 2 * C);
      p.om1_b = reg_zeros("spam." + lv + ".om1_b", {C});
      p.om2_w = reg_zeros("spam." + lv + ".om2_w", {27, C, 3, 3});
      p.om2_b = reg_zeros("spam." + lv + ".om2_b", {27});
      p.dcn_w = reg_kaiming("spam." + lv + ".dcn_w", {C, C, 3, 3}, C * 9);
      p.dcn_b = reg_zeros("spam." + lv + ".dcn_b", {C});
      neck.spam.push_back(p);
    }

    const std::int64_t se_hid = attn_hidden(C, cfg.attn_reduction);
    for (std::int64_t i = 1; i < L; ++i) {
      const std::string lv = std::to_string(i);
      SeamParams<T> p;
      p.se_w1 = reg_zeros("seam." + lv + ".se_w1", {se_hid, C, 1, 1});
      p.se_b1 = reg_zeros("seam." + lv + ".se_b1", {se_hid});
      p.se_w2 = reg_zeros("seam." + lv + ".se_w2", {C, se_hid, 1, 1});
      p.se_b2 = reg_zeros("seam." + lv + ".se_b2", {C});
      p.agg_w = reg_zeros("seam." + lv + ".agg_w", {C, 1, 2, 2});
      p.agg_b = reg_zeros("seam." + lv + ".agg_b", {C});
      p.pix_w = reg_zeros("seam." + lv + ".pix_w", {C, 2, 7, 7});
      p.pix_b = reg_zeros("seam." + lv + ".pix_b", {C});
      p.kappa = reg_zeros("seam." + lv + ".kappa", {1});
      neck.seam.push_back(p);
    }
  }

  if (cfg.output_convs) {
    for (std::int64_t i = 1; i <= L; ++i) {
      const std::string lv = std::to_string(i);
      auto w = reg_kaiming("out." + lv + ".w", {C, C, 3, 3}, C * 9);
      auto b = reg_zeros("out." + lv + ".b", {C});
      neck.out_conv.push_back({w, b});
    }
  }
  return neck;
}

// Randomizes every parameter (including the normally zero-initialized heads);
// used by gradient checks so no branch sits exactly on a kink or saddle.
template <typename T>
void randomize_parameters(Neck<T>& neck, std::uint64_t seed, double amplitude = 0.2) {
  Rng rng(seed);
  for (auto& p : neck.params) {
    for (auto& v : p.value.data()) v = static_cast<T>(rng.uniform(-amplitude, amplitude));
  }
}

template <typename T>
struct NeckOutputs {
  std::vector<Tensor<T>> laterals;  // per level
  std::vector<Tensor<T>> aligned;   // bottom-up outputs (empty for fpn)
  std::vector<Tensor<T>> fused;     // top-down outputs
  std::vector<Tensor<T>> outputs;   // final pyramid
};

template <typename T>
void validate_pyramid(const Neck<T>& neck, const std::vector<Tensor<T>>& feats) {
  const auto& cfg = neck.cfg;
  if (static_cast<int>(feats.size()) != cfg.levels) {
    throw ShapeError("neck_forward: expected " + std::to_string(cfg.levels) + " levels, got " +
                     std::to_string(feats.size()));
  }
  for (int i = 0; i < cfg.levels; ++i) {
    detail::require_4d(feats[i].shape(), "neck_forward");
    if (feats[i].dim(1) != cfg.in_channels[i]) {
      throw ShapeError("neck_forward: level " + std::to_string(i + 1) + " has " +
                       std::to_string(feats[i].dim(1)) + " channels, config says " +
                       std::to_string(cfg.in_channels[i]));
    }
    if (i > 0) {
      if (feats[i - 1].dim(0) != feats[i].dim(0)) {
        throw ShapeError("neck_forward: batch mismatch between levels " + std::to_string(i) +
                         " and " + std::to_string(i + 1));
      }
      if (feats[i - 1].dim(2) != 2 * feats[i].dim(2) || feats[i - 1].dim(3) != 2 * feats[i].dim(3)) {
        throw ShapeError("neck_forward: levels " + std::to_string(i) + "->" + std::to_string(i + 1) +
                         " do not halve exactly: " + shape_str(feats[i - 1].shape()) + " vs " +
                         shape_str(feats[i].shape()));
      }
    }
  }
}

template <typename T>
NeckOutputs<T> neck_forward_detail(const Neck<T>& neck, const std::vector<Tensor<T>>& feats) {
  validate_pyramid(neck, feats);
  const auto& cfg = neck.cfg;
  const int L = cfg.levels;
  NeckOutputs<T> out;

  out.laterals.resize(L);
  for (int i = 0; i < L; ++i) {
    if (cfg.variant == "fpn") {
      ConvSpec spec = conv1x1_spec(cfg.in_channels[i], cfg.out_channels);
      out.laterals[i] = conv2d(feats[i], spec, neck.lateral[i][0], neck.lateral[i][1]);
    } else {
      out.laterals[i] = galm_forward(feats[i], neck.galm[i]);
    }
  }

  auto run_bottom_up = [&](const std::vector<Tensor<T>>& src) {
    std::vector<Tensor<T>> a(L);
    a[0] = src[0];
    for (int i = 1; i < L; ++i) a[i] = spam_forward(a[i - 1], src[i], neck.spam[i - 1]);
    return a;
  };
  auto run_top_down_seam = [&](const std::vector<Tensor<T>>& src) {
    std::vector<Tensor<T>> t(L);
    t[L - 1] = src[L - 1];
    for (int i = L - 2; i >= 0; --i) {
      t[i] = seam_fuse(upsample2x(t[i + 1], cfg.upsample), src[i], neck.seam[i]);
    }
    return t;
  };

  std::vector<Tensor<T>> final_stage;
  if (cfg.variant == "bafpn") {
    out.aligned = run_bottom_up(out.laterals);
    out.fused = run_top_down_seam(out.aligned);
    final_stage = out.fused;
  } else if (cfg.variant == "bafpn_r") {
    out.fused = run_top_down_seam(out.laterals);
    out.aligned = run_bottom_up(out.fused);
    final_stage = out.aligned;
  } else {
    out.fused.resize(L);
    out.fused[L - 1] = out.laterals[L - 1];
    for (int i = L - 2; i >= 0; --i) {
      out.fused[i] = add(upsample2x(out.fused[i + 1], cfg.upsample), out.laterals[i]);
    }
    final_stage = out.fused;
  }

  out.outputs.resize(L);
  for (int i = 0; i < L; ++i) {
    if (cfg.output_convs) {
      ConvSpec spec{cfg.out_channels, cfg.out_channels, 3, 3, 1, 1, 1, true};
      out.outputs[i] = conv2d(final_stage[i], spec, neck.out_conv[i][0], neck.out_conv[i][1]);
    } else {
      out.outputs[i] = final_stage[i];
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> neck_forward(const Neck<T>& neck, const std::vector<Tensor<T>>& feats) {
  return neck_forward_detail(neck, feats).outputs;
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

struct ParamCountRow {
  std::string module;
  std::int64_t count = 0;
  std::int64_t baseline = 0;
  std::string baseline_desc;
  bool smaller = false;
};

struct ParamCountReport {
  std::map<std::string, std::int64_t> per_module;  // partition of the registry
  std::vector<ParamCountRow> comparisons;
  std::map<std::string, std::int64_t> variant_totals;
  std::int64_t total = 0;
};

template <typename T>
ParamCountReport param_count_report(const Neck<T>& neck) {
  ParamCountReport rep;
  auto module_key = [](const std::string& name) {
    // "spam.1.stdds.sa_w" -> "spam.1"
    auto p1 = name.find('.');
    auto p2 = name.find('.', p1 + 1);
    return p2 == std::string::npos ? name : name.substr(0, p2);
  };
  std::map<std::string, std::int64_t> stdds_counts;
  for (const auto& p : neck.params) {
    rep.per_module[module_key(p.name)] += p.value.numel();
    rep.total += p.value.numel();
    auto pos = p.name.find(".stdds.");
    if (pos != std::string::npos) stdds_counts[p.name.substr(0, pos)] += p.value.numel();
  }

  const auto& cfg = neck.cfg;
  const std::int64_t C = cfg.out_channels;
  for (const auto& [key, count] : stdds_counts) {
    // versus a 3x3 stride-2 convolution C -> C
    rep.comparisons.push_back(
        {key + ".stdds", count, 9 * C * C + C, "3x3 stride-2 conv", count < 9 * C * C + C});
  }
  for (int i = 1; i < cfg.levels && cfg.variant != "fpn"; ++i) {
    const std::string key = "seam." + std::to_string(i);
    const std::int64_t count = rep.per_module.count(key) ? rep.per_module.at(key) : 0;
    rep.comparisons.push_back({key, count, C * C + C, "1x1 conv", count < C * C + C});
  }
  for (int i = 1; i <= cfg.levels && cfg.variant != "fpn"; ++i) {
    const std::string key = "galm." + std::to_string(i);
    const std::int64_t cin = cfg.in_channels[i - 1];
    const std::int64_t count = rep.per_module.count(key) ? rep.per_module.at(key) : 0;
    rep.comparisons.push_back({key, count, cin * C + C, "1x1 lateral conv", count < cin * C + C});
  }

  for (const char* variant : {"bafpn", "bafpn_r", "fpn"}) {
    NeckConfig vcfg = cfg;
    vcfg.variant = variant;
    rep.variant_totals[variant] = build_neck<T>(vcfg).params.total_count();
  }
  return rep;
}

}  // namespace bafpn
