#include "bafpn/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <json.hpp>

#include "bafpn/config.hpp"
#include "bafpn/suites.hpp"
#include "bafpn/synth.hpp"

namespace bafpn {

namespace {

template <typename T>
std::vector<Tensor<T>> random_pyramid(const NeckConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<T>> feats;
  std::int64_t hw = cfg.experiment.base_hw;
  for (int i = 0; i < cfg.levels; ++i) {
    std::vector<T> v(static_cast<std::size_t>(cfg.experiment.batch * cfg.in_channels[i] * hw * hw));
    for (auto& e : v) e = static_cast<T>(rng.uniform(-1.0, 1.0));
    feats.push_back(Tensor<T>::from_vector(
        {cfg.experiment.batch, cfg.in_channels[i], hw, hw}, std::move(v)));
    hw /= 2;
  }
  return feats;
}

int run_param_count(const std::string& config_path, bool as_json) {
  auto cfg = load_config(config_path);
  auto neck = build_neck<float>(cfg);
  auto rep = param_count_report(neck);

  if (as_json) {
    nlohmann::ordered_json j;
    j["variant"] = cfg.variant;
    j["total"] = rep.total;
    j["per_module"] = rep.per_module;
    j["comparisons"] = nlohmann::ordered_json::array();
    for (const auto& row : rep.comparisons) {
      j["comparisons"].push_back({{"module", row.module},
                                  {"count", row.count},
                                  {"baseline", row.baseline},
                                  {"baseline_desc", row.baseline_desc},
                                  {"smaller", row.smaller},
                                  {"ratio", row.baseline ? double(row.count) / row.baseline : 0.0}});
    }
    j["variant_totals"] = rep.variant_totals;
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  std::printf("parameter counts (variant %s)\n", cfg.variant.c_str());
  for (const auto& [mod, n] : rep.per_module) std::printf("  %-16s %12lld\n", mod.c_str(), (long long)n);
  std::printf("  %-16s %12lld\n", "total", (long long)rep.total);
  std::printf("comparisons:\n");
  for (const auto& row : rep.comparisons) {
    std::printf("  %-16s %10lld vs %-18s %10lld  ratio %.3f  smaller=%s\n", row.module.c_str(),
                (long long)row.count, row.baseline_desc.c_str(), (long long)row.baseline,
                row.baseline ? double(row.count) / row.baseline : 0.0, row.smaller ? "yes" : "no");
  }
  std::printf("variant totals:\n");
  for (const auto& [v, n] : rep.variant_totals) std::printf("  %-16s %12lld\n", v.c_str(), (long long)n);
  return 0;
}

template <typename T>
int run_synth_align(const NeckConfig& cfg, const std::string& out_path, bool compare_fpn) {
  auto neck = build_neck<T>(cfg);
  auto data = synth_generate<T>(cfg, cfg.seed + 1);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw ContractError("cannot open metrics path '" + out_path + "'");
  MetricsWriter writer(out);
  auto stats = synth_train(neck, data, cfg.experiment, &writer);

  std::printf("synth-align: %d steps, shift (%.1f, %.1f), warp %.2f, seed %llu\n",
              cfg.experiment.steps, cfg.experiment.shift_dy, cfg.experiment.shift_dx,
              cfg.experiment.warp_amp, (unsigned long long)cfg.seed);
  std::printf("  loss      %.6e -> %.6e  (ratio %.4f)\n", stats.initial_loss,
              stats.final_record.loss, stats.final_record.loss / stats.initial_loss);
  std::printf("  align_err %.6e -> %.6e\n", stats.initial_align_err, stats.final_record.align_err);
  std::printf("  wall %.0f ms total, %.1f ms/step\n", stats.total_wall_ms,
              stats.total_wall_ms / cfg.experiment.steps);

  if (compare_fpn) {
    NeckConfig fcfg = cfg;
    fcfg.variant = "fpn";
    auto fpn = build_neck<T>(fcfg);
    auto fstats = synth_train(fpn, data, cfg.experiment, nullptr);
    std::printf("  fpn baseline align_err %.6e -> %.6e (no alignment capacity)\n",
                fstats.initial_align_err, fstats.final_record.align_err);
    std::printf("  alignment-error gap (fpn/bafpn final): %.2fx\n",
                fstats.final_record.align_err / std::max(stats.final_record.align_err, 1e-300));
  }
  return 0;
}

template <typename T>
int run_forward_bench(const NeckConfig& cfg, int repeat) {
  auto neck = build_neck<T>(cfg);
  auto feats = random_pyramid<T>(cfg, cfg.seed + 17);
  (void)neck_forward(neck, feats);  // warm up
  std::vector<double> ms;
  ms.reserve(repeat);
  for (int i = 0; i < repeat; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = neck_forward(neck, feats);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count());
  }
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / repeat;
  double var = 0;
  for (double v : ms) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / repeat);
  std::printf("forward-bench: variant %s, levels %d, C_out %lld, base %dx%d, batch %d, %s\n",
              cfg.variant.c_str(), cfg.levels, (long long)cfg.out_channels, cfg.experiment.base_hw,
              cfg.experiment.base_hw, cfg.experiment.batch, cfg.dtype.c_str());
  std::printf("  %d runs: mean %.2f ms, sigma %.2f ms\n", repeat, mean, sigma);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"differentiable BAFPN neck: verification suites, parameter reports, and a "
               "synthetic misalignment-recovery experiment"};
  app.require_subcommand(1);

  std::uint64_t gc_seed = 7;
  double gc_eps = 1e-5, gc_tol = 0.0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every op and block");
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--tol", gc_tol, "override per-row tolerance (0 = defaults)");

  int or_trials = 50;
  std::uint64_t or_seed = 0;
  auto* orc = app.add_subcommand("oracle", "fast kernels against brute-force references");
  orc->add_option("--trials", or_trials, "randomized conv cases");
  orc->add_option("--seed", or_seed, "random seed");

  std::string pc_config;
  bool pc_json = false;
  auto* pc = app.add_subcommand("param-count", "per-module parameter report");
  pc->add_option("--config", pc_config, "config JSON path")->required();
  pc->add_flag("--json", pc_json, "emit JSON");

  std::string sa_config, sa_out;
  int sa_steps = -1;
  std::int64_t sa_seed = -1;
  bool sa_compare = false;
  auto* sa = app.add_subcommand("synth-align", "misalignment-recovery training experiment");
  sa->add_option("--config", sa_config, "config JSON path")->required();
  sa->add_option("--out", sa_out, "metrics stream path (line-delimited JSON)")->required();
  sa->add_option("--steps", sa_steps, "override experiment.steps");
  sa->add_option("--seed", sa_seed, "override seed");
  sa->add_flag("--compare-fpn", sa_compare, "also train a plain fpn on the same data");

  std::string fb_config;
  int fb_repeat = 20;
  auto* fb = app.add_subcommand("forward-bench", "wall time per forward pass");
  fb->add_option("--config", fb_config, "config JSON path")->required();
  fb->add_option("--repeat", fb_repeat, "number of timed forwards");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (gc->parsed()) {
      auto result = run_gradcheck_suite(gc_seed, gc_eps, gc_tol);
      std::cout << format_suite(result);
      return result.pass ? 0 : 1;
    }
    if (orc->parsed()) {
      auto result = run_oracle_suite(or_trials, or_seed);
      std::cout << format_suite(result);
      return result.pass ? 0 : 1;
    }
    if (pc->parsed()) return run_param_count(pc_config, pc_json);
    if (sa->parsed()) {
      auto cfg = load_config(sa_config);
      if (sa_steps > 0) cfg.experiment.steps = sa_steps;
      if (sa_seed >= 0) cfg.seed = static_cast<std::uint64_t>(sa_seed);
      return cfg.dtype == "float64" ? run_synth_align<double>(cfg, sa_out, sa_compare)
                                    : run_synth_align<float>(cfg, sa_out, sa_compare);
    }
    if (fb->parsed()) {
      auto cfg = load_config(fb_config);
      return cfg.dtype == "float64" ? run_forward_bench<double>(cfg, fb_repeat)
                                    : run_forward_bench<float>(cfg, fb_repeat);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace bafpn
