#pragma once

#include <chrono>
#include <cmath>
#include <vector>

#include "bafpn/metrics.hpp"
#include "bafpn/neck.hpp"
#include "bafpn/optim.hpp"
#include "bafpn/rng.hpp"

namespace bafpn {

struct RunError : std::runtime_error {
  explicit RunError(const std::string& msg) : std::runtime_error("run error: " + msg) {}
};

// Synthetic misalignment benchmark. Level 1 holds random anisotropic Gaussian
// blobs; every deeper target is the 2x2 average pool of the level above; deep
// inputs are the targets resampled with a constant pixel shift plus an
// optional smooth sinusoidal warp (gather convention: deep(i,j) reads the
// clean map at (i+dy, j+dx), zero outside). Blob centers stay away from the
// borders so integer shifts lose essentially nothing.
template <typename T>
struct SynthDataset {
  std::vector<Tensor<T>> feats;    // neck inputs, level 1 first
  std::vector<Tensor<T>> targets;  // clean pooled maps for levels 2..L
  double shift_dy = 0.0;
  double shift_dx = 0.0;
  double warp_amp = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

struct Field {
  std::int64_t c, h, w;  // per batch element
  std::vector<double> v; // [B][c][h][w]
  std::int64_t b;
  double& at(std::int64_t bi, std::int64_t ci, std::int64_t y, std::int64_t x) {
    return v[((bi * c + ci) * h + y) * w + x];
  }
  double at(std::int64_t bi, std::int64_t ci, std::int64_t y, std::int64_t x) const {
    return v[((bi * c + ci) * h + y) * w + x];
  }
};

inline Field avg_pool2x2(const Field& f) {
  Field o{f.c, f.h / 2, f.w / 2, {}, f.b};
  o.v.assign(static_cast<std::size_t>(o.b * o.c * o.h * o.w), 0.0);
  for (std::int64_t bi = 0; bi < f.b; ++bi) {
    for (std::int64_t ci = 0; ci < f.c; ++ci) {
      for (std::int64_t y = 0; y < o.h; ++y) {
        for (std::int64_t x = 0; x < o.w; ++x) {
          o.at(bi, ci, y, x) = 0.25 * (f.at(bi, ci, 2 * y, 2 * x) + f.at(bi, ci, 2 * y, 2 * x + 1) +
                                       f.at(bi, ci, 2 * y + 1, 2 * x) +
                                       f.at(bi, ci, 2 * y + 1, 2 * x + 1));
        }
      }
    }
  }
  return o;
}

inline double sample_zero_pad(const Field& f, std::int64_t bi, std::int64_t ci, double y, double x) {
  if (y <= -1.0 || y >= static_cast<double>(f.h) || x <= -1.0 || x >= static_cast<double>(f.w)) {
    return 0.0;
  }
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const std::int64_t yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= f.h || xx < 0 || xx >= f.w) continue;
      acc += (dy ? ly : 1.0 - ly) * (dx ? lx : 1.0 - lx) * f.at(bi, ci, yy, xx);
    }
  }
  return acc;
}

template <typename T>
Tensor<T> field_to_tensor(const Field& f) {
  std::vector<T> v(f.v.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(f.v[i]);
  return Tensor<T>::from_vector({f.b, f.c, f.h, f.w}, std::move(v));
}

}  // namespace detail

template <typename T>
SynthDataset<T> synth_generate(const NeckConfig& cfg, std::uint64_t seed) {
  const auto& exp = cfg.experiment;
  if (exp.base_hw < 32 || exp.base_hw % 2 != 0) {
    throw ConfigError("base_hw: must be even and >= 32, got " + std::to_string(exp.base_hw));
  }
  if (std::fabs(exp.shift_dy) > exp.base_hw / 8.0 || std::fabs(exp.shift_dx) > exp.base_hw / 8.0) {
    throw ConfigError("shift_px: magnitude must be <= base_hw/8");
  }
  for (int i = 0; i < cfg.levels; ++i) {
    if (cfg.in_channels[i] != cfg.out_channels) {
      throw ConfigError("in_channels: synthetic alignment data needs in_channels[" +
                        std::to_string(i + 1) + "] == out_channels so pooled targets are "
                        "comparable with aligned features");
    }
    const int div = 1 << i;
    if (exp.base_hw % (2 * div) != 0) {
      throw ConfigError("base_hw: not divisible down to level " + std::to_string(i + 1));
    }
  }

  Rng rng(seed);
  const std::int64_t S = exp.base_hw, B = exp.batch, C = cfg.out_channels;
  const double margin = static_cast<double>(S) / 4.0;
  constexpr int kBlobs = 6;

  detail::Field base{C, S, S, {}, B};
  base.v.assign(static_cast<std::size_t>(B * C * S * S), 0.0);
  for (std::int64_t bi = 0; bi < B; ++bi) {
    for (std::int64_t ci = 0; ci < C; ++ci) {
      for (int blob = 0; blob < kBlobs; ++blob) {
        const double amp = rng.uniform(0.5, 1.5);
        const double cy = rng.uniform(margin, S - 1 - margin);
        const double cx = rng.uniform(margin, S - 1 - margin);
        const double sy = rng.uniform(1.6, 2.6);
        const double sx = rng.uniform(1.6, 2.6);
        const double th = rng.uniform(0.0, 3.141592653589793);
        const double ct = std::cos(th), st = std::sin(th);
        for (std::int64_t y = 0; y < S; ++y) {
          for (std::int64_t x = 0; x < S; ++x) {
            const double u = ct * (x - cx) + st * (y - cy);
            const double w = -st * (x - cx) + ct * (y - cy);
            const double ex = u * u / (2 * sx * sx) + w * w / (2 * sy * sy);
            if (ex < 40.0) base.at(bi, ci, y, x) += amp * std::exp(-ex);
          }
        }
      }
    }
  }

  SynthDataset<T> data;
  data.shift_dy = exp.shift_dy;
  data.shift_dx = exp.shift_dx;
  data.warp_amp = exp.warp_amp;
  data.seed = seed;
  data.feats.push_back(detail::field_to_tensor<T>(base));

  detail::Field clean = base;
  for (int lvl = 2; lvl <= cfg.levels; ++lvl) {
    clean = detail::avg_pool2x2(clean);
    data.targets.push_back(detail::field_to_tensor<T>(clean));

    if (exp.shift_dy == 0.0 && exp.shift_dx == 0.0 && exp.warp_amp == 0.0) {
      data.feats.push_back(detail::field_to_tensor<T>(clean));
      continue;
    }
    const double fy = static_cast<double>(rng.uniform_int(1, 2));
    const double fx = static_cast<double>(rng.uniform_int(1, 2));
    const double py = rng.uniform(0.0, 6.283185307179586);
    const double px = rng.uniform(0.0, 6.283185307179586);
    detail::Field shifted{clean.c, clean.h, clean.w, {}, clean.b};
    shifted.v.assign(clean.v.size(), 0.0);
    for (std::int64_t bi = 0; bi < B; ++bi) {
      for (std::int64_t ci = 0; ci < C; ++ci) {
        for (std::int64_t y = 0; y < clean.h; ++y) {
          for (std::int64_t x = 0; x < clean.w; ++x) {
            const double wy = exp.warp_amp * std::sin(6.283185307179586 * fy * x / clean.w + py);
            const double wx = exp.warp_amp * std::sin(6.283185307179586 * fx * y / clean.h + px);
            shifted.at(bi, ci, y, x) = detail::sample_zero_pad(
                clean, bi, ci, y + exp.shift_dy + wy, x + exp.shift_dx + wx);
          }
        }
      }
    }
    data.feats.push_back(detail::field_to_tensor<T>(shifted));
  }
  return data;
}

struct TrainStats {
  MetricsRecord final_record;
  double initial_loss = 0.0;
  double initial_align_err = 0.0;
  double total_wall_ms = 0.0;
};

// Trains on feature-space MSE between the bottom-up aligned features and the
// clean pooled targets (levels >= 2). Only parameters the loss actually
// reaches are stepped. For the fpn variant, which has no bottom-up stage, the
// pyramid outputs stand in.
template <typename T>
TrainStats synth_train(Neck<T>& neck, const SynthDataset<T>& data, const ExperimentConfig& exp,
                       MetricsWriter* metrics) {
  const int L = neck.cfg.levels;
  Sgd<T> sgd(static_cast<T>(exp.lr), static_cast<T>(0.9));
  Adam<T> adam(static_cast<T>(exp.lr));
  const bool use_adam = exp.optimizer == "adam";

  std::vector<Parameter<T>*> trainable;
  TrainStats stats;
  double last_finite_loss = 0.0;
  std::int64_t last_finite_step = -1;

  for (int step = 0; step < exp.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    auto det = neck_forward_detail(neck, data.feats);
    const auto& preds = det.aligned.empty() ? det.outputs : det.aligned;

    Tensor<T> loss;
    double align_err = 0.0;
    for (int i = 1; i < L; ++i) {
      auto diff = sub(preds[i], data.targets[i - 1]);
      auto mse = mean_all(mul(diff, diff));
      const double v = static_cast<double>(mse.item());
      align_err = (i == 1) ? v : std::min(align_err, v);
      loss = (i == 1) ? mse : add(loss, mse);
    }
    if (L > 2) loss = scale(loss, T(1) / static_cast<T>(L - 1));

    const double loss_v = static_cast<double>(loss.item());
    if (!std::isfinite(loss_v)) {
      throw RunError("loss diverged at step " + std::to_string(step) + "; last finite step " +
                     std::to_string(last_finite_step) + " had loss " +
                     std::to_string(last_finite_loss));
    }
    last_finite_loss = loss_v;
    last_finite_step = step;
    if (step == 0) {
      stats.initial_loss = loss_v;
      stats.initial_align_err = align_err;
    }

    backward(loss);
    if (step == 0) {
      for (auto& p : neck.params) {
        if (p.value.has_grad()) trainable.push_back(&p);
      }
    }
    if (use_adam) {
      adam.step(trainable);
    } else {
      sgd.step(trainable);
    }

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    stats.total_wall_ms += wall_ms;
    MetricsRecord rec{step, loss_v, align_err, wall_ms, {}};
    if (metrics) metrics->write(rec);
    stats.final_record = rec;
  }
  return stats;
}

}  // namespace bafpn
