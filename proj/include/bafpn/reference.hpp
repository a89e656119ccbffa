#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafpn/errors.hpp"

namespace bafpn::ref {

// Forward-only float64 array for the brute-force oracles. Deliberately has no
// graph link and shares no code with the fast kernels.
struct DenseArray {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  DenseArray() = default;
  DenseArray(std::vector<std::int64_t> s, double fill = 0.0);

  std::int64_t numel() const;
  double& at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w);
  double at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const;
};

// Cross-correlation with zero padding, grouped, translated directly from the
// defining double sum. Serial on purpose: this is the baseline the parallel
// kernels are benchmarked and verified against.
DenseArray naive_conv2d(const DenseArray& x, const DenseArray& w, const std::vector<double>* bias,
                        int stride, int pad, std::int64_t groups);

// Modulated deformable 3x3 convolution (stride 1, pad 1) with explicit
// bilinear interpolation and zero out-of-bounds samples.
// offsets: [B,18,H,W] as (dy,dx) pairs per kernel position; masks: [B,9,H,W].
DenseArray naive_deform_conv2d(const DenseArray& x, const DenseArray& w,
                               const std::vector<double>* bias, const DenseArray& offsets,
                               const DenseArray& masks);

// Four-phase subsample concatenated along channels, gathered index by index.
DenseArray naive_space_to_depth(const DenseArray& x);

struct CloseReport {
  bool pass = true;
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::int64_t worst_index = -1;
};

// Elementwise comparison; fails when |a-b| > atol + rtol*|b| anywhere.
CloseReport assert_allclose(const DenseArray& a, const DenseArray& b, double atol, double rtol);

}  // namespace bafpn::ref
