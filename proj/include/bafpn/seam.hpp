#pragma once

#include "bafpn/nn.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

// Fine-grained semantic alignment: a per-channel mask from pooled global
// statistics and a per-pixel mask from interleaved channels, combined by a
// square root and applied to the deep feature before additive fusion.
template <typename T>
struct SeamParams {
  Tensor<T> se_w1, se_b1, se_w2, se_b2;  // SE bottleneck, C -> hidden -> C
  Tensor<T> agg_w, agg_b;                // depthwise 2x2 collapse, [C,1,2,2]
  Tensor<T> pix_w, pix_b;                // grouped 7x7, [C,2,7,7], pad 3
  Tensor<T> kappa;                       // pre-sigmoid saliency factor, [1]
};

// The four pooled vectors are arranged as a 2x2 grid (row-major: max F_hat,
// max F / avg F_hat, avg F) so a single 2x2 grouped convolution can consume
// all of them at once.
template <typename T>
Tensor<T> seam_channel_mask(const Tensor<T>& f_hat, const Tensor<T>& f, const SeamParams<T>& p) {
  if (f_hat.shape() != f.shape()) {
    throw ShapeError("seam_channel_mask: inputs differ " + shape_str(f_hat.shape()) + " vs " +
                     shape_str(f.shape()));
  }
  auto grid = grid2x2_pack(global_max(f_hat), global_max(f), global_avg(f_hat), global_avg(f));
  auto enc = se_block(grid, p.se_w1, p.se_b1, p.se_w2, p.se_b2);
  const std::int64_t C = f.dim(1);
  auto collapsed = conv2d(enc, ConvSpec{C, 1, 2, 2, 1, 0, C, true}, p.agg_w, p.agg_b);
  return sigmoid(collapsed);
}

// Group j of the 7x7 convolution reads exactly the channel pair
// (f_hat_j, f_j) of the interleaved stack and writes mask channel j.
template <typename T>
Tensor<T> seam_pixel_mask(const Tensor<T>& f_hat, const Tensor<T>& f, const SeamParams<T>& p) {
  if (f_hat.shape() != f.shape()) {
    throw ShapeError("seam_pixel_mask: inputs differ " + shape_str(f_hat.shape()) + " vs " +
                     shape_str(f.shape()));
  }
  const std::int64_t C = f.dim(1);
  auto inter = interleave_channels(f_hat, f);
  auto raw = conv2d(inter, ConvSpec{C, 2, 7, 7, 1, 3, C, true}, p.pix_w, p.pix_b);
  return sigmoid(raw);
}

// out = (sqrt(mask_p * mask_c) + sigmoid(kappa)) * f_hat + f. At zero init
// both masks are 0.5, the root gives 0.5, kappa gives 0.5, so the gain on
// f_hat is exactly 1 and the fusion reduces to plain addition.
template <typename T>
Tensor<T> seam_fuse(const Tensor<T>& f_hat, const Tensor<T>& f, const SeamParams<T>& p) {
  auto mask_c = seam_channel_mask(f_hat, f, p);
  auto mask_p = seam_pixel_mask(f_hat, f, p);
  auto gmask = sqrt(mul(mask_p, mask_c));
  auto gain = add(gmask, sigmoid(p.kappa));
  return add(mul(gain, f_hat), f);
}

}  // namespace bafpn
