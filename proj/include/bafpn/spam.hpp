#pragma once

#include "bafpn/nn.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

// Space-to-depth downsampler: spatial attention, four-phase fold into
// channels, channel attention over the 4C stack, then 1x1 compression.
template <typename T>
struct StddsParams {
  Tensor<T> sa_w, sa_b;  // spatial attention conv, 2 -> 1, k x k
  int sa_kernel = 7;
  Tensor<T> ca_w1, ca_b1, ca_w2, ca_b2;  // channel attention MLP over 4C
  Tensor<T> compress_w, compress_b;      // 1x1, 4C -> C_out
};

template <typename T>
struct SpamParams {
  StddsParams<T> stdds;
  Tensor<T> om1_w, om1_b;  // 1x1, 2C -> C
  Tensor<T> om2_w, om2_b;  // 3x3, C -> 27 (18 offset + 9 mask channels)
  Tensor<T> dcn_w, dcn_b;  // deformable 3x3 kernel, C -> C
};

// Lossless fold of 2x2 spatial blocks into 4x channels, phases in the order
// (0,0),(0,1),(1,0),(1,1). Fused equivalent of concatenating the four
// strided_subsample phases; a single gather instead of five buffers.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "space_to_depth");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("space_to_depth: H and W must be even, got " + shape_str(x.shape()));
  }
  const std::int64_t OH = H / 2, OW = W / 2;
  static constexpr int kPhase[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  std::vector<T> out(static_cast<std::size_t>(B * 4 * C * OH * OW));
  const T* in = x.data().data();
#pragma omp parallel for if (B * C * H * W >= kOmpGrain)
  for (std::int64_t bpc = 0; bpc < B * 4 * C; ++bpc) {
    const std::int64_t bi = bpc / (4 * C), ph = (bpc / C) % 4, c = bpc % C;
    const T* plane = in + (bi * C + c) * H * W;
    T* dst = out.data() + bpc * OH * OW;
    for (std::int64_t i = 0; i < OH; ++i) {
      const T* row = plane + (2 * i + kPhase[ph][0]) * W + kPhase[ph][1];
      for (std::int64_t j = 0; j < OW; ++j) dst[i * OW + j] = row[2 * j];
    }
  }
  return detail::make_node(
      Shape{B, 4 * C, OH, OW}, std::move(out), "space_to_depth", {x},
      [B, C, H, W, OH, OW](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * C * H * W >= kOmpGrain)
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const std::int64_t bi = bc / C, c = bc % C;
          T* plane = gx + bc * H * W;
          for (int ph = 0; ph < 4; ++ph) {
            const T* gs = g + ((bi * 4 + ph) * C + c) * OH * OW;
            for (std::int64_t i = 0; i < OH; ++i) {
              T* row = plane + (2 * i + kPhase[ph][0]) * W + kPhase[ph][1];
              for (std::int64_t j = 0; j < OW; ++j) row[2 * j] += gs[i * OW + j];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> stdds_forward(const Tensor<T>& x, const StddsParams<T>& p) {
  const std::int64_t c4 = 4 * x.dim(1);
  if (p.compress_w.dim(1) != c4) {
    throw ShapeError("stdds: compression expects " + std::to_string(p.compress_w.dim(1)) +
                     " channels, space-to-depth yields " + std::to_string(c4));
  }
  auto weighted = spatial_attention(x, p.sa_w, p.sa_b, p.sa_kernel);
  auto folded = space_to_depth(weighted);
  auto gated = channel_attention(folded, p.ca_w1, p.ca_b1, p.ca_w2, p.ca_b2);
  return conv2d(gated, conv1x1_spec(c4, p.compress_w.dim(0)), p.compress_w, p.compress_b);
}

// Predicts the deformable sampling field from the (downsampled shallow, deep)
// pair: 1x1 conv + relu, then a 3x3 conv whose 27 output channels split into
// 18 raw offsets and 9 sigmoid masks.
template <typename T>
OffsetField<T> offset_mask_head(const Tensor<T>& ds, const Tensor<T>& deep,
                                const SpamParams<T>& p) {
  if (ds.shape() != deep.shape()) {
    throw ShapeError("offset_mask_head: inputs differ " + shape_str(ds.shape()) + " vs " +
                     shape_str(deep.shape()));
  }
  const std::int64_t C = ds.dim(1);
  auto t = relu(conv2d(concat_channels<T>({ds, deep}), conv1x1_spec(2 * C, C), p.om1_w, p.om1_b));
  auto raw = conv2d(t, ConvSpec{27, C, 3, 3, 1, 1, 1, true}, p.om2_w, p.om2_b);
  return OffsetField<T>{channel_slice(raw, 0, 18), sigmoid(channel_slice(raw, 18, 27))};
}

// Aligns the deep feature against the downsampled shallow one via the
// deformable convolution, then adds the downsampled shallow feature so that
// fine location detail propagates upward.
template <typename T>
Tensor<T> spam_forward(const Tensor<T>& shallow, const Tensor<T>& deep, const SpamParams<T>& p) {
  if (deep.dim(2) * 2 != shallow.dim(2) || deep.dim(3) * 2 != shallow.dim(3)) {
    throw ShapeError("spam: deep " + shape_str(deep.shape()) + " is not half of shallow " +
                     shape_str(shallow.shape()));
  }
  auto ds = stdds_forward(shallow, p.stdds);
  auto field = offset_mask_head(ds, deep, p);
  const std::int64_t C = deep.dim(1);
  auto aligned = deform_conv2d(deep, ConvSpec{C, C, 3, 3, 1, 1, 1, true}, p.dcn_w, p.dcn_b, field);
  return add(aligned, ds);
}

}  // namespace bafpn
