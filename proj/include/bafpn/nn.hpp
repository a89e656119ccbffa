#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bafpn/errors.hpp"
#include "bafpn/tensor.hpp"

namespace bafpn {

struct ConvSpec {
  std::int64_t out_channels = 0;
  std::int64_t in_channels_per_group = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  std::int64_t groups = 1;
  bool has_bias = true;
};

inline ConvSpec conv1x1_spec(std::int64_t in_c, std::int64_t out_c, bool bias = true) {
  return ConvSpec{out_c, in_c, 1, 1, 1, 0, 1, bias};
}

// Learned sampling field for the deformable convolution: per output pixel and
// kernel position, a (dy,dx) displacement in pixels plus a post-sigmoid mask.
// Offset channel layout is kernel-position-major with dy before dx.
template <typename T>
struct OffsetField {
  Tensor<T> offsets;  // [B, 2*K*K, H, W]
  Tensor<T> masks;    // [B, K*K, H, W]
};

namespace detail {

inline void validate_conv_args(const Shape& xs, const ConvSpec& spec, const Shape& ws,
                               bool bias_defined, const Shape* bs) {
  require_4d(xs, "conv2d");
  if (spec.groups < 1 || spec.stride < 1 || spec.padding < 0) {
    throw ConfigError("conv2d: bad spec (groups " + std::to_string(spec.groups) + ", stride " +
                      std::to_string(spec.stride) + ", padding " + std::to_string(spec.padding) + ")");
  }
  if (xs[1] != spec.groups * spec.in_channels_per_group) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, spec wants " +
                     std::to_string(spec.groups) + "x" + std::to_string(spec.in_channels_per_group));
  }
  if (spec.out_channels % spec.groups != 0) {
    throw ShapeError("conv2d: out_channels " + std::to_string(spec.out_channels) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  Shape expect_w{spec.out_channels, spec.in_channels_per_group, spec.kernel_h, spec.kernel_w};
  if (ws != expect_w) {
    throw ShapeError("conv2d: weight shape " + shape_str(ws) + ", expected " + shape_str(expect_w));
  }
  if (spec.has_bias != bias_defined) {
    throw ContractError("conv2d: bias presence does not match spec.has_bias");
  }
  if (bias_defined && *bs != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + shape_str(*bs));
  }
}

}  // namespace detail

// Grouped cross-correlation with zero padding. Output spatial size is
// floor((H + 2p - k)/stride) + 1. Gradients flow to x, w and b.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                 const Tensor<T>& b = Tensor<T>()) {
  const Shape* bs = b.defined() ? &b.shape() : nullptr;
  detail::validate_conv_args(x.shape(), spec, w.shape(), b.defined(), bs);

  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OC = spec.out_channels, IPG = spec.in_channels_per_group;
  const std::int64_t KH = spec.kernel_h, KW = spec.kernel_w;
  const std::int64_t st = spec.stride, pd = spec.padding;
  const std::int64_t OPG = OC / spec.groups;
  const std::int64_t OH = (H + 2 * pd - KH) / st + 1;
  const std::int64_t OW = (W + 2 * pd - KW) / st + 1;
  if (OH < 1 || OW < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                     " does not fit input " + shape_str(x.shape()));
  }

  std::vector<T> out(static_cast<std::size_t>(B * OC * OH * OW));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = b.defined() ? b.data().data() : nullptr;
  const std::int64_t work = B * OC * OH * OW * IPG * KH * KW;
#pragma omp parallel for if (work >= kOmpGrain)
  for (std::int64_t bo = 0; bo < B * OC; ++bo) {
    const std::int64_t bi = bo / OC, oc = bo % OC;
    const std::int64_t g = oc / OPG;
    T* dst = out.data() + bo * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        T acc = pb ? pb[oc] : T(0);
        for (std::int64_t ic = 0; ic < IPG; ++ic) {
          const T* plane = px + ((bi * C + g * IPG + ic) * H) * W;
          const T* wrow = pw + ((oc * IPG + ic) * KH) * KW;
          for (std::int64_t kh = 0; kh < KH; ++kh) {
            const std::int64_t ih = oh * st - pd + kh;
            if (ih < 0 || ih >= H) continue;
            for (std::int64_t kw = 0; kw < KW; ++kw) {
              const std::int64_t iw = ow * st - pd + kw;
              if (iw < 0 || iw >= W) continue;
              acc += wrow[kh * KW + kw] * plane[ih * W + iw];
            }
          }
        }
        dst[oh * OW + ow] = acc;
      }
    }
  }

  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  const bool has_bias = b.defined();
  return detail::make_node(
      Shape{B, OC, OH, OW}, std::move(out), "conv2d", std::move(parents),
      [B, C, H, W, OC, IPG, KH, KW, st, pd, OPG, OH, OW, has_bias](TensorImpl<T>& node) {
        auto& xp = *node.parents[0];
        auto& wp = *node.parents[1];
        const T* g = node.grad.data();
        const T* px = xp.data.data();
        const T* pw = wp.data.data();

        if (xp.requires_grad) {
          T* gx = xp.grad.data();
#pragma omp parallel for if (B > 1 && B * OC * OH * OW * IPG >= kOmpGrain)
          for (std::int64_t bi = 0; bi < B; ++bi) {
            for (std::int64_t oc = 0; oc < OC; ++oc) {
              const std::int64_t gr = oc / OPG;
              const T* gs = g + (bi * OC + oc) * OH * OW;
              for (std::int64_t oh = 0; oh < OH; ++oh) {
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                  const T go = gs[oh * OW + ow];
                  if (go == T(0)) continue;
                  for (std::int64_t ic = 0; ic < IPG; ++ic) {
                    T* plane = gx + ((bi * C + gr * IPG + ic) * H) * W;
                    const T* wrow = pw + ((oc * IPG + ic) * KH) * KW;
                    for (std::int64_t kh = 0; kh < KH; ++kh) {
                      const std::int64_t ih = oh * st - pd + kh;
                      if (ih < 0 || ih >= H) continue;
                      for (std::int64_t kw = 0; kw < KW; ++kw) {
                        const std::int64_t iw = ow * st - pd + kw;
                        if (iw < 0 || iw >= W) continue;
                        plane[ih * W + iw] += go * wrow[kh * KW + kw];
                      }
                    }
                  }
                }
              }
            }
          }
        }

        if (wp.requires_grad) {
          T* gw = wp.grad.data();
#pragma omp parallel for if (OC > 1 && B * OC * OH * OW * IPG >= kOmpGrain)
          for (std::int64_t oc = 0; oc < OC; ++oc) {
            const std::int64_t gr = oc / OPG;
            for (std::int64_t bi = 0; bi < B; ++bi) {
              const T* gs = g + (bi * OC + oc) * OH * OW;
              for (std::int64_t oh = 0; oh < OH; ++oh) {
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                  const T go = gs[oh * OW + ow];
                  if (go == T(0)) continue;
                  for (std::int64_t ic = 0; ic < IPG; ++ic) {
                    const T* plane = px + ((bi * C + gr * IPG + ic) * H) * W;
                    T* wrow = gw + ((oc * IPG + ic) * KH) * KW;
                    for (std::int64_t kh = 0; kh < KH; ++kh) {
                      const std::int64_t ih = oh * st - pd + kh;
                      if (ih < 0 || ih >= H) continue;
                      for (std::int64_t kw = 0; kw < KW; ++kw) {
                        const std::int64_t iw = ow * st - pd + kw;
                        if (iw < 0 || iw >= W) continue;
                        wrow[kh * KW + kw] += go * plane[ih * W + iw];
                      }
                    }
                  }
                }
              }
            }
          }
        }

        if (has_bias && node.parents[2]->requires_grad) {
          T* gb = node.parents[2]->grad.data();
#pragma omp parallel for if (OC >= 64)
          for (std::int64_t oc = 0; oc < OC; ++oc) {
            T acc = 0;
            for (std::int64_t bi = 0; bi < B; ++bi) {
              const T* gs = g + (bi * OC + oc) * OH * OW;
              for (std::int64_t s = 0; s < OH * OW; ++s) acc += gs[s];
            }
            gb[oc] += acc;
          }
        }
      });
}

// Splits x into g contiguous channel groups and applies the same 1x1 kernel
// (w,b) to every group; results are concatenated group-major. Weight gradients
// accumulate across groups.
template <typename T>
Tensor<T> shared_group_conv1x1(const Tensor<T>& x, std::int64_t g, const Tensor<T>& w,
                               const Tensor<T>& b) {
  detail::require_4d(x.shape(), "shared_group_conv1x1");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (g < 1 || C % g != 0) {
    throw ShapeError("shared_group_conv1x1: " + std::to_string(g) + " groups do not divide " +
                     std::to_string(C) + " channels");
  }
  const std::int64_t CG = C / g;
  if (w.shape().size() != 4 || w.dim(1) != CG || w.dim(2) != 1 || w.dim(3) != 1) {
    throw ShapeError("shared_group_conv1x1: weight shape " + shape_str(w.shape()) +
                     ", expected [*, " + std::to_string(CG) + ",1,1]");
  }
  const std::int64_t OC = w.dim(0);
  if (b.shape() != Shape{OC}) {
    throw ShapeError("shared_group_conv1x1: bias shape " + shape_str(b.shape()));
  }

  std::vector<T> out(static_cast<std::size_t>(B * g * OC * hw));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for if (B * g * OC * hw * CG >= kOmpGrain)
  for (std::int64_t bo = 0; bo < B * g * OC; ++bo) {
    const std::int64_t bi = bo / (g * OC), oc = bo % (g * OC);
    const std::int64_t j = oc / OC, t = oc % OC;
    T* dst = out.data() + bo * hw;
    for (std::int64_t s = 0; s < hw; ++s) {
      T acc = pb[t];
      for (std::int64_t c = 0; c < CG; ++c) {
        acc += pw[t * CG + c] * px[((bi * C) + j * CG + c) * hw + s];
      }
      dst[s] = acc;
    }
  }

  return detail::make_node(
      Shape{B, g * OC, x.dim(2), x.dim(3)}, std::move(out), "shared_group_conv1x1", {x, w, b},
      [B, C, CG, OC, g, hw](TensorImpl<T>& node) {
        auto& xp = *node.parents[0];
        auto& wp = *node.parents[1];
        auto& bp = *node.parents[2];
        const T* gr = node.grad.data();
        const T* px = xp.data.data();
        const T* pw = wp.data.data();

        if (xp.requires_grad) {
          T* gx = xp.grad.data();
#pragma omp parallel for if (B > 1 && B * g * OC * hw * CG >= kOmpGrain)
          for (std::int64_t bi = 0; bi < B; ++bi) {
            for (std::int64_t j = 0; j < g; ++j) {
              for (std::int64_t t = 0; t < OC; ++t) {
                const T* gs = gr + (bi * g * OC + j * OC + t) * hw;
                for (std::int64_t c = 0; c < CG; ++c) {
                  T* dst = gx + ((bi * C) + j * CG + c) * hw;
                  const T wv = pw[t * CG + c];
                  for (std::int64_t s = 0; s < hw; ++s) dst[s] += gs[s] * wv;
                }
              }
            }
          }
        }
        if (wp.requires_grad) {
          T* gw = wp.grad.data();
#pragma omp parallel for if (OC > 1 && B * g * OC * hw * CG >= kOmpGrain)
          for (std::int64_t t = 0; t < OC; ++t) {
            for (std::int64_t bi = 0; bi < B; ++bi) {
              for (std::int64_t j = 0; j < g; ++j) {
                const T* gs = gr + (bi * g * OC + j * OC + t) * hw;
                for (std::int64_t c = 0; c < CG; ++c) {
                  const T* src = px + ((bi * C) + j * CG + c) * hw;
                  T acc = 0;
                  for (std::int64_t s = 0; s < hw; ++s) acc += gs[s] * src[s];
                  gw[t * CG + c] += acc;
                }
              }
            }
          }
        }
        if (bp.requires_grad) {
          T* gb = bp.grad.data();
          for (std::int64_t t = 0; t < OC; ++t) {
            T acc = 0;
            for (std::int64_t bi = 0; bi < B; ++bi) {
              for (std::int64_t j = 0; j < g; ++j) {
                const T* gs = gr + (bi * g * OC + j * OC + t) * hw;
                for (std::int64_t s = 0; s < hw; ++s) acc += gs[s];
              }
            }
            gb[t] += acc;
          }
        }
      });
}

// Each pixel replicated into a 2x2 block.
template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "nearest_upsample2x");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = 2 * H, OW = 2 * W;
  std::vector<T> out(static_cast<std::size_t>(B * C * OH * OW));
  const T* in = x.data().data();
#pragma omp parallel for if (B * C * OH * OW >= kOmpGrain)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = in + bc * H * W;
    T* dst = out.data() + bc * OH * OW;
    for (std::int64_t i = 0; i < OH; ++i) {
      for (std::int64_t j = 0; j < OW; ++j) dst[i * OW + j] = src[(i / 2) * W + (j / 2)];
    }
  }
  return detail::make_node(
      Shape{B, C, OH, OW}, std::move(out), "nearest_upsample2x", {x},
      [B, C, H, W, OH, OW](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * C * OH * OW >= kOmpGrain)
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const T* gs = g + bc * OH * OW;
          T* gd = gx + bc * H * W;
          for (std::int64_t i = 0; i < OH; ++i) {
            for (std::int64_t j = 0; j < OW; ++j) gd[(i / 2) * W + (j / 2)] += gs[i * OW + j];
          }
        }
      });
}

namespace detail {

// Bilinear read with zero padding: corners falling outside the plane
// contribute nothing. Also returns the coordinate derivatives.
template <typename T>
struct BilinEval {
  T value = 0;
  T dv_dy = 0;
  T dv_dx = 0;
  std::int64_t corner[4] = {-1, -1, -1, -1};  // flat plane indices, -1 if out of bounds
  T corner_w[4] = {0, 0, 0, 0};
};

template <typename T>
inline BilinEval<T> bilin_eval(const T* plane, std::int64_t H, std::int64_t W, T y, T x) {
  BilinEval<T> e;
  if (y <= T(-1) || y >= static_cast<T>(H) || x <= T(-1) || x >= static_cast<T>(W)) return e;
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  const T ly = y - static_cast<T>(y0);
  const T lx = x - static_cast<T>(x0);
  const T v[2][2] = {
      {(y0 >= 0 && x0 >= 0) ? plane[y0 * W + x0] : T(0),
       (y0 >= 0 && x0 + 1 < W) ? plane[y0 * W + x0 + 1] : T(0)},
      {(y0 + 1 < H && x0 >= 0) ? plane[(y0 + 1) * W + x0] : T(0),
       (y0 + 1 < H && x0 + 1 < W) ? plane[(y0 + 1) * W + x0 + 1] : T(0)}};
  e.value = (T(1) - ly) * ((T(1) - lx) * v[0][0] + lx * v[0][1]) +
            ly * ((T(1) - lx) * v[1][0] + lx * v[1][1]);
  e.dv_dy = ((T(1) - lx) * v[1][0] + lx * v[1][1]) - ((T(1) - lx) * v[0][0] + lx * v[0][1]);
  e.dv_dx = ((T(1) - ly) * (v[0][1] - v[0][0])) + ly * (v[1][1] - v[1][0]);
  const T wts[4] = {(T(1) - ly) * (T(1) - lx), (T(1) - ly) * lx, ly * (T(1) - lx), ly * lx};
  const std::int64_t ys[2] = {y0, y0 + 1}, xs[2] = {x0, x0 + 1};
  for (int q = 0; q < 4; ++q) {
    const std::int64_t yy = ys[q / 2], xx = xs[q % 2];
    if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
      e.corner[q] = yy * W + xx;
      e.corner_w[q] = wts[q];
    }
  }
  return e;
}

}  // namespace detail

// Samples x at real-valued coordinates (one grid cell per output pixel, shared
// across batch and channels). Differentiable w.r.t. x and both grids.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& y_coord, const Tensor<T>& x_coord) {
  detail::require_4d(x.shape(), "bilinear_sample");
  if (y_coord.shape().size() != 2 || y_coord.shape() != x_coord.shape()) {
    throw ShapeError("bilinear_sample: coordinate grids must be equal 2-d shapes, got " +
                     shape_str(y_coord.shape()) + " and " + shape_str(x_coord.shape()));
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = y_coord.dim(0), OW = y_coord.dim(1);
  std::vector<T> out(static_cast<std::size_t>(B * C * OH * OW));
  const T* px = x.data().data();
  const T* py = y_coord.data().data();
  const T* pxc = x_coord.data().data();
#pragma omp parallel for if (B * C * OH * OW >= kOmpGrain)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = px + bc * H * W;
    T* dst = out.data() + bc * OH * OW;
    for (std::int64_t s = 0; s < OH * OW; ++s) {
      dst[s] = detail::bilin_eval(plane, H, W, py[s], pxc[s]).value;
    }
  }
  return detail::make_node(
      Shape{B, C, OH, OW}, std::move(out), "bilinear_sample", {x, y_coord, x_coord},
      [B, C, H, W, OH, OW](TensorImpl<T>& node) {
        auto& xp = *node.parents[0];
        auto& yp = *node.parents[1];
        auto& xcp = *node.parents[2];
        const T* g = node.grad.data();
        const T* px = xp.data.data();
        const T* py = yp.data.data();
        const T* pxc = xcp.data.data();
        const std::int64_t os = OH * OW;

        if (xp.requires_grad) {
          T* gx = xp.grad.data();
#pragma omp parallel for if (B * C * os >= kOmpGrain)
          for (std::int64_t bc = 0; bc < B * C; ++bc) {
            T* plane = gx + bc * H * W;
            const T* gs = g + bc * os;
            for (std::int64_t s = 0; s < os; ++s) {
              auto e = detail::bilin_eval(px + bc * H * W, H, W, py[s], pxc[s]);
              for (int q = 0; q < 4; ++q) {
                if (e.corner[q] >= 0) plane[e.corner[q]] += gs[s] * e.corner_w[q];
              }
            }
          }
        }
        if (yp.requires_grad || xcp.requires_grad) {
          T* gy = yp.requires_grad ? yp.grad.data() : nullptr;
          T* gxc = xcp.requires_grad ? xcp.grad.data() : nullptr;
#pragma omp parallel for if (B * C * os >= kOmpGrain)
          for (std::int64_t s = 0; s < os; ++s) {
            T ay = 0, ax = 0;
            for (std::int64_t bc = 0; bc < B * C; ++bc) {
              auto e = detail::bilin_eval(px + bc * H * W, H, W, py[s], pxc[s]);
              const T go = g[bc * os + s];
              ay += go * e.dv_dy;
              ax += go * e.dv_dx;
            }
            if (gy) gy[s] += ay;
            if (gxc) gxc[s] += ax;
          }
        }
      });
}

// Modulated deformable 3x3 convolution (stride 1, pad 1, single deformable
// group). Sampling point for kernel cell (p,q) at output (i,j) is
// (i+p-1+dy, j+q-1+dx); each sampled value is scaled by its mask before the
// kernel weight is applied. Gradients flow to x, w, b, offsets and masks.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                        const Tensor<T>& b, const OffsetField<T>& of) {
  detail::require_4d(x.shape(), "deform_conv2d");
  if (spec.kernel_h != 3 || spec.kernel_w != 3 || spec.stride != 1 || spec.padding != 1 ||
      spec.groups != 1) {
    throw ConfigError("deform_conv2d supports only kernel 3, stride 1, pad 1, groups 1");
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OC = spec.out_channels;
  if (spec.in_channels_per_group != C) {
    throw ShapeError("deform_conv2d: spec expects " + std::to_string(spec.in_channels_per_group) +
                     " input channels, tensor has " + std::to_string(C));
  }
  if (w.shape() != Shape{OC, C, 3, 3}) {
    throw ShapeError("deform_conv2d: weight shape " + shape_str(w.shape()));
  }
  if (b.shape() != Shape{OC}) throw ShapeError("deform_conv2d: bias shape " + shape_str(b.shape()));
  if (of.offsets.shape() != Shape{B, 18, H, W}) {
    throw ShapeError("deform_conv2d: offsets shape " + shape_str(of.offsets.shape()) +
                     ", expected " + shape_str(Shape{B, 18, H, W}));
  }
  if (of.masks.shape() != Shape{B, 9, H, W}) {
    throw ShapeError("deform_conv2d: masks shape " + shape_str(of.masks.shape()) + ", expected " +
                     shape_str(Shape{B, 9, H, W}));
  }

  const std::int64_t hw = H * W;
  std::vector<T> out(static_cast<std::size_t>(B * OC * hw));
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = b.data().data();
  const T* po = of.offsets.data().data();
  const T* pm = of.masks.data().data();
#pragma omp parallel for if (B * H * OC * C >= kOmpGrain / 16)
  for (std::int64_t bh = 0; bh < B * H; ++bh) {
    const std::int64_t bi = bh / H, i = bh % H;
    std::vector<T> sampm(static_cast<std::size_t>(C * 9));
    for (std::int64_t j = 0; j < W; ++j) {
      const std::int64_t s = i * W + j;
      for (int k = 0; k < 9; ++k) {
        const T dy = po[(bi * 18 + 2 * k) * hw + s];
        const T dx = po[(bi * 18 + 2 * k + 1) * hw + s];
        const T m = pm[(bi * 9 + k) * hw + s];
        const T sy = static_cast<T>(i + k / 3 - 1) + dy;
        const T sx = static_cast<T>(j + k % 3 - 1) + dx;
        for (std::int64_t ic = 0; ic < C; ++ic) {
          sampm[ic * 9 + k] =
              detail::bilin_eval(px + (bi * C + ic) * hw, H, W, sy, sx).value * m;
        }
      }
      for (std::int64_t oc = 0; oc < OC; ++oc) {
        T acc = pb[oc];
        const T* wrow = pw + oc * C * 9;
        for (std::int64_t ick = 0; ick < C * 9; ++ick) acc += wrow[ick] * sampm[ick];
        out[(bi * OC + oc) * hw + s] = acc;
      }
    }
  }

  return detail::make_node(
      Shape{B, OC, H, W}, std::move(out), "deform_conv2d",
      {x, w, b, of.offsets, of.masks}, [B, C, H, W, OC, hw](TensorImpl<T>& node) {
        auto& xp = *node.parents[0];
        auto& wp = *node.parents[1];
        auto& bp = *node.parents[2];
        auto& op = *node.parents[3];
        auto& mp = *node.parents[4];
        const T* g = node.grad.data();
        const T* px = xp.data.data();
        const T* pw = wp.data.data();
        const T* po = op.data.data();
        const T* pm = mp.data.data();

        if (xp.requires_grad || op.requires_grad || mp.requires_grad) {
          T* gx = xp.requires_grad ? xp.grad.data() : nullptr;
          T* go_ = op.requires_grad ? op.grad.data() : nullptr;
          T* gm = mp.requires_grad ? mp.grad.data() : nullptr;
#pragma omp parallel for if (B > 1)
          for (std::int64_t bi = 0; bi < B; ++bi) {
            std::vector<T> a(static_cast<std::size_t>(C));
            for (std::int64_t i = 0; i < H; ++i) {
              for (std::int64_t j = 0; j < W; ++j) {
                const std::int64_t s = i * W + j;
                for (int k = 0; k < 9; ++k) {
                  // a[ic] = sum_oc g(oc) * w(oc,ic,k)
                  std::fill(a.begin(), a.end(), T(0));
                  for (std::int64_t oc = 0; oc < OC; ++oc) {
                    const T gv = g[(bi * OC + oc) * hw + s];
                    if (gv == T(0)) continue;
                    const T* wrow = pw + (oc * C) * 9 + k;
                    for (std::int64_t ic = 0; ic < C; ++ic) a[ic] += gv * wrow[ic * 9];
                  }
                  const T dy = po[(bi * 18 + 2 * k) * hw + s];
                  const T dx = po[(bi * 18 + 2 * k + 1) * hw + s];
                  const T m = pm[(bi * 9 + k) * hw + s];
                  const T sy = static_cast<T>(i + k / 3 - 1) + dy;
                  const T sx = static_cast<T>(j + k % 3 - 1) + dx;
                  T acc_m = 0, acc_y = 0, acc_x = 0;
                  for (std::int64_t ic = 0; ic < C; ++ic) {
                    if (a[ic] == T(0)) continue;
                    auto e = detail::bilin_eval(px + (bi * C + ic) * hw, H, W, sy, sx);
                    acc_m += a[ic] * e.value;
                    acc_y += a[ic] * e.dv_dy;
                    acc_x += a[ic] * e.dv_dx;
                    if (gx) {
                      T* plane = gx + (bi * C + ic) * hw;
                      const T scale = a[ic] * m;
                      for (int q = 0; q < 4; ++q) {
                        if (e.corner[q] >= 0) plane[e.corner[q]] += scale * e.corner_w[q];
                      }
                    }
                  }
                  if (gm) gm[(bi * 9 + k) * hw + s] += acc_m;
                  if (go_) {
                    go_[(bi * 18 + 2 * k) * hw + s] += acc_y * m;
                    go_[(bi * 18 + 2 * k + 1) * hw + s] += acc_x * m;
                  }
                }
              }
            }
          }
        }

        if (wp.requires_grad) {
          // masked sample values, recomputed once and contracted per out channel
          std::vector<T> sampm(static_cast<std::size_t>(B * 9 * C * hw));
#pragma omp parallel for if (B > 1)
          for (std::int64_t bi = 0; bi < B; ++bi) {
            for (std::int64_t i = 0; i < H; ++i) {
              for (std::int64_t j = 0; j < W; ++j) {
                const std::int64_t s = i * W + j;
                for (int k = 0; k < 9; ++k) {
                  const T dy = po[(bi * 18 + 2 * k) * hw + s];
                  const T dx = po[(bi * 18 + 2 * k + 1) * hw + s];
                  const T m = pm[(bi * 9 + k) * hw + s];
                  const T sy = static_cast<T>(i + k / 3 - 1) + dy;
                  const T sx = static_cast<T>(j + k % 3 - 1) + dx;
                  for (std::int64_t ic = 0; ic < C; ++ic) {
                    sampm[((bi * 9 + k) * C + ic) * hw + s] =
                        detail::bilin_eval(px + (bi * C + ic) * hw, H, W, sy, sx).value * m;
                  }
                }
              }
            }
          }
          T* gw = wp.grad.data();
#pragma omp parallel for if (OC > 1)
          for (std::int64_t oc = 0; oc < OC; ++oc) {
            for (std::int64_t bi = 0; bi < B; ++bi) {
              const T* gs = g + (bi * OC + oc) * hw;
              for (std::int64_t ic = 0; ic < C; ++ic) {
                for (int k = 0; k < 9; ++k) {
                  const T* sv = sampm.data() + ((bi * 9 + k) * C + ic) * hw;
                  T acc = 0;
                  for (std::int64_t s = 0; s < hw; ++s) acc += gs[s] * sv[s];
                  gw[(oc * C + ic) * 9 + k] += acc;
                }
              }
            }
          }
        }

        if (bp.requires_grad) {
          T* gb = bp.grad.data();
          for (std::int64_t oc = 0; oc < OC; ++oc) {
            T acc = 0;
            for (std::int64_t bi = 0; bi < B; ++bi) {
              const T* gs = g + (bi * OC + oc) * hw;
              for (std::int64_t s = 0; s < hw; ++s) acc += gs[s];
            }
            gb[oc] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// attention blocks
// ---------------------------------------------------------------------------

// map = sigmoid(conv_k([channel-mean ; channel-max])), returned as x * map.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int k) {
  if (k % 2 == 0) throw ConfigError("spatial_attention: kernel size must be odd, got " + std::to_string(k));
  auto cat = concat_channels<T>({mean_over_channels(x), max_over_channels(x)});
  ConvSpec spec{1, 2, k, k, 1, (k - 1) / 2, 1, true};
  auto map = sigmoid(conv2d(cat, spec, w, b));
  return mul(x, map);
}

// CBAM-style channel gate: shared bottleneck MLP over global average and max
// vectors, summed and squashed, then broadcast onto x.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                            const Tensor<T>& w2, const Tensor<T>& b2) {
  const std::int64_t C = x.dim(1);
  const std::int64_t hidden = w1.dim(0);
  ConvSpec down = conv1x1_spec(C, hidden);
  ConvSpec up = conv1x1_spec(hidden, C);
  auto mlp = [&](const Tensor<T>& v) { return conv2d(relu(conv2d(v, down, w1, b1)), up, w2, b2); };
  auto gate = sigmoid(add(mlp(global_avg(x)), mlp(global_max(x))));
  return mul(x, gate);
}

// Two 1x1 convolutions with a relu between, applied independently at each of
// the four grid positions of a [B,C,2,2] input.
template <typename T>
Tensor<T> se_block(const Tensor<T>& v, const Tensor<T>& w1, const Tensor<T>& b1,
                   const Tensor<T>& w2, const Tensor<T>& b2) {
  detail::require_4d(v.shape(), "se_block");
  if (v.dim(2) != 2 || v.dim(3) != 2) {
    throw ShapeError("se_block: expected spatial extent 2x2, got " + shape_str(v.shape()));
  }
  const std::int64_t C = v.dim(1);
  const std::int64_t hidden = w1.dim(0);
  return conv2d(relu(conv2d(v, conv1x1_spec(C, hidden), w1, b1)), conv1x1_spec(hidden, C), w2, b2);
}

// 2x nearest or bilinear upsampling; bilinear uses half-pixel sample centers.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, const std::string& mode) {
  if (mode == "nearest") return nearest_upsample2x(x);
  if (mode != "bilinear") throw ConfigError("upsample2x: unknown mode '" + mode + "'");
  const std::int64_t OH = 2 * x.dim(2), OW = 2 * x.dim(3);
  std::vector<T> ys(static_cast<std::size_t>(OH * OW)), xs(static_cast<std::size_t>(OH * OW));
  for (std::int64_t i = 0; i < OH; ++i) {
    for (std::int64_t j = 0; j < OW; ++j) {
      ys[i * OW + j] = static_cast<T>(i) / T(2) - T(0.25);
      xs[i * OW + j] = static_cast<T>(j) / T(2) - T(0.25);
    }
  }
  auto yg = Tensor<T>::from_vector({OH, OW}, std::move(ys));
  auto xg = Tensor<T>::from_vector({OH, OW}, std::move(xs));
  return bilinear_sample(x, yg, xg);
}

}  // namespace bafpn
