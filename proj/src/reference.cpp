#include "bafpn/reference.hpp"

#include <cmath>

namespace bafpn::ref {

DenseArray::DenseArray(std::vector<std::int64_t> s, double fill) : shape(std::move(s)) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  v.assign(static_cast<std::size_t>(n), fill);
}

std::int64_t DenseArray::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

double& DenseArray::at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
  return v[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

double DenseArray::at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
  return v[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
}

DenseArray naive_conv2d(const DenseArray& x, const DenseArray& w, const std::vector<double>* bias,
                        int stride, int pad, std::int64_t groups) {
  if (x.shape.size() != 4 || w.shape.size() != 4) throw ShapeError("naive_conv2d: need 4-d arrays");
  const std::int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t OC = w.shape[0], IPG = w.shape[1], KH = w.shape[2], KW = w.shape[3];
  if (C != groups * IPG || OC % groups != 0) {
    throw ShapeError("naive_conv2d: channel/group mismatch");
  }
  const std::int64_t OPG = OC / groups;
  const std::int64_t OH = (H + 2 * pad - KH) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - KW) / stride + 1;
  DenseArray y({B, OC, OH, OW});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t oc = 0; oc < OC; ++oc) {
      const std::int64_t g = oc / OPG;
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (std::int64_t ic = 0; ic < IPG; ++ic) {
            for (std::int64_t kh = 0; kh < KH; ++kh) {
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                const std::int64_t ih = oh * stride - pad + kh;
                const std::int64_t iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w.v[((oc * IPG + ic) * KH + kh) * KW + kw] * x.at4(b, g * IPG + ic, ih, iw);
              }
            }
          }
          y.at4(b, oc, oh, ow) = acc;
        }
      }
    }
  }
  return y;
}

namespace {

double bilinear_zero_pad(const DenseArray& x, std::int64_t b, std::int64_t c, double h, double w) {
  const std::int64_t H = x.shape[2], W = x.shape[3];
  if (h <= -1.0 || h >= static_cast<double>(H) || w <= -1.0 || w >= static_cast<double>(W)) {
    return 0.0;
  }
  const std::int64_t h0 = static_cast<std::int64_t>(std::floor(h));
  const std::int64_t w0 = static_cast<std::int64_t>(std::floor(w));
  const double lh = h - static_cast<double>(h0);
  const double lw = w - static_cast<double>(w0);
  double val = 0.0;
  for (int dh = 0; dh < 2; ++dh) {
    for (int dw = 0; dw < 2; ++dw) {
      const std::int64_t hh = h0 + dh;
      const std::int64_t ww = w0 + dw;
      if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
      const double wt = (dh ? lh : 1.0 - lh) * (dw ? lw : 1.0 - lw);
      val += wt * x.at4(b, c, hh, ww);
    }
  }
  return val;
}

}  // namespace

DenseArray naive_deform_conv2d(const DenseArray& x, const DenseArray& w,
                               const std::vector<double>* bias, const DenseArray& offsets,
                               const DenseArray& masks) {
  const std::int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::int64_t OC = w.shape[0];
  if (w.shape[1] != C || w.shape[2] != 3 || w.shape[3] != 3) {
    throw ShapeError("naive_deform_conv2d: weight must be [OC,C,3,3]");
  }
  if (offsets.shape != std::vector<std::int64_t>{B, 18, H, W} ||
      masks.shape != std::vector<std::int64_t>{B, 9, H, W}) {
    throw ShapeError("naive_deform_conv2d: bad offset/mask shape");
  }
  DenseArray y({B, OC, H, W});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t oc = 0; oc < OC; ++oc) {
      for (std::int64_t i = 0; i < H; ++i) {
        for (std::int64_t j = 0; j < W; ++j) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (int p = 0; p < 3; ++p) {
            for (int q = 0; q < 3; ++q) {
              const int k = p * 3 + q;
              const double dy = offsets.at4(b, 2 * k, i, j);
              const double dx = offsets.at4(b, 2 * k + 1, i, j);
              const double m = masks.at4(b, k, i, j);
              const double sy = static_cast<double>(i + p - 1) + dy;
              const double sx = static_cast<double>(j + q - 1) + dx;
              for (std::int64_t ic = 0; ic < C; ++ic) {
                acc += w.v[((oc * C + ic) * 3 + p) * 3 + q] * bilinear_zero_pad(x, b, ic, sy, sx) * m;
              }
            }
          }
          y.at4(b, oc, i, j) = acc;
        }
      }
    }
  }
  return y;
}

DenseArray naive_space_to_depth(const DenseArray& x) {
  const std::int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("naive_space_to_depth: odd spatial dims");
  const std::int64_t OH = H / 2, OW = W / 2;
  DenseArray y({B, 4 * C, OH, OW});
  const int phases[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (std::int64_t b = 0; b < B; ++b) {
    for (int ph = 0; ph < 4; ++ph) {
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t i = 0; i < OH; ++i) {
          for (std::int64_t j = 0; j < OW; ++j) {
            y.at4(b, ph * C + c, i, j) = x.at4(b, c, 2 * i + phases[ph][0], 2 * j + phases[ph][1]);
          }
        }
      }
    }
  }
  return y;
}

CloseReport assert_allclose(const DenseArray& a, const DenseArray& b, double atol, double rtol) {
  if (a.shape != b.shape) {
    throw ShapeError("assert_allclose: shapes differ");
  }
  CloseReport rep;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double abs_dev = std::fabs(a.v[i] - b.v[i]);
    const double rel_dev = abs_dev / std::max(std::fabs(b.v[i]), 1e-300);
    if (abs_dev > rep.max_abs) {
      rep.max_abs = abs_dev;
      rep.worst_index = i;
    }
    rep.max_rel = std::max(rep.max_rel, rel_dev);
    if (abs_dev > atol + rtol * std::fabs(b.v[i])) rep.pass = false;
  }
  return rep;
}

}  // namespace bafpn::ref
