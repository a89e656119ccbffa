#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bafpn/galm.hpp"
#include "bafpn/rng.hpp"
#include "bafpn/seam.hpp"
#include "bafpn/spam.hpp"

using namespace bafpn;
using Td = Tensor<double>;

namespace {

Td randt(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Td::from_vector(s, std::move(v));
}

GalmParams<double> identity_mix_galm(Rng& rng, std::int64_t cin, std::int64_t cout,
                                     std::int64_t g) {
  GalmParams<double> p;
  p.groups = g;
  p.shared_w = randt({cout, cin / g, 1, 1}, rng);
  p.shared_b = randt({cout}, rng);
  std::vector<double> mix(static_cast<std::size_t>(cout * g * cout), 0.0);
  for (std::int64_t s = 0; s < cout; ++s) {
    for (std::int64_t j = 0; j < g; ++j) mix[(s * g + j) * cout + s] = 1.0 / static_cast<double>(g);
  }
  p.mix_w = Td::from_vector({cout, g, cout}, std::move(mix));
  return p;
}

SeamParams<double> zero_seam(std::int64_t c, std::int64_t hidden) {
  SeamParams<double> p;
  p.se_w1 = Td::zeros({hidden, c, 1, 1});
  p.se_b1 = Td::zeros({hidden});
  p.se_w2 = Td::zeros({c, hidden, 1, 1});
  p.se_b2 = Td::zeros({c});
  p.agg_w = Td::zeros({c, 1, 2, 2});
  p.agg_b = Td::zeros({c});
  p.pix_w = Td::zeros({c, 2, 7, 7});
  p.pix_b = Td::zeros({c});
  p.kappa = Td::zeros({1});
  return p;
}

SeamParams<double> rand_seam(Rng& rng, std::int64_t c, std::int64_t hidden) {
  SeamParams<double> p;
  p.se_w1 = randt({hidden, c, 1, 1}, rng, -0.5, 0.5);
  p.se_b1 = randt({hidden}, rng, -0.3, 0.3);
  p.se_w2 = randt({c, hidden, 1, 1}, rng, -0.5, 0.5);
  p.se_b2 = randt({c}, rng, -0.3, 0.3);
  p.agg_w = randt({c, 1, 2, 2}, rng, -0.5, 0.5);
  p.agg_b = randt({c}, rng, -0.3, 0.3);
  p.pix_w = randt({c, 2, 7, 7}, rng, -0.2, 0.2);
  p.pix_b = randt({c}, rng, -0.3, 0.3);
  p.kappa = randt({1}, rng);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// galm
// ---------------------------------------------------------------------------

TEST_CASE("galm identity mixing with one group equals the shared conv") {
  Rng rng(41);
  auto x = randt({2, 4, 3, 3}, rng);
  auto p = identity_mix_galm(rng, 4, 4, 1);  // g=1, mix = delta
  auto out = galm_forward(x, p);
  auto direct = shared_group_conv1x1(x, 1, p.shared_w, p.shared_b);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("galm with two groups and averaging mix") {
  Rng rng(43);
  auto x = randt({1, 4, 2, 2}, rng);
  auto p = identity_mix_galm(rng, 4, 2, 2);  // mix[s,j,t] = delta_st / 2
  auto out = galm_forward(x, p);

  // hand expansion: average of the per-group shared-conv outputs
  auto hat = shared_group_conv1x1(x, 2, p.shared_w, p.shared_b);  // [1,4,2,2]
  auto g1 = channel_slice(hat, 0, 2);
  auto g2 = channel_slice(hat, 2, 4);
  auto avg = scale(add(g1, g2), 0.5);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(avg.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("galm zero mix gives zero output") {
  Rng rng(47);
  auto x = randt({1, 4, 2, 2}, rng);
  GalmParams<double> p;
  p.groups = 2;
  p.shared_w = randt({3, 2, 1, 1}, rng);
  p.shared_b = randt({3}, rng);
  p.mix_w = Td::zeros({3, 2, 3});
  auto out = galm_forward(x, p);
  for (double e : out.data()) CHECK(e == 0.0);
}

TEST_CASE("galm parameter count formula") {
  CHECK(galm_param_count(4, 2, 2) == 14);
  CHECK(galm_param_count(6, 3, 1) == 3 * 6 + 3 + 3 * 3);  // g=1 specialization
  CHECK(galm_param_count(256, 256, 4) == 278784);
  CHECK_THROWS_AS(galm_param_count(8, 4, 3), ConfigError);
}

TEST_CASE("galm commutes with spatial permutations") {
  Rng rng(53);
  auto p = identity_mix_galm(rng, 4, 3, 2);
  p.mix_w = randt({3, 2, 3}, rng);
  auto x = randt({1, 4, 2, 3}, rng);
  auto y = galm_forward(x, p);

  // reverse the 6 spatial positions of every channel
  std::vector<double> rev = x.data();
  for (int c = 0; c < 4; ++c) std::reverse(rev.begin() + c * 6, rev.begin() + (c + 1) * 6);
  auto yrev = galm_forward(Td::from_vector({1, 4, 2, 3}, std::move(rev)), p);
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 6; ++s) {
      CHECK(yrev.data()[c * 6 + s] == doctest::Approx(y.data()[c * 6 + (5 - s)]));
    }
  }
}

TEST_CASE("galm group permutation with symmetric mix") {
  Rng rng(59);
  auto p = identity_mix_galm(rng, 6, 3, 2);  // symmetric over j by construction
  auto x = randt({1, 6, 2, 2}, rng);
  auto y = galm_forward(x, p);

  // swap the two input channel groups
  std::vector<double> sw(x.numel());
  const std::int64_t half = 3 * 4;
  std::copy(x.data().begin() + half, x.data().end(), sw.begin());
  std::copy(x.data().begin(), x.data().begin() + half, sw.begin() + half);
  auto ysw = galm_forward(Td::from_vector({1, 6, 2, 2}, std::move(sw)), p);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    CHECK(ysw.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// spam / stdds
// ---------------------------------------------------------------------------

TEST_CASE("space_to_depth on the 2x2 block") {
  auto x = Td::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = space_to_depth(x);
  CHECK(y.shape() == Shape{1, 4, 1, 1});
  CHECK(y.data() == std::vector<double>{1, 2, 3, 4});
  CHECK(y.numel() == x.numel());
  CHECK_THROWS_AS(space_to_depth(Td::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("stdds closed form with gated-off attention") {
  // zero attention weights make both gates exactly 0.5; a compression kernel
  // that averages the four phase copies of each channel yields 0.25 times the
  // 2x2 average pool, times the two 0.5 gates
  Rng rng(61);
  const std::int64_t C = 2;
  auto x = randt({1, C, 4, 4}, rng);
  StddsParams<double> p;
  p.sa_kernel = 3;
  p.sa_w = Td::zeros({1, 2, 3, 3});
  p.sa_b = Td::zeros({1});
  p.ca_w1 = Td::zeros({8, 4 * C, 1, 1});
  p.ca_b1 = Td::zeros({8});
  p.ca_w2 = Td::zeros({4 * C, 8, 1, 1});
  p.ca_b2 = Td::zeros({4 * C});
  std::vector<double> cw(C * 4 * C, 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ph = 0; ph < 4; ++ph) cw[c * 4 * C + ph * C + c] = 0.25;
  }
  p.compress_w = Td::from_vector({C, 4 * C, 1, 1}, std::move(cw));
  p.compress_b = Td::zeros({C});

  auto out = stdds_forward(x, p);
  CHECK(out.shape() == Shape{1, C, 2, 2});
  for (std::int64_t c = 0; c < C; ++c) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        double pool = 0.0;
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            pool += x.data()[(c * 4 + 2 * i + di) * 4 + 2 * j + dj];
          }
        }
        pool *= 0.25;  // block mean
        const double want = 0.25 * pool;  // two 0.5 gates on top of the phase average
        CHECK(out.data()[(c * 2 + i) * 2 + j] == doctest::Approx(want));
      }
    }
  }
}

TEST_CASE("offset head zero init and mask range") {
  Rng rng(67);
  const std::int64_t C = 3;
  auto ds = randt({1, C, 4, 4}, rng);
  auto deep = randt({1, C, 4, 4}, rng);
  SpamParams<double> p;
  p.om1_w = randt({C, 2 * C, 1, 1}, rng);
  p.om1_b = randt({C}, rng);
  p.om2_w = Td::zeros({27, C, 3, 3});
  p.om2_b = Td::zeros({27});
  auto field = offset_mask_head(ds, deep, p);
  for (double e : field.offsets.data()) CHECK(e == 0.0);
  for (double e : field.masks.data()) CHECK(e == 0.5);

  p.om2_w = randt({27, C, 3, 3}, rng);
  p.om2_b = randt({27}, rng);
  auto field2 = offset_mask_head(ds, deep, p);
  for (double e : field2.masks.data()) {
    CHECK(e > 0.0);
    CHECK(e < 1.0);
  }
  CHECK_THROWS_AS(offset_mask_head(ds, randt({1, C, 2, 2}, rng), p), ShapeError);
}

TEST_CASE("offset head translation equivariance away from borders") {
  Rng rng(71);
  const std::int64_t C = 2, H = 8, W = 8;
  SpamParams<double> p;
  p.om1_w = randt({C, 2 * C, 1, 1}, rng);
  p.om1_b = randt({C}, rng);
  p.om2_w = randt({27, C, 3, 3}, rng);
  p.om2_b = randt({27}, rng);

  auto ds = randt({1, C, H, W}, rng);
  auto deep = randt({1, C, H, W}, rng);
  // shift both inputs right by one column
  auto shift_right = [&](const Td& t) {
    std::vector<double> v(t.numel(), 0.0);
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t i = 0; i < H; ++i) {
        for (std::int64_t j = 1; j < W; ++j) {
          v[(c * H + i) * W + j] = t.data()[(c * H + i) * W + j - 1];
        }
      }
    }
    return Td::from_vector({1, C, H, W}, std::move(v));
  };
  auto f0 = offset_mask_head(ds, deep, p);
  auto f1 = offset_mask_head(shift_right(ds), shift_right(deep), p);
  // interior pixels (two columns away from any border) must match shifted
  for (std::int64_t c = 0; c < 18; ++c) {
    for (std::int64_t i = 2; i < H - 2; ++i) {
      for (std::int64_t j = 2; j < W - 2; ++j) {
        const double a = f1.offsets.data()[(c * H + i) * W + j];
        const double b = f0.offsets.data()[(c * H + i) * W + j - 1];
        CHECK(a == doctest::Approx(b).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("spam forward composition at zero-initialized head") {
  Rng rng(73);
  const std::int64_t C = 3;
  auto shallow = randt({1, C, 8, 8}, rng);
  auto deep = randt({1, C, 4, 4}, rng);

  SpamParams<double> p;
  p.stdds.sa_kernel = 3;
  p.stdds.sa_w = randt({1, 2, 3, 3}, rng);
  p.stdds.sa_b = randt({1}, rng);
  p.stdds.ca_w1 = randt({8, 4 * C, 1, 1}, rng);
  p.stdds.ca_b1 = randt({8}, rng);
  p.stdds.ca_w2 = randt({4 * C, 8, 1, 1}, rng);
  p.stdds.ca_b2 = randt({4 * C}, rng);
  p.stdds.compress_w = randt({C, 4 * C, 1, 1}, rng);
  p.stdds.compress_b = randt({C}, rng);
  p.om1_w = randt({C, 2 * C, 1, 1}, rng);
  p.om1_b = randt({C}, rng);
  p.om2_w = Td::zeros({27, C, 3, 3});
  p.om2_b = Td::zeros({27});
  p.dcn_w = randt({C, C, 3, 3}, rng);
  p.dcn_b = randt({C}, rng);

  auto out = spam_forward(shallow, deep, p);

  // with offsets 0 and masks 0.5 the DCN term is the half-gain plain conv
  auto ds = stdds_forward(shallow, p.stdds);
  ConvSpec spec{C, C, 3, 3, 1, 1, 1, false};
  auto conv = conv2d(deep, spec, p.dcn_w);
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t s = 0; s < 16; ++s) {
      const double want = 0.5 * conv.data()[c * 16 + s] + p.dcn_b.data()[c] + ds.data()[c * 16 + s];
      CHECK(out.data()[c * 16 + s] == doctest::Approx(want).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(spam_forward(shallow, randt({1, C, 3, 3}, rng), p), ShapeError);
}

TEST_CASE("spam zero shallow input reduces to the deformable term") {
  Rng rng(79);
  const std::int64_t C = 2;
  auto shallow = Td::zeros({1, C, 8, 8});
  auto deep = randt({1, C, 4, 4}, rng);

  SpamParams<double> p;
  p.stdds.sa_kernel = 3;
  p.stdds.sa_w = randt({1, 2, 3, 3}, rng);
  p.stdds.sa_b = Td::zeros({1});
  p.stdds.ca_w1 = randt({8, 4 * C, 1, 1}, rng);
  p.stdds.ca_b1 = Td::zeros({8});
  p.stdds.ca_w2 = randt({4 * C, 8, 1, 1}, rng);
  p.stdds.ca_b2 = Td::zeros({4 * C});
  p.stdds.compress_w = randt({C, 4 * C, 1, 1}, rng);
  p.stdds.compress_b = Td::zeros({C});
  p.om1_w = randt({C, 2 * C, 1, 1}, rng);
  p.om1_b = randt({C}, rng);
  p.om2_w = randt({27, C, 3, 3}, rng);
  p.om2_b = randt({27}, rng);
  p.dcn_w = randt({C, C, 3, 3}, rng);
  p.dcn_b = randt({C}, rng);

  auto out = spam_forward(shallow, deep, p);
  auto ds = stdds_forward(shallow, p.stdds);
  for (double e : ds.data()) CHECK(e == 0.0);
  auto field = offset_mask_head(ds, deep, p);
  ConvSpec spec{C, C, 3, 3, 1, 1, 1, true};
  auto dcn = deform_conv2d(deep, spec, p.dcn_w, p.dcn_b, field);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(dcn.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("spam gradients reach every parameter") {
  Rng rng(83);
  const std::int64_t C = 2;
  auto shallow = randt({1, C, 8, 8}, rng);
  auto deep = randt({1, C, 4, 4}, rng);

  SpamParams<double> p;
  p.stdds.sa_kernel = 3;
  std::vector<Td*> all;
  p.stdds.sa_w = randt({1, 2, 3, 3}, rng);
  p.stdds.sa_b = randt({1}, rng);
  p.stdds.ca_w1 = randt({8, 4 * C, 1, 1}, rng);
  p.stdds.ca_b1 = randt({8}, rng);
  p.stdds.ca_w2 = randt({4 * C, 8, 1, 1}, rng);
  p.stdds.ca_b2 = randt({4 * C}, rng);
  p.stdds.compress_w = randt({C, 4 * C, 1, 1}, rng);
  p.stdds.compress_b = randt({C}, rng);
  p.om1_w = randt({C, 2 * C, 1, 1}, rng);
  p.om1_b = randt({C}, rng);
  p.om2_w = randt({27, C, 3, 3}, rng, -0.2, 0.2);
  p.om2_b = randt({27}, rng, -0.2, 0.2);
  p.dcn_w = randt({C, C, 3, 3}, rng);
  p.dcn_b = randt({C}, rng);
  for (Td* t : {&p.stdds.sa_w, &p.stdds.sa_b, &p.stdds.ca_w1, &p.stdds.ca_b1, &p.stdds.ca_w2,
                &p.stdds.ca_b2, &p.stdds.compress_w, &p.stdds.compress_b, &p.om1_w, &p.om1_b,
                &p.om2_w, &p.om2_b, &p.dcn_w, &p.dcn_b}) {
    t->set_requires_grad(true);
    all.push_back(t);
  }

  backward(sum_all(spam_forward(shallow, deep, p)));
  for (Td* t : all) {
    double norm = 0.0;
    for (double g : t->grad()) norm += std::fabs(g);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("alignment recoverability with hand-set offsets") {
  // pooled smooth field, deep copy translated by a known shift; offsets set to
  // the negative shift with an identity kernel recover the clean target
  Rng rng(89);
  const std::int64_t C = 2, H = 32, W = 32;
  // smooth blobs kept far enough from the borders that an integer shift
  // loses only negligible mass
  std::vector<double> field(C * H * W, 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    for (int blob = 0; blob < 4; ++blob) {
      const double cy = rng.uniform(12.0, H - 13.0), cx = rng.uniform(12.0, W - 13.0);
      const double s2 = rng.uniform(2.0, 2.5);
      const double amp = rng.uniform(0.5, 1.5);
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          field[(c * H + y) * W + x] += amp * std::exp(-d2 / (2 * s2 * s2));
        }
      }
    }
  }
  auto target = Td::from_vector({1, C, H, W}, field);

  auto make_shifted = [&](double dy, double dx) {
    std::vector<double> v(C * H * W, 0.0);
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          const double sy = y + dy, sx = x + dx;
          const auto y0 = static_cast<std::int64_t>(std::floor(sy));
          const auto x0 = static_cast<std::int64_t>(std::floor(sx));
          const double ly = sy - y0, lx = sx - x0;
          double acc = 0.0;
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              const std::int64_t yy = y0 + a, xx = x0 + b;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              acc += (a ? ly : 1 - ly) * (b ? lx : 1 - lx) * field[(c * H + yy) * W + xx];
            }
          }
          v[(c * H + y) * W + x] = acc;
        }
      }
    }
    return Td::from_vector({1, C, H, W}, std::move(v));
  };

  std::vector<double> idk(C * C * 9, 0.0);
  for (std::int64_t c = 0; c < C; ++c) idk[(c * C + c) * 9 + 4] = 1.0;
  auto w = Td::from_vector({C, C, 3, 3}, std::move(idk));
  ConvSpec spec{C, C, 3, 3, 1, 1, 1, true};
  auto masks = Td::filled({1, 9, H, W}, 1.0);

  auto align_mse = [&](double dy, double dx) {
    auto deep = make_shifted(dy, dx);
    auto off = Td::zeros({1, 18, H, W});
    for (int k = 0; k < 9; ++k) {
      for (std::int64_t s = 0; s < H * W; ++s) {
        off.data()[(2 * k) * H * W + s] = -dy;
        off.data()[(2 * k + 1) * H * W + s] = -dx;
      }
    }
    auto rec = deform_conv2d(deep, spec, w, Td::zeros({C}), OffsetField<double>{off, masks});
    double mse = 0.0, ref = 0.0;
    for (std::int64_t i = 0; i < rec.numel(); ++i) {
      const double d = rec.data()[i] - target.data()[i];
      mse += d * d;
      ref += target.data()[i] * target.data()[i];
    }
    return std::pair{mse / rec.numel(), std::sqrt(mse / ref)};
  };

  auto [mse_int, rel_int] = align_mse(0.0, 2.0);
  CHECK(mse_int <= 1e-6);
  auto [mse_half, rel_half] = align_mse(0.0, 0.5);
  CHECK(rel_half <= 0.05);  // bilinear recovery of a half-pixel shift
}

// ---------------------------------------------------------------------------
// seam
// ---------------------------------------------------------------------------

TEST_CASE("seam channel mask") {
  Rng rng(97);
  const std::int64_t C = 4;
  auto fh = randt({2, C, 3, 3}, rng);
  auto f = randt({2, C, 3, 3}, rng);

  auto zp = zero_seam(C, 8);
  auto m0 = seam_channel_mask(fh, f, zp);
  CHECK(m0.shape() == Shape{2, C, 1, 1});
  for (double e : m0.data()) CHECK(e == 0.5);

  auto p = rand_seam(rng, C, 8);
  auto m1 = seam_channel_mask(fh, f, p);
  auto m2 = seam_channel_mask(f, fh, p);  // swapped order changes the grid
  double diff = 0.0;
  for (std::int64_t i = 0; i < m1.numel(); ++i) diff += std::fabs(m1.data()[i] - m2.data()[i]);
  CHECK(diff > 1e-6);
  for (double e : m1.data()) {
    CHECK(e > 0.0);
    CHECK(e < 1.0);
  }
}

TEST_CASE("seam pixel mask group isolation") {
  Rng rng(101);
  const std::int64_t C = 4, H = 5, W = 5;
  auto fh = randt({1, C, H, W}, rng);
  auto f = randt({1, C, H, W}, rng);
  auto p = rand_seam(rng, C, 8);

  auto m0 = seam_pixel_mask(fh, f, p);
  for (double e : m0.data()) {
    CHECK(e > 0.0);
    CHECK(e < 1.0);
  }

  // perturbing channel j of f_hat may change only mask channel j
  for (std::int64_t j = 0; j < C; ++j) {
    auto fh2 = Td::from_vector(fh.shape(), fh.data());
    for (std::int64_t s = 0; s < H * W; ++s) fh2.data()[j * H * W + s] += 0.37;
    auto m1 = seam_pixel_mask(fh2, f, p);
    for (std::int64_t c = 0; c < C; ++c) {
      double delta = 0.0;
      for (std::int64_t s = 0; s < H * W; ++s) {
        delta += std::fabs(m1.data()[c * H * W + s] - m0.data()[c * H * W + s]);
      }
      if (c == j) {
        CHECK(delta > 1e-9);
      } else {
        CHECK(delta == 0.0);
      }
    }
  }

  auto zp = zero_seam(C, 8);
  auto mz = seam_pixel_mask(fh, f, zp);
  for (double e : mz.data()) CHECK(e == 0.5);
}

TEST_CASE("seam fusion") {
  Rng rng(103);
  const std::int64_t C = 4;
  auto fh = randt({2, C, 4, 4}, rng);
  auto f = randt({2, C, 4, 4}, rng);

  // zero-initialized params reproduce plain additive fusion bitwise
  auto zp = zero_seam(C, 8);
  auto fused = seam_fuse(fh, f, zp);
  auto plain = add(fh, f);
  CHECK(fused.data() == plain.data());

  // zero deep input passes the lateral through
  auto fz = seam_fuse(Td::zeros({2, C, 4, 4}), f, rand_seam(rng, C, 8));
  CHECK(fz.data() == f.data());

  // geometric mean bound and total gain range
  auto p = rand_seam(rng, C, 8);
  auto mc = seam_channel_mask(fh, f, p);
  auto mp = seam_pixel_mask(fh, f, p);
  auto gm = sqrt(mul(mp, mc));
  const std::int64_t hw = 16;
  for (std::int64_t i = 0; i < gm.numel(); ++i) {
    const double a = mp.data()[i];
    const double b = mc.data()[i / hw];
    CHECK(gm.data()[i] >= std::min(a, b) - 1e-12);
    CHECK(gm.data()[i] <= std::max(a, b) + 1e-12);
    const double gain = gm.data()[i] + 1.0 / (1.0 + std::exp(-p.kappa.item()));
    CHECK(gain > 0.0);
    CHECK(gain < 2.0);
  }
}
