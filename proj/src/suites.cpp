#include "bafpn/suites.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "bafpn/gradcheck.hpp"
#include "bafpn/neck.hpp"
#include "bafpn/reference.hpp"
#include "bafpn/rng.hpp"

namespace bafpn {

namespace {

using Td = Tensor<double>;

Td rand_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Td::from_vector(s, std::move(v));
}

// values with |v| >= margin, mixed signs (relu kink avoidance)
Td rand_tensor_margin(const Shape& s, Rng& rng, double margin) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& e : v) {
    const double mag = rng.uniform(margin, 1.0);
    e = rng.next_double() < 0.5 ? -mag : mag;
  }
  return Td::from_vector(s, std::move(v));
}

// offsets whose fractional part stays in [margin, 1-margin] so deformable
// sampling points keep away from the bilinear cell boundaries
Td rand_offsets(const Shape& s, Rng& rng, double margin = 0.1) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& e : v) {
    const double whole = static_cast<double>(rng.uniform_int(-2, 1));
    e = whole + rng.uniform(margin, 1.0 - margin);
  }
  return Td::from_vector(s, std::move(v));
}

// scalar loss with fixed random weights, keeps the check well conditioned
std::function<Td(const Td&)> make_weighted_sum(const Shape& out_shape, Rng& rng) {
  auto r = rand_tensor(out_shape, rng, 0.2, 1.0);
  return [r](const Td& y) { return sum_all(mul(y, r)); };
}

struct GradSuite {
  std::uint64_t seed;
  double eps;
  double tol_override;
  SuiteResult result;

  void run(const std::string& name, double tol,
           const std::function<GradCheckReport(Rng&)>& attempt) {
    if (tol_override > 0) tol = tol_override;
    SuiteRow row{name, 0.0, tol, false, 0};
    for (int k = 0; k < 3; ++k) {
      Rng rng(seed + 7919 * static_cast<std::uint64_t>(k) +
              std::hash<std::string>{}(name));
      ++row.attempts;
      row.value = attempt(rng).max_rel_err;
      if (row.value <= tol) {
        row.pass = true;
        break;
      }
    }
    result.pass = result.pass && row.pass;
    result.rows.push_back(std::move(row));
  }
};

GalmParams<double> rand_galm(Rng& rng, std::int64_t cin, std::int64_t cout, std::int64_t g) {
  GalmParams<double> p;
  p.groups = g;
  p.shared_w = rand_tensor({cout, cin / g, 1, 1}, rng);
  p.shared_b = rand_tensor({cout}, rng);
  p.mix_w = rand_tensor({cout, g, cout}, rng);
  return p;
}

StddsParams<double> rand_stdds(Rng& rng, std::int64_t c, int k, int reduction) {
  StddsParams<double> p;
  p.sa_kernel = k;
  p.sa_w = rand_tensor({1, 2, k, k}, rng, -0.4, 0.4);
  p.sa_b = rand_tensor({1}, rng);
  const std::int64_t c4 = 4 * c;
  const std::int64_t hid = attn_hidden(c4, reduction);
  p.ca_w1 = rand_tensor({hid, c4, 1, 1}, rng, -0.4, 0.4);
  p.ca_b1 = rand_tensor({hid}, rng, -0.3, 0.3);
  p.ca_w2 = rand_tensor({c4, hid, 1, 1}, rng, -0.4, 0.4);
  p.ca_b2 = rand_tensor({c4}, rng, -0.3, 0.3);
  p.compress_w = rand_tensor({c, c4, 1, 1}, rng, -0.4, 0.4);
  p.compress_b = rand_tensor({c}, rng, -0.3, 0.3);
  return p;
}

SpamParams<double> rand_spam(Rng& rng, std::int64_t c, int k, int reduction) {
  SpamParams<double> p;
  p.stdds = rand_stdds(rng, c, k, reduction);
  p.om1_w = rand_tensor({c, 2 * c, 1, 1}, rng, -0.4, 0.4);
  p.om1_b = rand_tensor({c}, rng, -0.3, 0.3);
  p.om2_w = rand_tensor({27, c, 3, 3}, rng, -0.1, 0.1);
  p.om2_b = rand_tensor({27}, rng, -0.2, 0.2);
  p.dcn_w = rand_tensor({c, c, 3, 3}, rng, -0.3, 0.3);
  p.dcn_b = rand_tensor({c}, rng, -0.3, 0.3);
  return p;
}

SeamParams<double> rand_seam(Rng& rng, std::int64_t c, int reduction) {
  SeamParams<double> p;
  const std::int64_t hid = attn_hidden(c, reduction);
  p.se_w1 = rand_tensor({hid, c, 1, 1}, rng, -0.4, 0.4);
  p.se_b1 = rand_tensor({hid}, rng, -0.3, 0.3);
  p.se_w2 = rand_tensor({c, hid, 1, 1}, rng, -0.4, 0.4);
  p.se_b2 = rand_tensor({c}, rng, -0.3, 0.3);
  p.agg_w = rand_tensor({c, 1, 2, 2}, rng, -0.4, 0.4);
  p.agg_b = rand_tensor({c}, rng, -0.3, 0.3);
  p.pix_w = rand_tensor({c, 2, 7, 7}, rng, -0.2, 0.2);
  p.pix_b = rand_tensor({c}, rng, -0.3, 0.3);
  p.kappa = rand_tensor({1}, rng);
  return p;
}

}  // namespace

SuiteResult run_gradcheck_suite(std::uint64_t seed, double eps, double tol_override) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuite s{seed, eps, tol_override, {}};
  constexpr double kSmooth = 1e-7;
  constexpr double kKink = 1e-5;
  constexpr double kBlock = 1e-4;

  s.run("sigmoid", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 4, 5}, rng, -2, 2);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck([&](const std::vector<Td>& in) { return loss(sigmoid(in[0])); },
                                 {x}, s.eps);
  });
  s.run("sqrt", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 4, 4}, rng, 0.3, 2.0);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck([&](const std::vector<Td>& in) { return loss(sqrt(in[0])); }, {x},
                                 s.eps);
  });
  s.run("relu", kKink, [&](Rng& rng) {
    auto x = rand_tensor_margin({2, 3, 4, 4}, rng, 1e-2);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck([&](const std::vector<Td>& in) { return loss(relu(in[0])); }, {x},
                                 s.eps);
  });
  s.run("add_broadcast", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 4, 4}, rng);
    auto v = rand_tensor({2, 3, 1, 1}, rng);
    auto k = rand_tensor({1}, rng);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(add(add(in[0], in[1]), in[2])); }, {x, v, k},
        s.eps);
  });
  s.run("mul_broadcast", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 4, 4}, rng);
    auto v = rand_tensor({2, 3, 1, 1}, rng);
    auto m = rand_tensor({2, 1, 4, 4}, rng);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(mul(mul(in[0], in[1]), in[2])); }, {x, v, m},
        s.eps);
  });
  s.run("channel_combine", kSmooth, [&](Rng& rng) {
    auto a = rand_tensor({2, 3, 4, 4}, rng);
    auto b = rand_tensor({2, 3, 4, 4}, rng);
    auto loss = make_weighted_sum({2, 12, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          return loss(concat_channels<double>({interleave_channels(in[0], in[1]),
                                               channel_slice(in[0], 0, 3), in[1]}));
        },
        {a, b}, s.eps);
  });
  s.run("strided_subsample", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 6, 6}, rng);
    auto loss = make_weighted_sum({2, 3, 3, 3}, rng);
    const int rp = static_cast<int>(rng.uniform_int(0, 1));
    const int cp = static_cast<int>(rng.uniform_int(0, 1));
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(strided_subsample(in[0], rp, cp)); }, {x},
        s.eps);
  });
  s.run("reduce_mean_avg", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 4, 4}, rng);
    auto l1 = make_weighted_sum({2, 1, 4, 4}, rng);
    auto l2 = make_weighted_sum({2, 4, 1, 1}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          return add(l1(mean_over_channels(in[0])), l2(global_avg(in[0])));
        },
        {x}, s.eps);
  });
  s.run("reduce_max", kKink, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 4, 4}, rng);
    auto l1 = make_weighted_sum({2, 1, 4, 4}, rng);
    auto l2 = make_weighted_sum({2, 4, 1, 1}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          return add(l1(max_over_channels(in[0])), l2(global_max(in[0])));
        },
        {x}, s.eps);
  });
  s.run("conv2d", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 6, 6}, rng);
    auto w = rand_tensor({4, 2, 3, 3}, rng);
    auto b = rand_tensor({4}, rng);
    ConvSpec spec{4, 2, 3, 3, 2, 1, 2, true};
    auto loss = make_weighted_sum({2, 4, 3, 3}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(conv2d(in[0], spec, in[1], in[2])); },
        {x, w, b}, s.eps);
  });
  s.run("shared_group_conv1x1", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 6, 4, 4}, rng);
    auto w = rand_tensor({3, 2, 1, 1}, rng);
    auto b = rand_tensor({3}, rng);
    auto loss = make_weighted_sum({2, 9, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(shared_group_conv1x1(in[0], 3, in[1], in[2])); },
        {x, w, b}, s.eps);
  });
  s.run("nearest_upsample2x", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 3, 3}, rng);
    auto loss = make_weighted_sum({2, 3, 6, 6}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(nearest_upsample2x(in[0])); }, {x}, s.eps);
  });
  s.run("bilinear_sample", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 5, 5}, rng);
    auto yg = rand_offsets({4, 4}, rng, 0.1);
    auto xg = rand_offsets({4, 4}, rng, 0.1);
    // recenters grids into the plane so most samples land in bounds
    for (auto& v : yg.data()) v += 2.0;
    for (auto& v : xg.data()) v += 2.0;
    auto loss = make_weighted_sum({2, 3, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(bilinear_sample(in[0], in[1], in[2])); },
        {x, yg, xg}, s.eps);
  });
  s.run("deform_conv2d", kKink, [&](Rng& rng) {
    auto x = rand_tensor({2, 3, 5, 5}, rng);
    auto w = rand_tensor({3, 3, 3, 3}, rng);
    auto b = rand_tensor({3}, rng);
    auto off = rand_offsets({2, 18, 5, 5}, rng, 0.1);
    auto msk = rand_tensor({2, 9, 5, 5}, rng, 0.1, 0.9);
    ConvSpec spec{3, 3, 3, 3, 1, 1, 1, true};
    auto loss = make_weighted_sum({2, 3, 5, 5}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          return loss(deform_conv2d(in[0], spec, in[1], in[2],
                                    OffsetField<double>{in[3], in[4]}));
        },
        {x, w, b, off, msk}, s.eps);
  });
  s.run("spatial_attention", kKink, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 5, 5}, rng);
    auto w = rand_tensor({1, 2, 3, 3}, rng);
    auto b = rand_tensor({1}, rng);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(spatial_attention(in[0], in[1], in[2], 3)); },
        {x, w, b}, s.eps);
  });
  s.run("channel_attention", kKink, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 4, 4}, rng);
    auto w1 = rand_tensor({8, 4, 1, 1}, rng, -0.4, 0.4);
    auto b1 = rand_tensor({8}, rng, -0.3, 0.3);
    auto w2 = rand_tensor({4, 8, 1, 1}, rng, -0.4, 0.4);
    auto b2 = rand_tensor({4}, rng, -0.3, 0.3);
    auto loss = make_weighted_sum(x.shape(), rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          return loss(channel_attention(in[0], in[1], in[2], in[3], in[4]));
        },
        {x, w1, b1, w2, b2}, s.eps);
  });
  s.run("se_block", kKink, [&](Rng& rng) {
    auto v = rand_tensor({2, 4, 2, 2}, rng);
    auto w1 = rand_tensor({8, 4, 1, 1}, rng, -0.4, 0.4);
    auto b1 = rand_tensor({8}, rng, -0.3, 0.3);
    auto w2 = rand_tensor({4, 8, 1, 1}, rng, -0.4, 0.4);
    auto b2 = rand_tensor({4}, rng, -0.3, 0.3);
    auto loss = make_weighted_sum(v.shape(), rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) { return loss(se_block(in[0], in[1], in[2], in[3], in[4])); },
        {v, w1, b1, w2, b2}, s.eps);
  });
  s.run("galm_forward", kSmooth, [&](Rng& rng) {
    auto x = rand_tensor({2, 4, 4, 4}, rng);
    auto p = rand_galm(rng, 4, 3, 2);
    auto loss = make_weighted_sum({2, 3, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          GalmParams<double> q{in[1], in[2], in[3], 2};
          return loss(galm_forward(in[0], q));
        },
        {x, p.shared_w, p.shared_b, p.mix_w}, s.eps);
  });
  s.run("stdds_forward", kKink, [&](Rng& rng) {
    auto x = rand_tensor({1, 3, 6, 6}, rng);
    auto p = rand_stdds(rng, 3, 3, 16);
    std::vector<Td> leaves{x,       p.sa_w,  p.sa_b,       p.ca_w1,     p.ca_b1,
                           p.ca_w2, p.ca_b2, p.compress_w, p.compress_b};
    auto loss = make_weighted_sum({1, 3, 3, 3}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          StddsParams<double> q{in[1], in[2], 3, in[3], in[4], in[5], in[6], in[7], in[8]};
          return loss(stdds_forward(in[0], q));
        },
        leaves, s.eps);
  });
  s.run("offset_mask_head", kKink, [&](Rng& rng) {
    auto ds = rand_tensor({1, 3, 4, 4}, rng);
    auto deep = rand_tensor({1, 3, 4, 4}, rng);
    auto p = rand_spam(rng, 3, 3, 16);
    std::vector<Td> leaves{ds, deep, p.om1_w, p.om1_b, p.om2_w, p.om2_b};
    auto l1 = make_weighted_sum({1, 18, 4, 4}, rng);
    auto l2 = make_weighted_sum({1, 9, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          SpamParams<double> q;
          q.om1_w = in[2];
          q.om1_b = in[3];
          q.om2_w = in[4];
          q.om2_b = in[5];
          auto field = offset_mask_head(in[0], in[1], q);
          return add(l1(field.offsets), l2(field.masks));
        },
        leaves, s.eps);
  });
  s.run("spam_forward", kBlock, [&](Rng& rng) {
    auto shallow = rand_tensor({1, 3, 8, 8}, rng);
    auto deep = rand_tensor({1, 3, 4, 4}, rng);
    auto p = rand_spam(rng, 3, 3, 16);
    std::vector<Td> leaves{shallow,        deep,           p.stdds.sa_w,       p.stdds.sa_b,
                           p.stdds.ca_w1,  p.stdds.ca_b1,  p.stdds.ca_w2,      p.stdds.ca_b2,
                           p.stdds.compress_w, p.stdds.compress_b, p.om1_w,    p.om1_b,
                           p.om2_w,        p.om2_b,        p.dcn_w,            p.dcn_b};
    auto loss = make_weighted_sum({1, 3, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          SpamParams<double> q{{in[2], in[3], 3, in[4], in[5], in[6], in[7], in[8], in[9]},
                               in[10], in[11], in[12], in[13], in[14], in[15]};
          return loss(spam_forward(in[0], in[1], q));
        },
        leaves, s.eps);
  });
  s.run("seam_masks", kKink, [&](Rng& rng) {
    auto fh = rand_tensor({1, 4, 4, 4}, rng);
    auto f = rand_tensor({1, 4, 4, 4}, rng);
    auto p = rand_seam(rng, 4, 16);
    std::vector<Td> leaves{fh,      f,       p.se_w1, p.se_b1, p.se_w2, p.se_b2,
                           p.agg_w, p.agg_b, p.pix_w, p.pix_b, p.kappa};
    auto l1 = make_weighted_sum({1, 4, 1, 1}, rng);
    auto l2 = make_weighted_sum({1, 4, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          SeamParams<double> q{in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10]};
          return add(l1(seam_channel_mask(in[0], in[1], q)), l2(seam_pixel_mask(in[0], in[1], q)));
        },
        leaves, s.eps);
  });
  s.run("seam_fuse", kKink, [&](Rng& rng) {
    auto fh = rand_tensor({1, 4, 4, 4}, rng);
    auto f = rand_tensor({1, 4, 4, 4}, rng);
    auto p = rand_seam(rng, 4, 16);
    std::vector<Td> leaves{fh,      f,       p.se_w1, p.se_b1, p.se_w2, p.se_b2,
                           p.agg_w, p.agg_b, p.pix_w, p.pix_b, p.kappa};
    auto loss = make_weighted_sum({1, 4, 4, 4}, rng);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>& in) {
          SeamParams<double> q{in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10]};
          return loss(seam_fuse(in[0], in[1], q));
        },
        leaves, s.eps);
  });
  s.run("neck_l2_full", kBlock, [&](Rng& rng) {
    NeckConfig cfg;
    cfg.levels = 2;
    cfg.in_channels = {4, 4};
    cfg.out_channels = 4;
    cfg.galm_groups = 2;
    cfg.attn_kernel = 7;
    cfg.seed = rng.next_u64() & 0xffff;
    auto neck = build_neck<double>(cfg);
    randomize_parameters(neck, rng.next_u64(), 0.3);
    std::vector<Td> feats{rand_tensor({1, 4, 8, 8}, rng), rand_tensor({1, 4, 4, 4}, rng)};
    std::vector<Td> leaves;
    for (auto& p : neck.params) leaves.push_back(p.value);
    return finite_diff_gradcheck(
        [&](const std::vector<Td>&) {
          auto out = neck_forward(neck, feats);
          Td acc;
          for (std::size_t i = 0; i < out.size(); ++i) {
            auto part = sum_all(out[i]);
            acc = i == 0 ? part : add(acc, part);
          }
          return acc;
        },
        leaves, s.eps);
  });

  s.result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s.result;
}

// ---------------------------------------------------------------------------
// oracle equivalence
// ---------------------------------------------------------------------------

namespace {

ref::DenseArray to_dense(const Td& t) {
  ref::DenseArray a;
  a.shape = t.shape();
  a.v = t.data();
  return a;
}

double max_abs_dev(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void oracle_row(SuiteResult& result, const std::string& name, double value, double tol) {
  SuiteRow row{name, value, tol, value <= tol, 1};
  result.pass = result.pass && row.pass;
  result.rows.push_back(std::move(row));
}

}  // namespace

SuiteResult run_oracle_suite(int trials, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult result;
  Rng rng(seed ^ 0xabcdef);

  // randomized conv2d against the sextuple loop
  {
    double worst = 0.0;
    const std::int64_t group_choices[3] = {1, 2, 4};
    for (int t = 0; t < trials; ++t) {
      const std::int64_t g = group_choices[rng.uniform_int(0, 2)];
      const std::int64_t ipg = rng.uniform_int(1, std::max<std::int64_t>(1, 8 / g));
      const std::int64_t opg = rng.uniform_int(1, std::max<std::int64_t>(1, 8 / g));
      const int k = static_cast<int>(rng.uniform_int(1, 3));
      const int stride = static_cast<int>(rng.uniform_int(1, 2));
      const int pads[3] = {0, 1, 3};
      const int pad = pads[rng.uniform_int(0, 2)];
      const std::int64_t B = rng.uniform_int(1, 2);
      const std::int64_t H = rng.uniform_int(std::max(1, k - 2 * pad), 9);
      const std::int64_t W = rng.uniform_int(std::max(1, k - 2 * pad), 9);
      ConvSpec spec{g * opg, ipg, k, k, stride, pad, g, true};
      auto x = rand_tensor({B, g * ipg, H, W}, rng);
      auto w = rand_tensor({g * opg, ipg, k, k}, rng);
      auto b = rand_tensor({g * opg}, rng);
      auto fast = conv2d(x, spec, w, b);
      auto naive = ref::naive_conv2d(to_dense(x), to_dense(w), &b.data(), stride, pad, g);
      worst = std::max(worst, max_abs_dev(fast.data(), naive.v));
    }
    oracle_row(result, "conv2d_vs_naive", worst, 1e-12);
  }

  // the shared kernel equals per-group convolution, concatenated
  {
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      const std::int64_t g = rng.uniform_int(1, 3);
      const std::int64_t cg = rng.uniform_int(1, 3);
      const std::int64_t oc = rng.uniform_int(1, 3);
      const std::int64_t B = rng.uniform_int(1, 2), H = rng.uniform_int(2, 5),
                         W = rng.uniform_int(2, 5);
      auto x = rand_tensor({B, g * cg, H, W}, rng);
      auto w = rand_tensor({oc, cg, 1, 1}, rng);
      auto b = rand_tensor({oc}, rng);
      auto fused = shared_group_conv1x1(x, g, w, b);
      std::vector<Td> parts;
      for (std::int64_t j = 0; j < g; ++j) {
        auto grp = channel_slice(x, j * cg, (j + 1) * cg);
        parts.push_back(conv2d(grp, conv1x1_spec(cg, oc), w, b));
      }
      auto ref_out = concat_channels<double>(parts);
      worst = std::max(worst, max_abs_dev(fused.data(), ref_out.data()));
    }
    oracle_row(result, "shared_group_exact", worst, 0.0);
  }

  // deformable conv with zero offsets and unit masks is plain conv
  {
    double worst = 0.0;
    for (int t = 0; t < 5; ++t) {
      const std::int64_t B = rng.uniform_int(1, 2), C = rng.uniform_int(1, 4),
                         OC = rng.uniform_int(1, 4);
      const std::int64_t H = rng.uniform_int(3, 8), W = rng.uniform_int(3, 8);
      auto x = rand_tensor({B, C, H, W}, rng);
      auto w = rand_tensor({OC, C, 3, 3}, rng);
      auto b = rand_tensor({OC}, rng);
      OffsetField<double> of{Td::zeros({B, 18, H, W}), Td::filled({B, 9, H, W}, 1.0)};
      ConvSpec dspec{OC, C, 3, 3, 1, 1, 1, true};
      auto dcn = deform_conv2d(x, dspec, w, b, of);
      auto plain = conv2d(x, dspec, w, b);
      worst = std::max(worst, max_abs_dev(dcn.data(), plain.data()));
    }
    oracle_row(result, "dcn_degenerate_conv", worst, 1e-10);
  }

  // randomized deformable conv against the literal equation
  {
    double worst = 0.0;
    for (int t = 0; t < 5; ++t) {
      const std::int64_t B = rng.uniform_int(1, 2), C = rng.uniform_int(1, 3),
                         OC = rng.uniform_int(1, 3);
      const std::int64_t H = rng.uniform_int(3, 7), W = rng.uniform_int(3, 7);
      auto x = rand_tensor({B, C, H, W}, rng);
      auto w = rand_tensor({OC, C, 3, 3}, rng);
      auto b = rand_tensor({OC}, rng);
      auto off = rand_tensor({B, 18, H, W}, rng, -2.0, 2.0);
      auto msk = rand_tensor({B, 9, H, W}, rng, 0.0, 1.0);
      ConvSpec dspec{OC, C, 3, 3, 1, 1, 1, true};
      auto fast = deform_conv2d(x, dspec, w, b, OffsetField<double>{off, msk});
      auto naive =
          ref::naive_deform_conv2d(to_dense(x), to_dense(w), &b.data(), to_dense(off), to_dense(msk));
      worst = std::max(worst, max_abs_dev(fast.data(), naive.v));
    }
    oracle_row(result, "dcn_vs_naive", worst, 1e-10);
  }

  // uniform integer offset with an identity kernel is an exact shift
  {
    const std::int64_t B = 1, C = 2, H = 7, W = 7;
    auto x = rand_tensor({B, C, H, W}, rng);
    std::vector<double> wv(C * C * 9, 0.0);
    for (std::int64_t c = 0; c < C; ++c) wv[(c * C + c) * 9 + 4] = 1.0;  // center tap
    auto w = Td::from_vector({C, C, 3, 3}, std::move(wv));
    auto b = Td::zeros({C});
    auto off = Td::zeros({B, 18, H, W});
    for (int k = 0; k < 9; ++k) {
      for (std::int64_t s = 0; s < H * W; ++s) off.data()[(2 * k + 1) * H * W + s] = 1.0;  // dx=+1
    }
    auto msk = Td::filled({B, 9, H, W}, 1.0);
    ConvSpec dspec{C, C, 3, 3, 1, 1, 1, true};
    auto shifted = deform_conv2d(x, dspec, w, b, OffsetField<double>{off, msk});
    double worst = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t i = 0; i < H; ++i) {
        for (std::int64_t j = 0; j + 1 < W; ++j) {  // interior: source column j+1 exists
          const double got = shifted.data()[(c * H + i) * W + j];
          const double want = x.data()[(c * H + i) * W + j + 1];
          worst = std::max(worst, std::fabs(got - want));
        }
      }
    }
    oracle_row(result, "dcn_integer_shift", worst, 1e-12);
  }

  // space-to-depth: bitwise against the naive gather, and a lossless partition
  {
    double worst = 0.0;
    double partition_dev = 0.0;
    for (int t = 0; t < 8; ++t) {
      const std::int64_t B = rng.uniform_int(1, 2), C = rng.uniform_int(1, 4);
      const std::int64_t H = 2 * rng.uniform_int(1, 4), W = 2 * rng.uniform_int(1, 4);
      auto x = rand_tensor({B, C, H, W}, rng);
      auto fast = space_to_depth(x);
      auto naive = ref::naive_space_to_depth(to_dense(x));
      worst = std::max(worst, max_abs_dev(fast.data(), naive.v));

      // scatter the four phases back and compare bitwise
      std::vector<double> rebuilt(x.numel(), 0.0);
      const std::int64_t oh = H / 2, ow = W / 2;
      const int phases[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
      for (std::int64_t bi = 0; bi < B; ++bi) {
        for (int ph = 0; ph < 4; ++ph) {
          for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t i = 0; i < oh; ++i) {
              for (std::int64_t j = 0; j < ow; ++j) {
                const double v = fast.data()[(((bi * 4 + ph) * C + c) * oh + i) * ow + j];
                rebuilt[((bi * C + c) * H + 2 * i + phases[ph][0]) * W + 2 * j + phases[ph][1]] = v;
              }
            }
          }
        }
      }
      partition_dev = std::max(partition_dev, max_abs_dev(rebuilt, x.data()));
    }
    oracle_row(result, "s2d_vs_naive", worst, 0.0);
    oracle_row(result, "s2d_inverse_scatter", partition_dev, 0.0);
  }

  // hand-enumerated 4x4 ramp phases
  {
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[i] = i;
    auto x = Td::from_vector({1, 1, 4, 4}, std::move(ramp));
    auto p00 = strided_subsample(x, 0, 0);
    auto p11 = strided_subsample(x, 1, 1);
    const std::vector<double> want00{0, 2, 8, 10}, want11{5, 7, 13, 15};
    const double dev =
        std::max(max_abs_dev(p00.data(), want00), max_abs_dev(p11.data(), want11));
    oracle_row(result, "s2d_hand_4x4", dev, 0.0);
  }

  // bilinear sampling at integer in-bounds coordinates is a gather
  {
    const std::int64_t H = 5, W = 6;
    auto x = rand_tensor({2, 3, H, W}, rng);
    std::vector<double> ys, xs;
    std::vector<std::pair<std::int64_t, std::int64_t>> pts;
    for (int t = 0; t < 12; ++t) pts.emplace_back(rng.uniform_int(0, H - 1), rng.uniform_int(0, W - 1));
    for (auto& [yy, xx] : pts) {
      ys.push_back(static_cast<double>(yy));
      xs.push_back(static_cast<double>(xx));
    }
    auto yg = Td::from_vector({3, 4}, std::move(ys));
    auto xg = Td::from_vector({3, 4}, std::move(xs));
    auto sampled = bilinear_sample(x, yg, xg);
    double worst = 0.0;
    for (std::int64_t bc = 0; bc < 6; ++bc) {
      for (std::size_t t = 0; t < pts.size(); ++t) {
        const double want = x.data()[(bc * H + pts[t].first) * W + pts[t].second];
        worst = std::max(worst, std::fabs(sampled.data()[bc * 12 + t] - want));
      }
    }
    oracle_row(result, "bilinear_integer_gather", worst, 0.0);
  }

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string format_suite(const SuiteResult& result) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %12s %10s %8s %s\n", "check", "max_err", "tol", "tries",
                "status");
  os << buf;
  for (const auto& row : result.rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %12.3e %10.1e %8d %s\n", row.name.c_str(), row.value,
                  row.tol, row.attempts, row.pass ? "pass" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s in %.2fs\n", result.pass ? "all checks passed" : "FAILURES",
                result.seconds);
  os << buf;
  return os.str();
}

}  // namespace bafpn
