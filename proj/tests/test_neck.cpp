#include <doctest.h>

#include <cmath>

#include "bafpn/neck.hpp"
#include "bafpn/rng.hpp"

using namespace bafpn;
using Td = Tensor<double>;

namespace {

Td randt(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Td::from_vector(s, std::move(v));
}

NeckConfig tiny_config(const std::string& variant = "bafpn") {
  NeckConfig cfg;
  cfg.levels = 2;
  cfg.in_channels = {4, 4};
  cfg.out_channels = 4;
  cfg.galm_groups = 2;
  cfg.attn_kernel = 3;
  cfg.variant = variant;
  cfg.seed = 11;
  return cfg;
}

std::vector<Td> tiny_feats(Rng& rng, std::int64_t b = 1) {
  return {randt({b, 4, 8, 8}, rng), randt({b, 4, 4, 4}, rng)};
}

template <typename E, typename F>
std::string thrown_message(F&& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("build counts and determinism") {
  auto neck = build_neck<double>(tiny_config());
  CHECK(neck.galm.size() == 2);
  CHECK(neck.spam.size() == 1);
  CHECK(neck.seam.size() == 1);
  CHECK(neck.out_conv.size() == 2);

  auto neck2 = build_neck<double>(tiny_config());
  auto it2 = neck2.params.begin();
  for (auto& p : neck.params) {
    CHECK(p.name == it2->name);
    CHECK(p.value.data() == it2->value.data());  // bitwise
    ++it2;
  }

  auto other = tiny_config();
  other.seed = 12;
  auto neck3 = build_neck<double>(other);
  bool same = true;
  auto it3 = neck3.params.begin();
  for (auto& p : neck.params) {
    same = same && p.value.data() == it3->value.data();
    ++it3;
  }
  CHECK(!same);
}

TEST_CASE("config validation names the offending field") {
  auto cfg = tiny_config();
  cfg.galm_groups = 3;
  auto msg = thrown_message<ConfigError>([&] { build_neck<double>(cfg); });
  CHECK(msg.find("galm_groups") != std::string::npos);
  CHECK(msg.find("level 1") != std::string::npos);

  auto cfg2 = tiny_config();
  cfg2.variant = "pafpn";
  auto msg2 = thrown_message<ConfigError>([&] { build_neck<double>(cfg2); });
  CHECK(msg2.find("bafpn") != std::string::npos);
  CHECK(msg2.find("fpn") != std::string::npos);
}

TEST_CASE("forward shapes and determinism") {
  Rng rng(3);
  for (const char* variant : {"bafpn", "bafpn_r", "fpn"}) {
    auto cfg = tiny_config(variant);
    auto neck = build_neck<double>(cfg);
    auto feats = tiny_feats(rng, 2);
    auto out = neck_forward(neck, feats);
    REQUIRE(out.size() == 2);
    CHECK(out[0].shape() == Shape{2, 4, 8, 8});
    CHECK(out[1].shape() == Shape{2, 4, 4, 4});

    auto again = neck_forward(neck, feats);
    CHECK(out[0].data() == again[0].data());  // bitwise pure
    CHECK(out[1].data() == again[1].data());
  }
}

TEST_CASE("scale chain violations are named") {
  auto neck = build_neck<double>(tiny_config());
  Rng rng(5);
  std::vector<Td> bad = {randt({1, 4, 8, 8}, rng), randt({1, 4, 3, 3}, rng)};
  auto msg = thrown_message<ShapeError>([&] { neck_forward(neck, bad); });
  CHECK(msg.find("1->2") != std::string::npos);
}

TEST_CASE("zero-init graph composes from module closed forms") {
  auto cfg = tiny_config();
  auto neck = build_neck<double>(cfg);
  // silence the randomly initialized stdds/attention parts too, so the whole
  // bottom-up stage has a closed form
  for (auto& p : neck.params) {
    if (p.name.find(".stdds.") != std::string::npos || p.name.find("om1") != std::string::npos) {
      std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
    }
  }
  Rng rng(7);
  auto feats = tiny_feats(rng);
  auto out = neck_forward(neck, feats);

  // expected: F_i = galm(feats_i); ds = 0 (zero compression weights);
  // A_2 = 0.5*conv(F_2, dcn_w) + dcn_b; T_2 = A_2; T_1 = up(T_2) + F_1;
  // P_i = outconv(T_i)
  auto f1 = galm_forward(feats[0], neck.galm[0]);
  auto f2 = galm_forward(feats[1], neck.galm[1]);
  ConvSpec dspec{4, 4, 3, 3, 1, 1, 1, false};
  auto a2 = add(scale(conv2d(f2, dspec, neck.spam[0].dcn_w), 0.5),
                reshape_copy(neck.spam[0].dcn_b, {1, 4, 1, 1}));
  auto t1 = add(nearest_upsample2x(a2), f1);
  ConvSpec ospec{4, 4, 3, 3, 1, 1, 1, true};
  auto p1 = conv2d(t1, ospec, neck.out_conv[0][0], neck.out_conv[0][1]);
  auto p2 = conv2d(a2, ospec, neck.out_conv[1][0], neck.out_conv[1][1]);

  for (std::int64_t i = 0; i < out[0].numel(); ++i) {
    CHECK(out[0].data()[i] == doctest::Approx(p1.data()[i]).epsilon(1e-12));
  }
  for (std::int64_t i = 0; i < out[1].numel(); ++i) {
    CHECK(out[1].data()[i] == doctest::Approx(p2.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("fpn top level is its lateral through the output conv") {
  auto cfg = tiny_config("fpn");
  auto neck = build_neck<double>(cfg);
  Rng rng(13);
  auto feats = tiny_feats(rng);
  auto det = neck_forward_detail(neck, feats);
  ConvSpec ospec{4, 4, 3, 3, 1, 1, 1, true};
  auto want = conv2d(det.laterals[1], ospec, neck.out_conv[1][0], neck.out_conv[1][1]);
  CHECK(det.outputs[1].data() == want.data());
}

TEST_CASE("reversed variant has identical parameter count") {
  auto a = build_neck<double>(tiny_config("bafpn"));
  auto b = build_neck<double>(tiny_config("bafpn_r"));
  CHECK(a.params.total_count() == b.params.total_count());

  // and generally different outputs
  Rng rng(17);
  auto feats = tiny_feats(rng);
  randomize_parameters(a, 4242, 0.3);
  randomize_parameters(b, 4242, 0.3);
  auto oa = neck_forward(a, feats);
  auto ob = neck_forward(b, feats);
  double diff = 0.0;
  for (std::int64_t i = 0; i < oa[0].numel(); ++i) {
    diff += std::fabs(oa[0].data()[i] - ob[0].data()[i]);
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("param report partitions the registry") {
  auto cfg = tiny_config();
  auto neck = build_neck<double>(cfg);
  auto rep = param_count_report(neck);
  std::int64_t sum = 0;
  for (const auto& [mod, n] : rep.per_module) sum += n;
  CHECK(sum == rep.total);
  CHECK(rep.total == neck.params.total_count());
  CHECK(rep.variant_totals.at("bafpn") == rep.variant_totals.at("bafpn_r"));

  // fpn lateral count closed form
  NeckConfig fcfg;
  fcfg.levels = 3;
  fcfg.in_channels = {8, 16, 32};
  fcfg.out_channels = 4;
  fcfg.galm_groups = 1;
  fcfg.variant = "fpn";
  fcfg.output_convs = false;
  auto fpn = build_neck<double>(fcfg);
  std::int64_t want = 0;
  for (auto c : fcfg.in_channels) want += c * 4 + 4;
  CHECK(fpn.params.total_count() == want);
}

TEST_CASE("parameter-count claims at full width") {
  NeckConfig cfg;
  cfg.levels = 2;
  cfg.in_channels = {256, 256};
  cfg.out_channels = 256;
  cfg.galm_groups = 4;
  auto neck = build_neck<float>(cfg);
  auto rep = param_count_report(neck);

  const std::int64_t seam_count = rep.per_module.at("seam.1");
  CHECK(seam_count < 256 * 256 + 256);

  std::int64_t stdds_count = 0;
  for (const auto& row : rep.comparisons) {
    if (row.module == "spam.1.stdds") {
      stdds_count = row.count;
      CHECK(row.baseline == 9 * 256 * 256 + 256);
      CHECK(row.smaller);
    }
    if (row.module == "seam.1") CHECK(row.smaller);
  }
  CHECK(stdds_count > 0);
  CHECK(stdds_count < 9 * 256 * 256 + 256);
}

TEST_CASE("upsample mode is selectable") {
  auto cfg = tiny_config();
  cfg.upsample = "bilinear";
  auto neck = build_neck<double>(cfg);
  Rng rng(19);
  auto feats = tiny_feats(rng);
  auto out = neck_forward(neck, feats);
  CHECK(out[0].shape() == Shape{1, 4, 8, 8});
}
