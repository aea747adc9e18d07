#include "doctest.h"

#include "jct/cfm.hpp"
#include "jct/gradcheck.hpp"

#include "goldens.hpp"
#include "test_util.hpp"

using D = jct::Tensor<double>;

namespace {

jct::Tensor<double> random_image(int b, int h, int w, std::uint64_t seed) {
  jct::Rng rng(seed);
  return jct_test::random_tensor({b, 3, h, w}, rng, -2, 2);
}

long long conv_weight_count(jct::CfmModel<double>& m) {
  long long n = 0;
  for (auto& s : m.stages) n += static_cast<long long>(s.conv_w.numel());
  return n;
}

}  // namespace

TEST_SUITE("cfm") {

TEST_CASE("paper schedule conv weight count") {
  jct::CfmConfig cfg;
  auto m = jct::build_cfm<double>(cfg, 1);
  CHECK(conv_weight_count(m) == 7632576);
}

TEST_CASE("unit-width schedule shrinks every conv to its minimum") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 512.0;
  auto m = jct::build_cfm<double>(cfg, 1);
  // conv1 still sees the 3 image channels; the rest are 1 -> 1
  CHECK(m.stages[0].conv_w.numel() == 27);
  for (std::size_t i = 1; i < m.stages.size(); ++i) CHECK(m.stages[i].conv_w.numel() == 9);
}

TEST_CASE("invalid channel schedules are rejected") {
  jct::CfmConfig nine;
  nine.channel_schedule = {64, 64, 128, 128, 256, 256, 256, 512, 512};
  CHECK_THROWS_AS(jct::build_cfm<double>(nine, 1), std::invalid_argument);
  jct::CfmConfig zero;
  zero.channel_scale = 0.0;
  CHECK_THROWS_AS(jct::build_cfm<double>(zero, 1), std::invalid_argument);
}

TEST_CASE("identical seeds give bit-identical parameters") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 8.0;
  auto a = jct::build_cfm<double>(cfg, 99);
  auto b = jct::build_cfm<double>(cfg, 99);
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    CHECK(a.stages[i].conv_w.values() == b.stages[i].conv_w.values());
    CHECK(a.stages[i].conv_b.values() == b.stages[i].conv_b.values());
  }
  auto c = jct::build_cfm<double>(cfg, 100);
  CHECK(a.stages[0].conv_w.values() != c.stages[0].conv_w.values());
}

TEST_CASE("paper channels map 64x64 input to 1x512x8x8") {
  jct::CfmConfig cfg;
  auto m = jct::build_cfm<double>(cfg, 2);
  jct::NoGradGuard ng;
  D out = jct::cfm_forward(m, random_image(1, 64, 64, 7), false);
  CHECK(out.shape() == jct::Shape{1, 512, 8, 8});
}

TEST_CASE("zero input stays zero in eval mode with fresh running stats") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 8.0;
  auto m = jct::build_cfm<double>(cfg, 3);
  jct::NoGradGuard ng;
  D out = jct::cfm_forward(m, D::zeros({1, 3, 32, 32}), false);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("stride is exactly 8 across input sizes") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 16.0;
  auto m = jct::build_cfm<double>(cfg, 4);
  jct::NoGradGuard ng;
  for (int hw : {32, 40, 64}) {
    D out = jct::cfm_forward(m, random_image(1, hw, hw, 11), false);
    CHECK(out.dim(2) == hw / 8);
    CHECK(out.dim(3) == hw / 8);
  }
  CHECK_THROWS_AS(jct::cfm_forward(m, D::zeros({1, 3, 36, 32}), false), std::invalid_argument);
}

TEST_CASE("wrap-shifting the input by 8 shifts the eval output by 1 in the interior") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 8.0;
  auto m = jct::build_cfm<double>(cfg, 5);
  jct::NoGradGuard ng;
  const int S = 160;
  D img = random_image(1, S, S, 13);

  // cyclic shift of the raw image by (8, 8)
  D shifted = D::zeros(img.shape());
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        shifted.values()[(static_cast<std::size_t>(c) * S + static_cast<std::size_t>(h)) * S +
                         static_cast<std::size_t>(w)] =
            img.values()[(static_cast<std::size_t>(c) * S + static_cast<std::size_t>((h + S - 8) % S)) * S +
                         static_cast<std::size_t>((w + S - 8) % S)];

  D out = jct::cfm_forward(m, img, false);
  D out_shifted = jct::cfm_forward(m, shifted, false);
  const int C = out.dim(1), H = out.dim(2);
  // receptive field of a stride-8 cell spans roughly +-49 input pixels, so
  // compare only cells whose field avoids the zero padding and the wrap seam
  const int lo = 8, hi = H - 8;
  REQUIRE(hi > lo);
  int compared = 0;
  for (int c = 0; c < C; ++c) {
    for (int h = lo; h < hi; ++h) {
      for (int w = lo; w < hi; ++w) {
        const double a = out.at({0, c, h - 1, w - 1});
        const double b = out_shifted.at({0, c, h, w});
        CHECK(a == b);
        ++compared;
      }
    }
  }
  CHECK(compared > 0);
}

TEST_CASE("activations after every ReLU are non-negative") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 8.0;
  auto m = jct::build_cfm<double>(cfg, 6);
  jct::NoGradGuard ng;
  std::vector<D> captured;
  jct::cfm_forward(m, random_image(1, 32, 32, 17), true, &captured);
  CHECK(captured.size() == 10);
  for (auto& t : captured)
    for (double v : t.values()) CHECK(v >= 0.0);
}

TEST_CASE("fixed-seed toy forward has a stable fingerprint") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 8.0;
  auto m = jct::build_cfm<double>(cfg, 7);
  jct::NoGradGuard ng;
  D out = jct::cfm_forward(m, random_image(1, 32, 32, 19), false);
  const std::uint64_t h = jct::quantized_hash(out.values());
  auto m2 = jct::build_cfm<double>(cfg, 7);
  D out2 = jct::cfm_forward(m2, random_image(1, 32, 32, 19), false);
  CHECK(jct::quantized_hash(out2.values()) == h);
  // golden, recorded from the deterministic build
  CHECK(h == JCT_CFM_GOLDEN_HASH);
}

TEST_CASE("cfm gradients flow to the first conv") {
  jct::CfmConfig cfg;
  cfg.channel_scale = 1.0 / 16.0;
  auto m = jct::build_cfm<double>(cfg, 8);
  D img = random_image(1, 16, 16, 23);
  auto f = [&]() { return jct_test::weighted_sum(jct::cfm_forward(m, img, true), 91); };
  std::vector<std::size_t> probe = {0, 5, 11, 20, 26};
  auto rep = jct::finite_diff_check_indices<double>(f, m.stages[0].conv_w, probe);
  CHECK(rep.max_rel_err < 1e-4);
}

}  // TEST_SUITE
