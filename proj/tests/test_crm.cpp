#include "doctest.h"

#include "jct/crm.hpp"
#include "jct/gradcheck.hpp"

#include "test_util.hpp"

using D = jct::Tensor<double>;
using jct_test::random_tensor;

TEST_SUITE("crm") {

TEST_CASE("paper widths carry the printed weight count") {
  auto m = jct::build_crm<double>(256, 1);
  const long long weights = static_cast<long long>(m.conv1_w.numel()) +
                            static_cast<long long>(m.conv2_w.numel()) +
                            static_cast<long long>(m.conv3_w.numel());
  CHECK(weights == 368704);  // 9*256*128 + 9*128*64 + 64
}

TEST_CASE("spatial extents are preserved") {
  auto m = jct::build_crm<double>(256, 2);
  jct::Rng rng(3);
  D x = random_tensor({1, 256, 32, 32}, rng, -1, 1);
  jct::NoGradGuard ng;
  D map = jct::crm_forward(x, m, false);
  CHECK(map.shape() == jct::Shape{1, 1, 32, 32});

  auto toy = jct::build_crm<double>(8, 4);
  D y = random_tensor({2, 8, 5, 9}, rng, -1, 1);
  D map2 = jct::crm_forward(y, toy, false);
  CHECK(map2.shape() == jct::Shape{2, 1, 5, 9});
}

TEST_CASE("channel mismatch is rejected") {
  auto m = jct::build_crm<double>(8, 5);
  D x = D::zeros({1, 12, 4, 4});
  CHECK_THROWS_AS(jct::crm_forward(x, m, false), std::invalid_argument);
  CHECK_THROWS_AS(jct::build_crm<double>(6, 5), std::invalid_argument);
}

TEST_CASE("gradients match finite differences") {
  auto m = jct::build_crm<double>(8, 6);
  jct::Rng rng(7);
  D x = random_tensor({1, 8, 4, 4}, rng, -1, 1, true);
  auto f = [&]() { return jct_test::weighted_sum(jct::crm_forward(x, m, true), 8); };
  CHECK(jct::finite_diff_check<double>(f, x).max_rel_err < 1e-4);
  CHECK(jct::finite_diff_check<double>(f, m.conv1_w).max_rel_err < 1e-4);
  CHECK(jct::finite_diff_check<double>(f, m.conv3_b).max_rel_err < 1e-4);
}

TEST_CASE("count_from_map point cases") {
  D zeros = D::zeros({1, 1, 3, 3});
  CHECK(jct::count_from_map(zeros).item() == 0.0);

  D single = D::from({1, 1, 1, 1}, {5.0});
  CHECK(jct::count_from_map(single).item() == 5.0);

  D small = D::from({1, 1, 2, 2}, {1, -1, 2, 3});
  CHECK(jct::count_from_map(small).item() == 5.0);

  D avg = D::from({1, 1, 2, 2}, {1, 1, 2, 4});
  CHECK(jct::count_from_map(avg, true).item() == 2.0);
}

TEST_CASE("count_from_map is linear in the map") {
  jct::Rng rng(9);
  D m1 = random_tensor({3, 1, 4, 4}, rng);
  D m2 = random_tensor({3, 1, 4, 4}, rng);
  const double a = 2.5;
  D combo = jct::add(jct::scale(m1, a), m2);
  D lhs = jct::count_from_map(combo);
  for (int b = 0; b < 3; ++b) {
    double expect = 0.0;
    for (int i = 0; i < 16; ++i)
      expect += a * m1.values()[static_cast<std::size_t>(b * 16 + i)] +
                m2.values()[static_cast<std::size_t>(b * 16 + i)];
    CHECK(lhs.values()[static_cast<std::size_t>(b)] == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("count gradient spreads uniformly over the map") {
  jct::Rng rng(10);
  D map = random_tensor({2, 1, 3, 3}, rng, -1, 1, true);
  D counts = jct::count_from_map(map);
  jct::backward(jct::sum_all(counts));
  for (double g : map.grad()) CHECK(g == 1.0);
}

}  // TEST_SUITE
