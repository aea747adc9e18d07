#include "doctest.h"

#include "jct/gradcheck.hpp"
#include "jct/objective.hpp"

#include "test_util.hpp"

#include <algorithm>

using D = jct::Tensor<double>;
using jct_test::random_tensor;

namespace {

void set_grad(D& t, const std::vector<double>& g) {
  auto& buf = jct::ensure_grad(t.impl());
  std::copy(g.begin(), g.end(), buf.begin());
}

// scalar reference for one AdamW update, written straight from the equations
struct ScalarAdamRef {
  double m = 0, v = 0;
  long long t = 0;
  double step(double theta, double g, const jct::AdamWConfig& c) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mhat = m / (1 - std::pow(c.beta1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(c.beta2, static_cast<double>(t)));
    return theta - c.lr * c.weight_decay * theta - c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
};

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("smooth l1 point values and the knee") {
  auto loss_of = [](double d) {
    D pred = D::from({1}, {d});
    D gt = D::zeros({1});
    return jct::smooth_l1_loss(pred, gt).item();
  };
  CHECK(loss_of(0.5) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(loss_of(3.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(loss_of(1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(loss_of(1.0 - 1e-9) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(loss_of(-1.0) == doctest::Approx(0.5).epsilon(1e-15));

  // one-sided derivative limits at |d| = 1 both equal 1
  const double eps = 1e-6;
  const double left = (loss_of(1.0) - loss_of(1.0 - eps)) / eps;
  const double right = (loss_of(1.0 + eps) - loss_of(1.0)) / eps;
  CHECK(left == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(right == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("smooth l1 is bounded by the L1 mean and matches finite differences") {
  jct::Rng rng(1);
  D pred = random_tensor({16}, rng, -4, 4, true);
  D gt = random_tensor({16}, rng, -4, 4);
  // keep |d| away from the knee so central differences are clean
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.values()[i] - gt.values()[i];
    if (std::abs(std::abs(d) - 1.0) < 1e-3) pred.values()[i] += 2e-3;
  }
  const double sl1 = jct::smooth_l1_loss(pred, gt).item();
  double l1 = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) l1 += std::abs(pred.values()[i] - gt.values()[i]);
  l1 /= static_cast<double>(pred.numel());
  CHECK(sl1 <= l1);

  auto f = [&]() { return jct::smooth_l1_loss(pred, gt); };
  CHECK(jct::finite_diff_check<double>(f, pred).max_rel_err < 1e-4);

  D empty_pred = D::zeros({1, 0});
  CHECK(empty_pred.numel() == 0);
  CHECK_THROWS_AS(jct::smooth_l1_loss(empty_pred, empty_pred), std::invalid_argument);
}

TEST_CASE("adamw first step matches the hand-executed update") {
  D theta = D::from({1}, {1.0}, true);
  jct::AdamWConfig cfg;  // lr 1e-5, wd 1e-4
  jct::AdamW<double> opt({theta}, cfg);
  set_grad(theta, {1.0});
  opt.step();
  ScalarAdamRef ref;
  const double expect = ref.step(1.0, 1.0, cfg);
  CHECK(theta.values()[0] == doctest::Approx(expect).epsilon(1e-15));
  CHECK(theta.values()[0] == doctest::Approx(0.99998999).epsilon(1e-8));
}

TEST_CASE("adamw fixed points") {
  D zero = D::zeros({3}, true);
  jct::AdamW<double> opt({zero});
  set_grad(zero, {0, 0, 0});
  opt.step();
  for (double v : zero.values()) CHECK(v == 0.0);

  jct::AdamWConfig no_decay;
  no_decay.weight_decay = 0.0;
  D theta = D::from({2}, {0.5, -1.5}, true);
  jct::AdamW<double> opt2({theta}, no_decay);
  set_grad(theta, {0, 0});
  opt2.step();
  CHECK(theta.values() == std::vector<double>{0.5, -1.5});
}

TEST_CASE("adamw with zero decay reproduces a plain Adam trajectory for 100 steps") {
  jct::AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 1e-3;
  D theta = D::from({1}, {0.25}, true);
  jct::AdamW<double> opt({theta}, cfg);
  ScalarAdamRef ref;
  double ref_theta = 0.25;
  for (int t = 0; t < 100; ++t) {
    const double g = std::sin(0.1 * t) + 0.3;
    set_grad(theta, {g});
    opt.step();
    ref_theta = ref.step(ref_theta, g, cfg);
    theta.zero_grad();
    CHECK(std::abs(theta.values()[0] - ref_theta) <= 1e-12);
  }
}

TEST_CASE("metrics hand case from the evaluation equations") {
  auto r = jct::compute_metrics({{10, 12}, {20, 16}});
  CHECK(r.mae == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(r.mse == doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
  REQUIRE(r.nae.has_value());
  CHECK(*r.nae == doctest::Approx((2.0 / 12.0 + 4.0 / 16.0) / 2.0).epsilon(1e-12));
  CHECK(*r.nae == doctest::Approx(0.20833).epsilon(1e-4));
  CHECK(r.n_images == 2);
  CHECK(r.n_skipped_nae == 0);
}

TEST_CASE("metrics on perfect predictions and zero ground truth") {
  auto perfect = jct::compute_metrics({{4, 4}, {9, 9}});
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.mse == 0.0);
  REQUIRE(perfect.nae.has_value());
  CHECK(*perfect.nae == 0.0);

  auto skipped = jct::compute_metrics({{5, 0}});
  CHECK(skipped.mae == 5.0);
  CHECK(skipped.mse == 5.0);
  CHECK(!skipped.nae.has_value());
  CHECK(skipped.n_skipped_nae == 1);

  CHECK_THROWS_AS(jct::compute_metrics({}), std::invalid_argument);
}

TEST_CASE("mae is permutation invariant and mse is the scaled error norm") {
  jct::Rng rng(2);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < 17; ++i) pairs.emplace_back(rng.uniform(0, 30), rng.uniform(0, 30));
  auto a = jct::compute_metrics(pairs);
  auto shuffled = pairs;
  rng.shuffle(shuffled.begin(), shuffled.end());
  auto b = jct::compute_metrics(shuffled);
  CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-12));
  CHECK(a.mse == doctest::Approx(b.mse).epsilon(1e-12));

  double norm2 = 0.0;
  for (auto& [est, gt] : pairs) norm2 += (est - gt) * (est - gt);
  CHECK(a.mse == doctest::Approx(std::sqrt(norm2) / std::sqrt(17.0)).epsilon(1e-12));
}

}  // TEST_SUITE
