#pragma once

#include "jct/rng.hpp"
#include "jct/tensor.hpp"

namespace jct_test {

inline jct::Tensor<double> random_tensor(jct::Shape shape, jct::Rng& rng, double lo = -2.0,
                                         double hi = 2.0, bool requires_grad = false) {
  std::vector<double> v(jct::numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return jct::Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Pushes every element at least `margin` away from zero, preserving sign.
inline void nudge_from_zero(jct::Tensor<double>& t, double margin) {
  for (auto& x : t.values()) {
    if (x >= 0.0 && x < margin) x += margin;
    if (x < 0.0 && x > -margin) x -= margin;
  }
}

// Fixed random projection so d(sum)/dx never degenerates to zero rows.
inline jct::Tensor<double> weight_like(const jct::Tensor<double>& t, std::uint64_t seed) {
  jct::Rng rng(seed);
  std::vector<double> v(t.numel());
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return jct::Tensor<double>::from(t.shape(), std::move(v));
}

inline jct::Tensor<double> weighted_sum(const jct::Tensor<double>& t, std::uint64_t seed) {
  return jct::sum_all(jct::mul(t, weight_like(t, seed)));
}

}  // namespace jct_test
