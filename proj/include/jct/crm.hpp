#pragma once

// Counting regression: two dilated conv-BN-ReLU stages and a 1x1 projection
// down to a single-channel map. The predicted count is the spatial sum of the
// map (selectable global average for ablation).

#include "jct/cfm.hpp"

namespace jct {

template <typename T>
struct CrmModel {
  int in_channels = 0;
  Tensor<T> conv1_w, conv1_b, bn1_gamma, bn1_beta;
  BatchNormStats<T> bn1_stats;
  Tensor<T> conv2_w, conv2_b, bn2_gamma, bn2_beta;
  BatchNormStats<T> bn2_stats;
  Tensor<T> conv3_w, conv3_b;

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn(prefix + "conv1.weight", conv1_w);
    fn(prefix + "conv1.bias", conv1_b);
    fn(prefix + "bn1.gamma", bn1_gamma);
    fn(prefix + "bn1.beta", bn1_beta);
    fn(prefix + "conv2.weight", conv2_w);
    fn(prefix + "conv2.bias", conv2_b);
    fn(prefix + "bn2.gamma", bn2_gamma);
    fn(prefix + "bn2.beta", bn2_beta);
    fn(prefix + "conv3.weight", conv3_w);
    fn(prefix + "conv3.bias", conv3_b);
  }

  void visit_buffers(const std::string& prefix,
                     const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    fn(prefix + "bn1.running_mean", bn1_stats.running_mean);
    fn(prefix + "bn1.running_var", bn1_stats.running_var);
    fn(prefix + "bn2.running_mean", bn2_stats.running_mean);
    fn(prefix + "bn2.running_var", bn2_stats.running_var);
  }
};

template <typename T>
CrmModel<T> build_crm(int in_channels, std::uint64_t seed) {
  require(in_channels >= 4 && in_channels % 4 == 0,
          "crm: input width must be divisible by 4 for the D -> D/2 -> D/4 schedule");
  Rng rng(seed);
  CrmModel<T> m;
  m.in_channels = in_channels;
  const int c1 = in_channels / 2;
  const int c2 = in_channels / 4;
  m.conv1_w = detail::he_normal<T>({c1, in_channels, 3, 3}, in_channels * 9, rng);
  m.conv1_b = Tensor<T>::zeros({c1}, true);
  m.bn1_gamma = Tensor<T>::filled({c1}, T(1), true);
  m.bn1_beta = Tensor<T>::zeros({c1}, true);
  m.bn1_stats = BatchNormStats<T>(c1);
  m.conv2_w = detail::he_normal<T>({c2, c1, 3, 3}, c1 * 9, rng);
  m.conv2_b = Tensor<T>::zeros({c2}, true);
  m.bn2_gamma = Tensor<T>::filled({c2}, T(1), true);
  m.bn2_beta = Tensor<T>::zeros({c2}, true);
  m.bn2_stats = BatchNormStats<T>(c2);
  m.conv3_w = detail::he_normal<T>({1, c2, 1, 1}, c2, rng);
  m.conv3_b = Tensor<T>::zeros({1}, true);
  return m;
}

// T_F: [B,D,H,W] -> map [B,1,H,W]; dilation 2 with padding 2 keeps the
// extents, and the map carries no terminal activation.
template <typename T>
Tensor<T> crm_forward(const Tensor<T>& tf, CrmModel<T>& m, bool train) {
  require(tf.rank() == 4 && tf.dim(1) == m.in_channels, "crm_forward: channel mismatch");
  Tensor<T> x = conv2d(tf, m.conv1_w, m.conv1_b, 1, 2, 2);
  x = relu(batchnorm2d(x, m.bn1_gamma, m.bn1_beta, m.bn1_stats, train));
  x = conv2d(x, m.conv2_w, m.conv2_b, 1, 2, 2);
  x = relu(batchnorm2d(x, m.bn2_gamma, m.bn2_beta, m.bn2_stats, train));
  return conv2d(x, m.conv3_w, m.conv3_b, 1, 0, 1);
}

// map [B,1,H,W] -> per-image count [B], fixed-order spatial sum.
template <typename T>
Tensor<T> count_from_map(const Tensor<T>& map, bool global_average = false) {
  require(map.rank() == 4 && map.dim(1) == 1, "count_from_map: map must be [B,1,H,W]");
  const int B = map.dim(0);
  const int hw = map.dim(2) * map.dim(3);
  Tensor<T> sums = sum_last(reshape(map, {B, hw}));
  if (global_average) return scale(sums, static_cast<T>(1.0 / hw));
  return sums;
}

}  // namespace jct
