#pragma once

// CNN feature extraction: the first ten VGG16-BN conv stages with only the
// first three pools kept, so the output grid is exactly 1/8 of the input.

#include "jct/nn_ops.hpp"
#include "jct/rng.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace jct {

struct CfmConfig {
  std::vector<int> channel_schedule = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512};
  std::vector<int> pool_positions = {2, 4, 7};  // pool after these convs (1-based)
  double channel_scale = 1.0;

  std::vector<int> scaled_channels() const {
    std::vector<int> out;
    out.reserve(channel_schedule.size());
    for (int c : channel_schedule) {
      const int s = static_cast<int>(std::ceil(static_cast<double>(c) * channel_scale));
      out.push_back(std::max(s, 1));
    }
    return out;
  }

  void validate() const {
    require(channel_schedule.size() == 10, "cfm: channel schedule must have exactly 10 entries");
    require(pool_positions == std::vector<int>{2, 4, 7}, "cfm: pools are fixed after convs 2, 4, 7");
    require(channel_scale > 0.0, "cfm: channel_scale must be positive");
    for (int c : scaled_channels()) require(c >= 1, "cfm: scaled channel width must be >= 1");
  }

  int out_channels() const { return scaled_channels().back(); }
};

template <typename T>
struct CfmModel {
  CfmConfig cfg;
  struct Stage {
    Tensor<T> conv_w, conv_b;
    Tensor<T> bn_gamma, bn_beta;
    BatchNormStats<T> bn_stats;
  };
  std::vector<Stage> stages;  // 10 conv-bn-relu stages

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string n = std::to_string(i + 1);
      fn(prefix + "conv" + n + ".weight", stages[i].conv_w);
      fn(prefix + "conv" + n + ".bias", stages[i].conv_b);
      fn(prefix + "bn" + n + ".gamma", stages[i].bn_gamma);
      fn(prefix + "bn" + n + ".beta", stages[i].bn_beta);
    }
  }

  void visit_buffers(const std::string& prefix,
                     const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string n = std::to_string(i + 1);
      fn(prefix + "bn" + n + ".running_mean", stages[i].bn_stats.running_mean);
      fn(prefix + "bn" + n + ".running_var", stages[i].bn_stats.running_var);
    }
  }
};

namespace detail {
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}
}  // namespace detail

template <typename T>
CfmModel<T> build_cfm(const CfmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  CfmModel<T> m;
  m.cfg = cfg;
  const auto widths = cfg.scaled_channels();
  int in_ch = 3;
  for (int w : widths) {
    typename CfmModel<T>::Stage s;
    s.conv_w = detail::he_normal<T>({w, in_ch, 3, 3}, in_ch * 9, rng);
    s.conv_b = Tensor<T>::zeros({w}, true);
    s.bn_gamma = Tensor<T>::filled({w}, T(1), true);
    s.bn_beta = Tensor<T>::zeros({w}, true);
    s.bn_stats = BatchNormStats<T>(w);
    m.stages.push_back(std::move(s));
    in_ch = w;
  }
  return m;
}

// Input must already be standardized (the harness maps bytes through
// (x/255 - 0.5) / 0.25). Spatial extents must be divisible by 8; callers pad
// first. Optionally captures each post-ReLU activation.
template <typename T>
Tensor<T> cfm_forward(CfmModel<T>& m, const Tensor<T>& input, bool train,
                      std::vector<Tensor<T>>* post_relu = nullptr) {
  require(input.rank() == 4 && input.dim(1) == 3, "cfm_forward: input must be [B,3,H,W]");
  require(input.dim(2) % 8 == 0 && input.dim(3) % 8 == 0,
          "cfm_forward: extents must be divisible by 8 (pad the image first)");
  Tensor<T> x = input;
  int conv_idx = 0;
  std::size_t pool_cursor = 0;
  for (auto& s : m.stages) {
    x = conv2d(x, s.conv_w, s.conv_b, 1, 1, 1);
    x = batchnorm2d(x, s.bn_gamma, s.bn_beta, s.bn_stats, train);
    x = relu(x);
    if (post_relu) post_relu->push_back(x);
    ++conv_idx;
    if (pool_cursor < m.cfg.pool_positions.size() &&
        m.cfg.pool_positions[pool_cursor] == conv_idx) {
      x = maxpool2d(x, 2, 2);
      ++pool_cursor;
    }
  }
  return x;
}

}  // namespace jct
