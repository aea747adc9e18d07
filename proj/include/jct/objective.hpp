#pragma once

// Training objective and evaluation metrics: Smooth L1 count loss, AdamW with
// decoupled weight decay, and MAE / MSE / NAE reporting.

#include "jct/tensor.hpp"

#include <optional>

namespace jct {

// Mean over samples of {0.5*d^2 if |d|<1 else |d|-0.5}, d = pred - target.
// Differentiable w.r.t. pred; targets are constants.
template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape() == target.shape(), "smooth_l1: shape mismatch");
  require(pred.numel() >= 1, "smooth_l1: empty input");
  require(!target.requires_grad(), "smooth_l1: targets must not require grad");
  const std::size_t n = pred.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.values()[i] - target.values()[i];
    const T a = std::abs(d);
    acc += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  check_finite(out, "smooth_l1");
  if (wants_grad<T>({pred})) {
    auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
    record_op<T>("smooth_l1", out, [pi, ti, oi, n]() {
      auto& g = ensure_grad(pi);
      const T s = oi->g[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pi->v[i] - ti->v[i];
        g[i] += s * (std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1)));
      }
    });
  }
  return out;
}

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps), bias-corrected
// first/second moments, decay decoupled from the gradient path.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig cfg = {})
      : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), T(0));
      v_[i].assign(params_[i].numel(), T(0));
    }
  }

  long long step_count() const { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const std::vector<T> g = p.grad_or_zeros();
      require(g.size() == p.numel(), "adamw: gradient/parameter size mismatch");
      auto& m = m_[i];
      auto& v = v_[i];
      auto& theta = p.values();
      for (std::size_t j = 0; j < g.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double th = static_cast<double>(theta[j]);
        theta[j] = static_cast<T>(th - cfg_.lr * cfg_.weight_decay * th -
                                  cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  long long t_ = 0;
};

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;                // root of the mean squared error, as printed
  std::optional<double> nae;       // empty when every sample lacked a positive GT
  int n_images = 0;
  int n_skipped_nae = 0;
};

// pairs of (estimated, ground truth); NAE skips zero-GT samples and counts
// them instead of dividing by zero.
inline MetricsReport compute_metrics(const std::vector<std::pair<double, double>>& pairs) {
  require(!pairs.empty(), "compute_metrics: need at least one sample");
  MetricsReport r;
  r.n_images = static_cast<int>(pairs.size());
  double abs_sum = 0.0, sq_sum = 0.0, nae_sum = 0.0;
  int nae_n = 0;
  for (const auto& [est, gt] : pairs) {
    const double d = est - gt;
    abs_sum += std::abs(d);
    sq_sum += d * d;
    if (gt > 0.0) {
      nae_sum += std::abs(d) / gt;
      ++nae_n;
    } else {
      ++r.n_skipped_nae;
    }
  }
  const double n = static_cast<double>(pairs.size());
  r.mae = abs_sum / n;
  r.mse = std::sqrt(sq_sum / n);
  if (nae_n > 0) r.nae = nae_sum / static_cast<double>(nae_n);
  return r;
}

}  // namespace jct
