#pragma once

// Central finite-difference gradient verification. The numeric side only
// evaluates the forward function at perturbed inputs, so it stays independent
// of the tape's backward rules.

#include "jct/tensor.hpp"

#include <functional>

namespace jct {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t n_checked = 0;

  bool passes(double tol) const { return max_rel_err < tol; }
};

inline double rel_err(double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
  return std::abs(a - n) / denom;
}

// f must be scalar-valued and read the current contents of x. Checks the
// gradient at the listed flat indices (all elements if empty). Per-index
// relative errors are written to out_per_index when given, in probe order.
template <typename T>
GradCheckReport finite_diff_check_indices(const std::function<Tensor<T>()>& f, Tensor<T>& x,
                                          const std::vector<std::size_t>& indices,
                                          double step = 1e-5,
                                          std::vector<double>* out_per_index = nullptr) {
  x.zero_grad();
  Tensor<T> loss = f();
  require(loss.numel() == 1, "finite_diff_check: f must be scalar-valued");
  backward(loss);
  std::vector<T> analytic = x.grad_or_zeros();

  GradCheckReport report;
  auto check_one = [&](std::size_t i) {
    const T saved = x.values()[i];
    double fp, fm;
    {
      NoGradGuard ng;
      x.values()[i] = static_cast<T>(static_cast<double>(saved) + step);
      fp = static_cast<double>(f().item());
      x.values()[i] = static_cast<T>(static_cast<double>(saved) - step);
      fm = static_cast<double>(f().item());
    }
    x.values()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = rel_err(static_cast<double>(analytic[i]), numeric);
    if (out_per_index) out_per_index->push_back(err);
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = i;
      report.analytic_at_worst = static_cast<double>(analytic[i]);
      report.numeric_at_worst = numeric;
    }
    ++report.n_checked;
  };

  if (indices.empty()) {
    for (std::size_t i = 0; i < x.numel(); ++i) check_one(i);
  } else {
    for (std::size_t i : indices) check_one(i);
  }
  return report;
}

template <typename T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& f, Tensor<T>& x,
                                  double step = 1e-5) {
  return finite_diff_check_indices<T>(f, x, {}, step);
}

}  // namespace jct
