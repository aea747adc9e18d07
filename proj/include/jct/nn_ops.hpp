#pragma once

// Structured layers over the autograd core: convolution (im2col + GEMM),
// max pooling, batch/layer norm, cyclic roll. All tensors are NCHW unless a
// signature says otherwise.

#include "jct/tensor.hpp"

namespace jct {

namespace detail {

// cols: [Cin*k*k, Ho*Wo], zero-padded cross-correlation taps.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int dil,
            int Ho, int Wo, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * static_cast<std::size_t>(Wo);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * plane;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki * dil;
          T* dst = row + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < Wo; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj * dil;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int k, int stride, int pad, int dil,
                int Ho, int Wo, T* x) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * static_cast<std::size_t>(Wo);
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * plane;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki * dil;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + static_cast<std::size_t>(oh) * Wo;
          T* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj * dil;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [B,Cin,H,W], weight: [Cout,Cin,k,k], bias: [Cout] (undefined for none).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0, int dilation = 1) {
  require(x.rank() == 4, "conv2d: input must be [B,C,H,W]");
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), "conv2d: weight must be [Cout,Cin,k,k]");
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == Cin, "conv2d: input channels " + std::to_string(Cin) +
                                    " do not match weight Cin " + std::to_string(weight.dim(1)));
  require(stride >= 1 && dilation >= 1 && padding >= 0, "conv2d: bad geometry");
  const int Ho = (H + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const int Wo = (W + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  require(Ho >= 1 && Wo >= 1 && H + 2 * padding >= dilation * (k - 1) + 1 &&
              W + 2 * padding >= dilation * (k - 1) + 1,
          "conv2d: non-positive output extent");
  if (bias.defined()) require(bias.numel() == static_cast<std::size_t>(Cout), "conv2d: bias size mismatch");

  const std::size_t ckk = static_cast<std::size_t>(Cin) * k * k;
  const std::size_t plane_in = static_cast<std::size_t>(H) * W;
  const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
  Tensor<T> out = Tensor<T>::zeros({B, Cout, Ho, Wo});
  std::vector<T> cols(ckk * plane_out);
  for (int b = 0; b < B; ++b) {
    detail::im2col<T>(x.values().data() + static_cast<std::size_t>(b) * Cin * plane_in,
                      Cin, H, W, k, stride, padding, dilation, Ho, Wo, cols.data());
    T* ob = out.values().data() + static_cast<std::size_t>(b) * Cout * plane_out;
    gemm_nn<T>(static_cast<std::size_t>(Cout), plane_out, ckk, weight.values().data(), cols.data(), ob, false);
    if (bias.defined()) {
      for (int c = 0; c < Cout; ++c) {
        const T bc = bias.values()[static_cast<std::size_t>(c)];
        T* o = ob + static_cast<std::size_t>(c) * plane_out;
        for (std::size_t i = 0; i < plane_out; ++i) o[i] += bc;
      }
    }
  }
  check_finite(out, "conv2d");

  const bool rec = bias.defined() ? wants_grad<T>({x, weight, bias}) : wants_grad<T>({x, weight});
  if (rec) {
    auto xi = x.impl(), wi = weight.impl(), oi = out.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    record_op<T>("conv2d", out,
                 [xi, wi, bi, oi, B, Cin, H, W, Cout, k, stride, padding, dilation, Ho, Wo]() {
      const std::size_t ckk = static_cast<std::size_t>(Cin) * k * k;
      const std::size_t plane_in = static_cast<std::size_t>(H) * W;
      const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
      std::vector<T> cols(ckk * plane_out);
      std::vector<T> dcols;
      if (xi->requires_grad) dcols.resize(ckk * plane_out);
      for (int b = 0; b < B; ++b) {
        const T* go = oi->g.data() + static_cast<std::size_t>(b) * Cout * plane_out;
        if (wi->requires_grad || xi->requires_grad) {
          if (wi->requires_grad) {
            detail::im2col<T>(xi->v.data() + static_cast<std::size_t>(b) * Cin * plane_in,
                              Cin, H, W, k, stride, padding, dilation, Ho, Wo, cols.data());
            auto& gw = ensure_grad(wi);
            gemm_nt<T>(static_cast<std::size_t>(Cout), ckk, plane_out, go, cols.data(), gw.data(), true);
          }
          if (xi->requires_grad) {
            gemm_tn<T>(static_cast<std::size_t>(Cout), plane_out, ckk, wi->v.data(), go, dcols.data(), false);
            auto& gx = ensure_grad(xi);
            detail::col2im_add<T>(dcols.data(), Cin, H, W, k, stride, padding, dilation, Ho, Wo,
                                  gx.data() + static_cast<std::size_t>(b) * Cin * plane_in);
          }
        }
        if (bi && bi->requires_grad) {
          auto& gb = ensure_grad(bi);
          for (int c = 0; c < Cout; ++c) {
            const T* g = go + static_cast<std::size_t>(c) * plane_out;
            T acc = T(0);
            for (std::size_t i = 0; i < plane_out; ++i) acc += g[i];
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      }
    });
  }
  return out;
}

// Per-window maximum; gradient routes to the first maximal element in
// row-major scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k = 2, int stride = 2) {
  require(x.rank() == 4, "maxpool2d: input must be [B,C,H,W]");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(k >= 1 && stride >= 1, "maxpool2d: bad geometry");
  require(H % stride == 0 && W % stride == 0, "maxpool2d: extents not divisible by stride");
  require((H - k) % stride == 0 && (W - k) % stride == 0 && H >= k && W >= k,
          "maxpool2d: window does not tile the input");
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  Tensor<T> out = Tensor<T>::zeros({B, C, Ho, Wo});
  std::vector<std::int64_t> argmax(out.numel());
  const std::size_t plane_in = static_cast<std::size_t>(H) * W;
  const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x.values().data() + static_cast<std::size_t>(bc) * plane_in;
    T* dst = out.values().data() + static_cast<std::size_t>(bc) * plane_out;
    std::int64_t* am = argmax.data() + static_cast<std::size_t>(bc) * plane_out;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        T best = src[static_cast<std::size_t>(oh * stride) * W + ow * stride];
        std::int64_t best_idx = static_cast<std::int64_t>(oh * stride) * W + ow * stride;
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < k; ++j) {
            const std::int64_t idx = static_cast<std::int64_t>(oh * stride + i) * W + (ow * stride + j);
            if (src[idx] > best) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        dst[static_cast<std::size_t>(oh) * Wo + ow] = best;
        am[static_cast<std::size_t>(oh) * Wo + ow] = best_idx;
      }
    }
  }
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("maxpool2d", out, [xi, oi, argmax = std::move(argmax), plane_in, plane_out, B, C]() {
      auto& g = ensure_grad(xi);
      for (int bc = 0; bc < B * C; ++bc) {
        const T* go = oi->g.data() + static_cast<std::size_t>(bc) * plane_out;
        const std::int64_t* am = argmax.data() + static_cast<std::size_t>(bc) * plane_out;
        T* gx = g.data() + static_cast<std::size_t>(bc) * plane_in;
        for (std::size_t i = 0; i < plane_out; ++i) gx[am[i]] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  explicit BatchNormStats(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

// Train mode normalizes by batch statistics over (B,H,W) per channel (biased
// variance) and EMA-updates the running stats (unbiased variance, momentum
// convention new = (1-m)*old + m*batch). Eval mode uses the running stats.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, bool train, double eps = 1e-5,
                      double momentum = 0.1) {
  require(x.rank() == 4, "batchnorm2d: input must be [B,C,H,W]");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C),
          "batchnorm2d: affine parameter size mismatch");
  require(stats.running_mean.size() == static_cast<std::size_t>(C), "batchnorm2d: stats size mismatch");
  const std::size_t n = static_cast<std::size_t>(B) * H * W;
  if (train) require(n >= 2, "batchnorm2d: train mode needs at least 2 elements per channel");

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(static_cast<std::size_t>(C));

  for (int c = 0; c < C; ++c) {
    T mean, var;
    if (train) {
      T acc = T(0);
      for (int b = 0; b < B; ++b) {
        const T* src = x.values().data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      mean = acc / static_cast<T>(n);
      T vacc = T(0);
      for (int b = 0; b < B; ++b) {
        const T* src = x.values().data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = src[i] - mean;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<T>(n);
      const T unbiased = vacc / static_cast<T>(n - 1);
      stats.running_mean[static_cast<std::size_t>(c)] =
          static_cast<T>((1.0 - momentum) * stats.running_mean[static_cast<std::size_t>(c)] + momentum * mean);
      stats.running_var[static_cast<std::size_t>(c)] =
          static_cast<T>((1.0 - momentum) * stats.running_var[static_cast<std::size_t>(c)] + momentum * unbiased);
    } else {
      mean = stats.running_mean[static_cast<std::size_t>(c)];
      var = stats.running_var[static_cast<std::size_t>(c)];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
    inv_std[static_cast<std::size_t>(c)] = istd;
    const T gc = gamma.values()[static_cast<std::size_t>(c)];
    const T bc = beta.values()[static_cast<std::size_t>(c)];
    for (int b = 0; b < B; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
      const T* src = x.values().data() + base;
      T* xh = xhat.data() + base;
      T* dst = out.values().data() + base;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean) * istd;
        dst[i] = gc * xh[i] + bc;
      }
    }
  }
  check_finite(out, "batchnorm2d");

  if (wants_grad<T>({x, gamma, beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    record_op<T>("batchnorm2d", out,
                 [xi, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, plane, n, train]() {
      for (int c = 0; c < C; ++c) {
        T sum_g = T(0), sum_gx = T(0);
        for (int b = 0; b < B; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
          const T* go = oi->g.data() + base;
          const T* xh = xhat.data() + base;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += go[i];
            sum_gx += go[i] * xh[i];
          }
        }
        if (gi->requires_grad) ensure_grad(gi)[static_cast<std::size_t>(c)] += sum_gx;
        if (bi->requires_grad) ensure_grad(bi)[static_cast<std::size_t>(c)] += sum_g;
        if (xi->requires_grad) {
          auto& gx = ensure_grad(xi);
          const T gc = gi->v[static_cast<std::size_t>(c)];
          const T istd = inv_std[static_cast<std::size_t>(c)];
          if (train) {
            const T mg = sum_g / static_cast<T>(n);
            const T mgx = sum_gx / static_cast<T>(n);
            for (int b = 0; b < B; ++b) {
              const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
              const T* go = oi->g.data() + base;
              const T* xh = xhat.data() + base;
              T* dst = gx.data() + base;
              for (std::size_t i = 0; i < plane; ++i)
                dst[i] += gc * istd * (go[i] - mg - xh[i] * mgx);
            }
          } else {
            for (int b = 0; b < B; ++b) {
              const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
              const T* go = oi->g.data() + base;
              T* dst = gx.data() + base;
              for (std::size_t i = 0; i < plane; ++i) dst[i] += gc * istd * go[i];
            }
          }
        }
      }
    });
  }
  return out;
}

// Normalizes over the last dimension per token.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps = 1e-5) {
  const int D = x.shape().back();
  require(D >= 2, "layernorm: last dimension must be >= 2");
  require(gamma.numel() == static_cast<std::size_t>(D) && beta.numel() == static_cast<std::size_t>(D),
          "layernorm: affine parameter size mismatch");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * static_cast<std::size_t>(D);
    T mean = T(0);
    for (int i = 0; i < D; ++i) mean += src[i];
    mean /= static_cast<T>(D);
    T var = T(0);
    for (int i = 0; i < D; ++i) {
      const T d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(D);
    const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
    inv_std[r] = istd;
    T* xh = xhat.data() + r * static_cast<std::size_t>(D);
    T* dst = out.values().data() + r * static_cast<std::size_t>(D);
    for (int i = 0; i < D; ++i) {
      xh[i] = (src[i] - mean) * istd;
      dst[i] = gamma.values()[static_cast<std::size_t>(i)] * xh[i] + beta.values()[static_cast<std::size_t>(i)];
    }
  }
  check_finite(out, "layernorm");

  if (wants_grad<T>({x, gamma, beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    record_op<T>("layernorm", out,
                 [xi, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, D]() {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* go = oi->g.data() + r * static_cast<std::size_t>(D);
        const T* xh = xhat.data() + r * static_cast<std::size_t>(D);
        if (gi->requires_grad) {
          auto& gg = ensure_grad(gi);
          for (int i = 0; i < D; ++i) gg[static_cast<std::size_t>(i)] += go[i] * xh[i];
        }
        if (bi->requires_grad) {
          auto& gb = ensure_grad(bi);
          for (int i = 0; i < D; ++i) gb[static_cast<std::size_t>(i)] += go[i];
        }
        if (xi->requires_grad) {
          auto& gx = ensure_grad(xi);
          T mg = T(0), mgx = T(0);
          for (int i = 0; i < D; ++i) {
            const T gh = go[i] * gi->v[static_cast<std::size_t>(i)];
            mg += gh;
            mgx += gh * xh[i];
          }
          mg /= static_cast<T>(D);
          mgx /= static_cast<T>(D);
          T* dst = gx.data() + r * static_cast<std::size_t>(D);
          for (int i = 0; i < D; ++i) {
            const T gh = go[i] * gi->v[static_cast<std::size_t>(i)];
            dst[i] += inv_std[r] * (gh - mg - xh[i] * mgx);
          }
        }
      }
    });
  }
  return out;
}

// x: [B,H,W,C]; cyclic translation along H and W, out[i] = in[(i - shift) mod n].
template <typename T>
Tensor<T> roll_hw(const Tensor<T>& x, int shift_h, int shift_w) {
  require(x.rank() == 4, "roll_hw: input must be [B,H,W,C]");
  const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
  const int sh = wrap(shift_h, H);
  const int sw = wrap(shift_w, W);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t row = static_cast<std::size_t>(C);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      const int src_h = wrap(h - sh, H);
      for (int w = 0; w < W; ++w) {
        const int src_w = wrap(w - sw, W);
        const T* src = x.values().data() + ((static_cast<std::size_t>(b) * H + src_h) * W + src_w) * row;
        T* dst = out.values().data() + ((static_cast<std::size_t>(b) * H + h) * W + w) * row;
        std::copy(src, src + C, dst);
      }
    }
  }
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("roll_hw", out, [xi, oi, B, H, W, C, sh, sw, wrap]() {
      auto& g = ensure_grad(xi);
      const std::size_t row = static_cast<std::size_t>(C);
      for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
          const int src_h = wrap(h - sh, H);
          for (int w = 0; w < W; ++w) {
            const int src_w = wrap(w - sw, W);
            const T* go = oi->g.data() + ((static_cast<std::size_t>(b) * H + h) * W + w) * row;
            T* dst = g.data() + ((static_cast<std::size_t>(b) * H + src_h) * W + src_w) * row;
            for (int c = 0; c < C; ++c) dst[c] += go[c];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace jct
