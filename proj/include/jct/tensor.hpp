#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// Every differentiable operation records an entry on a thread-local tape.
// backward(loss) seeds the scalar loss with 1, clears intermediate gradients,
// then replays the tape once in reverse creation order; leaf gradients
// accumulate across calls until zero_grad(). By default the tape is consumed
// by backward(); pass retain_tape=true to keep it for a second sweep.

#include "jct/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace jct {

using Shape = std::vector<int>;

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) n *= static_cast<std::size_t>(e);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

inline thread_local bool g_grad_enabled = true;
inline thread_local bool g_finite_checks = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // allocated lazily while a backward sweep reaches this node
  bool requires_grad = false;
  bool produced_by_op = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> p) : p_(std::move(p)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return filled(std::move(s), T(0), requires_grad);
  }
  static Tensor filled(Shape s, T value, bool requires_grad = false) {
    auto p = std::make_shared<TensorImpl<T>>();
    p->v.assign(numel_of(s), value);
    p->shape = std::move(s);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }
  static Tensor from(Shape s, std::vector<T> values, bool requires_grad = false) {
    require(numel_of(s) == values.size(), "tensor init: shape/data size mismatch");
    auto p = std::make_shared<TensorImpl<T>>();
    p->shape = std::move(s);
    p->v = std::move(values);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }
  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  std::size_t numel() const { return p_->v.size(); }

  std::vector<T>& values() { return p_->v; }
  const std::vector<T>& values() const { return p_->v; }
  T item() const {
    require(numel() == 1, "item(): tensor is not scalar");
    return p_->v[0];
  }
  T at(std::initializer_list<int> idx) const {
    std::size_t flat = 0;
    auto it = idx.begin();
    for (std::size_t d = 0; d < p_->shape.size(); ++d, ++it)
      flat = flat * static_cast<std::size_t>(p_->shape[d]) + static_cast<std::size_t>(*it);
    return p_->v[flat];
  }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool rg) { p_->requires_grad = rg; }
  bool is_leaf() const { return !p_->produced_by_op; }

  const std::vector<T>& grad() const { return p_->g; }
  std::vector<T> grad_or_zeros() const {
    if (p_->g.empty()) return std::vector<T>(p_->v.size(), T(0));
    return p_->g;
  }
  void zero_grad() { p_->g.clear(); }

  Tensor detach() const {
    auto p = std::make_shared<TensorImpl<T>>();
    p->shape = p_->shape;
    p->v = p_->v;
    return Tensor(p);
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return p_; }

 private:
  std::shared_ptr<TensorImpl<T>> p_;
};

template <typename T>
inline std::vector<T>& ensure_grad(const std::shared_ptr<TensorImpl<T>>& t) {
  if (t->g.empty()) t->g.assign(t->v.size(), T(0));
  return t->g;
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!g_finite_checks) return;
  for (T x : t.values()) {
    if (!std::isfinite(static_cast<double>(x)))
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
  }
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
class Tape {
 public:
  struct Entry {
    const char* op;
    std::shared_ptr<TensorImpl<T>> output;
    std::function<void()> backward;
  };

  static Tape& active() {
    static thread_local Tape tape;
    return tape;
  }

  void record(const char* op, std::shared_ptr<TensorImpl<T>> output, std::function<void()> bw) {
    entries_.push_back(Entry{op, std::move(output), std::move(bw)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Single reverse sweep; each entry visited exactly once. Entries whose
  // output was never reached carry no gradient and are skipped.
  void replay_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->g.empty()) it->backward();
    }
  }

  void clear_intermediate_grads() {
    for (auto& e : entries_) e.output->g.clear();
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
inline bool wants_grad(std::initializer_list<Tensor<T>> inputs) {
  if (!g_grad_enabled) return false;
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

template <typename T>
inline void record_op(const char* op, Tensor<T>& out, std::function<void()> bw) {
  out.impl()->requires_grad = true;
  out.impl()->produced_by_op = true;
  Tape<T>::active().record(op, out.impl(), std::move(bw));
}

// Populates gradients of every requires_grad tensor reachable from `loss`.
// Intermediate gradients are reset per call, so repeated calls (with
// retain_tape=true on the earlier ones) accumulate exact multiples into
// leaves.
template <typename T>
inline void backward(const Tensor<T>& loss, bool retain_tape = false) {
  require(loss.defined() && loss.numel() == 1, "backward: loss must be scalar");
  if (!loss.requires_grad() || loss.is_leaf())
    fail("backward: tensor is detached from the tape");
  auto& tape = Tape<T>::active();
  tape.clear_intermediate_grads();
  ensure_grad(loss.impl())[0] = T(1);
  tape.replay_backward();
  if (!retain_tape) tape.clear();
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  check_finite(out, "add");
  if (wants_grad<T>({a, b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_op<T>("add", out, [ai, bi, oi]() {
      if (ai->requires_grad) {
        auto& g = ensure_grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i];
      }
      if (bi->requires_grad) {
        auto& g = ensure_grad(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  check_finite(out, "sub");
  if (wants_grad<T>({a, b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_op<T>("sub", out, [ai, bi, oi]() {
      if (ai->requires_grad) {
        auto& g = ensure_grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i];
      }
      if (bi->requires_grad) {
        auto& g = ensure_grad(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  check_finite(out, "mul");
  if (wants_grad<T>({a, b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_op<T>("mul", out, [ai, bi, oi]() {
      if (ai->requires_grad) {
        auto& g = ensure_grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i] * bi->v[i];
      }
      if (bi->requires_grad) {
        auto& g = ensure_grad(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i] * ai->v[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * s;
  check_finite(out, "scale");
  if (wants_grad<T>({a})) {
    auto ai = a.impl(), oi = out.impl();
    record_op<T>("scale", out, [ai, oi, s]() {
      auto& g = ensure_grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i] * s;
    });
  }
  return out;
}

// y's shape must be a suffix of x's shape; y is broadcast over the leading
// dimensions. Gradient for y sums over those leading dimensions.
template <typename T>
Tensor<T> add_suffix(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  require(ys.size() <= xs.size(), "add_suffix: rank mismatch");
  for (std::size_t i = 0; i < ys.size(); ++i)
    require(ys[ys.size() - 1 - i] == xs[xs.size() - 1 - i], "add_suffix: trailing extents differ");
  const std::size_t m = y.numel();
  const std::size_t reps = x.numel() / m;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < reps; ++r) {
    const T* xv = x.values().data() + r * m;
    const T* yv = y.values().data();
    T* ov = out.values().data() + r * m;
    for (std::size_t i = 0; i < m; ++i) ov[i] = xv[i] + yv[i];
  }
  check_finite(out, "add_suffix");
  if (wants_grad<T>({x, y})) {
    auto xi = x.impl(), yi = y.impl(), oi = out.impl();
    record_op<T>("add_suffix", out, [xi, yi, oi, m, reps]() {
      if (xi->requires_grad) {
        auto& g = ensure_grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i];
      }
      if (yi->requires_grad) {
        auto& g = ensure_grad(yi);
        for (std::size_t r = 0; r < reps; ++r) {
          const T* og = oi->g.data() + r * m;
          for (std::size_t i = 0; i < m; ++i) g[i] += og[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  require(numel_of(s) == x.numel(), "reshape: element count mismatch");
  Tensor<T> out = Tensor<T>::from(std::move(s), x.values());
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("reshape", out, [xi, oi]() {
      auto& g = ensure_grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->g[i];
    });
  }
  return out;
}

namespace detail {
inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
  return st;
}

// out[i0,...,ik] = in[i_{axes[0]}, ..., i_{axes[k]}]; returns the source flat
// index for every destination flat index.
inline void permute_map(const Shape& in_shape, const std::vector<int>& axes, std::vector<std::size_t>& map) {
  const std::size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  auto in_strides = strides_of(in_shape);
  const std::size_t n = numel_of(in_shape);
  map.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[static_cast<std::size_t>(axes[d])];
    map[flat] = src;
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)])) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}
}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  require(axes.size() == x.shape().size(), "permute: axes rank mismatch");
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.shape()[static_cast<std::size_t>(axes[i])];
  std::vector<std::size_t> map;
  detail::permute_map(x.shape(), axes, map);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out.values()[i] = x.values()[map[i]];
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("permute", out, [xi, oi, map = std::move(map)]() {
      auto& g = ensure_grad(xi);
      for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += oi->g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, int start, int len) {
  const Shape& s = x.shape();
  const int last = s.back();
  require(start >= 0 && len > 0 && start + len <= last, "slice_last: range out of bounds");
  Shape out_shape = s;
  out_shape.back() = len;
  const std::size_t rows = x.numel() / static_cast<std::size_t>(last);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * static_cast<std::size_t>(last) + static_cast<std::size_t>(start);
    T* dst = out.values().data() + r * static_cast<std::size_t>(len);
    std::copy(src, src + len, dst);
  }
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("slice_last", out, [xi, oi, rows, last, start, len]() {
      auto& g = ensure_grad(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* og = oi->g.data() + r * static_cast<std::size_t>(len);
        T* dst = g.data() + r * static_cast<std::size_t>(last) + static_cast<std::size_t>(start);
        for (int i = 0; i < len; ++i) dst[i] += og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  check_finite(out, "sum_all");
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("sum_all", out, [xi, oi]() {
      auto& g = ensure_grad(xi);
      const T s = oi->g[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
  const Shape& s = x.shape();
  require(s.size() >= 1, "sum_last: rank 0");
  const std::size_t n = static_cast<std::size_t>(s.back());
  const std::size_t rows = x.numel() / n;
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * n;
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += src[i];
    out.values()[r] = acc;
  }
  check_finite(out, "sum_last");
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("sum_last", out, [xi, oi, rows, n]() {
      auto& g = ensure_grad(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        const T s = oi->g[r];
        T* dst = g.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += s;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

// x: [..., Din], W: [Din, Dout], b: [Dout] (pass undefined Tensor for none).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  const Shape& xs = x.shape();
  require(W.rank() == 2, "linear: weight must be 2-D");
  const int din = W.dim(0), dout = W.dim(1);
  require(xs.back() == din, "linear: input dim " + std::to_string(xs.back()) + " vs weight " + std::to_string(din));
  if (b.defined()) require(b.numel() == static_cast<std::size_t>(dout), "linear: bias size mismatch");
  const std::size_t m = x.numel() / static_cast<std::size_t>(din);
  Shape out_shape = xs;
  out_shape.back() = dout;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  gemm_nn<T>(m, static_cast<std::size_t>(dout), static_cast<std::size_t>(din),
             x.values().data(), W.values().data(), out.values().data(), false);
  if (b.defined()) {
    for (std::size_t r = 0; r < m; ++r) {
      T* o = out.values().data() + r * static_cast<std::size_t>(dout);
      for (int j = 0; j < dout; ++j) o[j] += b.values()[static_cast<std::size_t>(j)];
    }
  }
  check_finite(out, "linear");
  const bool rec = b.defined() ? wants_grad<T>({x, W, b}) : wants_grad<T>({x, W});
  if (rec) {
    auto xi = x.impl(), wi = W.impl(), oi = out.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    record_op<T>("linear", out, [xi, wi, bi, oi, m, din, dout]() {
      const std::size_t M = m, K = static_cast<std::size_t>(dout), D = static_cast<std::size_t>(din);
      if (xi->requires_grad) {
        auto& g = ensure_grad(xi);
        gemm_nt<T>(M, D, K, oi->g.data(), wi->v.data(), g.data(), true);
      }
      if (wi->requires_grad) {
        auto& g = ensure_grad(wi);
        gemm_tn<T>(M, K, D, xi->v.data(), oi->g.data(), g.data(), true);
      }
      if (bi && bi->requires_grad) {
        auto& g = ensure_grad(bi);
        for (std::size_t r = 0; r < M; ++r) {
          const T* og = oi->g.data() + r * K;
          for (std::size_t j = 0; j < K; ++j) g[j] += og[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& W) {
  return linear(x, W, Tensor<T>());
}

namespace detail {
template <typename T>
void check_bmm(const Tensor<T>& a, const Tensor<T>& b, bool nt) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: operands must be rank 3");
  require(a.dim(0) == b.dim(0), "bmm: batch extents differ");
  if (nt)
    require(a.dim(2) == b.dim(2), "bmm_nt: inner extents differ");
  else
    require(a.dim(2) == b.dim(1), "bmm: inner extents differ");
}
}  // namespace detail

// a: [G, M, K], b: [G, K, N] -> [G, M, N]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_bmm(a, b, false);
  const std::size_t G = static_cast<std::size_t>(a.dim(0));
  const std::size_t M = static_cast<std::size_t>(a.dim(1));
  const std::size_t K = static_cast<std::size_t>(a.dim(2));
  const std::size_t N = static_cast<std::size_t>(b.dim(2));
  Tensor<T> out = Tensor<T>::zeros({a.dim(0), a.dim(1), b.dim(2)});
  for (std::size_t g = 0; g < G; ++g)
    gemm_nn<T>(M, N, K, a.values().data() + g * M * K, b.values().data() + g * K * N,
               out.values().data() + g * M * N, false);
  check_finite(out, "bmm");
  if (wants_grad<T>({a, b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_op<T>("bmm", out, [ai, bi, oi, G, M, K, N]() {
      for (std::size_t g = 0; g < G; ++g) {
        const T* go = oi->g.data() + g * M * N;
        if (ai->requires_grad) {
          auto& ga = ensure_grad(ai);
          gemm_nt<T>(M, K, N, go, bi->v.data() + g * K * N, ga.data() + g * M * K, true);
        }
        if (bi->requires_grad) {
          auto& gb = ensure_grad(bi);
          gemm_tn<T>(M, N, K, ai->v.data() + g * M * K, go, gb.data() + g * K * N, true);
        }
      }
    });
  }
  return out;
}

// a: [G, M, K], b: [G, N, K] -> [G, M, N]  (b transposed on the fly)
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_bmm(a, b, true);
  const std::size_t G = static_cast<std::size_t>(a.dim(0));
  const std::size_t M = static_cast<std::size_t>(a.dim(1));
  const std::size_t K = static_cast<std::size_t>(a.dim(2));
  const std::size_t N = static_cast<std::size_t>(b.dim(1));
  Tensor<T> out = Tensor<T>::zeros({a.dim(0), a.dim(1), b.dim(1)});
  for (std::size_t g = 0; g < G; ++g)
    gemm_nt<T>(M, N, K, a.values().data() + g * M * K, b.values().data() + g * N * K,
               out.values().data() + g * M * N, false);
  check_finite(out, "bmm_nt");
  if (wants_grad<T>({a, b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_op<T>("bmm_nt", out, [ai, bi, oi, G, M, K, N]() {
      for (std::size_t g = 0; g < G; ++g) {
        const T* go = oi->g.data() + g * M * N;
        if (ai->requires_grad) {
          auto& ga = ensure_grad(ai);
          gemm_nn<T>(M, K, N, go, bi->v.data() + g * N * K, ga.data() + g * M * K, true);
        }
        if (bi->requires_grad) {
          auto& gb = ensure_grad(bi);
          gemm_tn<T>(M, K, N, go, ai->v.data() + g * M * K, gb.data() + g * N * K, true);
        }
      }
    });
  }
  return out;
}

// rows of `table` gathered by index; backward scatter-adds into the table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& idx) {
  require(table.rank() == 2, "gather_rows: table must be 2-D");
  const int R = table.dim(0), C = table.dim(1);
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(idx.size()), C});
  for (std::size_t m = 0; m < idx.size(); ++m) {
    require(idx[m] >= 0 && idx[m] < R, "gather_rows: index out of range");
    const T* src = table.values().data() + static_cast<std::size_t>(idx[m]) * static_cast<std::size_t>(C);
    std::copy(src, src + C, out.values().data() + m * static_cast<std::size_t>(C));
  }
  if (wants_grad<T>({table})) {
    auto ti = table.impl(), oi = out.impl();
    record_op<T>("gather_rows", out, [ti, oi, idx, C]() {
      auto& g = ensure_grad(ti);
      for (std::size_t m = 0; m < idx.size(); ++m) {
        const T* og = oi->g.data() + m * static_cast<std::size_t>(C);
        T* dst = g.data() + static_cast<std::size_t>(idx[m]) * static_cast<std::size_t>(C);
        for (int c = 0; c < C; ++c) dst[c] += og[c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("relu", out, [xi, oi]() {
      auto& g = ensure_grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xi->v[i] > T(0)) g[i] += oi->g[i];
    });
  }
  return out;
}

// Exact Gaussian-CDF form: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = x.numel();
  const double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x.values()[i]);
    out.values()[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  check_finite(out, "gelu");
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("gelu", out, [xi, oi]() {
      auto& g = ensure_grad(xi);
      const double inv_sqrt2pi = 0.3989422804014326779;
      const double inv_sqrt2l = 0.7071067811865475244;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = static_cast<double>(xi->v[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2l));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        g[i] += oi->g[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }
  return out;
}

// Max-subtracted softmax over the last dimension.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::size_t n = static_cast<std::size_t>(x.shape().back());
  const std::size_t rows = x.numel() / n;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * n;
    T* dst = out.values().data() + r * n;
    T mx = src[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, src[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < n; ++i) dst[i] *= inv;
  }
  check_finite(out, "softmax");
  if (wants_grad<T>({x})) {
    auto xi = x.impl(), oi = out.impl();
    record_op<T>("softmax", out, [xi, oi, rows, n]() {
      auto& g = ensure_grad(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = oi->v.data() + r * n;
        const T* gy = oi->g.data() + r * n;
        T dot = T(0);
        for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
        T* dst = g.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += y[i] * (gy[i] - dot);
      }
    });
  }
  return out;
}

}  // namespace jct
