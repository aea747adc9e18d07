#pragma once

// Transformer feature extraction: 3x3 channel-reduction conv, patch
// tokenization, stacked modified Swin blocks (window attention pairs with an
// interaction convolution after each pair), and a global skip connection back
// onto the reduced features. Spatial resolution is preserved throughout.

#include "jct/cfm.hpp"
#include "jct/nn_ops.hpp"

namespace jct {

struct TfmConfig {
  int embed_dim = 256;
  int window_size = 4;
  std::vector<int> depths = {8, 8, 8, 8};
  std::vector<int> num_heads = {8, 8, 8, 8};
  double mlp_ratio = 2.0;
  int patch_size = 1;  // K
  int interaction_kernel = 1;
  bool rel_pos_bias = true;

  int shift() const { return window_size / 2; }
  int token_dim() const { return patch_size * patch_size * embed_dim; }
  int mlp_hidden() const {
    return static_cast<int>(std::llround(mlp_ratio * static_cast<double>(token_dim())));
  }

  void validate() const {
    require(embed_dim >= 1 && window_size >= 1 && patch_size >= 1, "tfm: bad config");
    require(!depths.empty() && depths.size() == num_heads.size(),
            "tfm: depths and num_heads must have equal length");
    for (int d : depths) require(d >= 2 && d % 2 == 0, "tfm: each depth must be a positive even number");
    for (int h : num_heads)
      require(h >= 1 && token_dim() % h == 0, "tfm: token dim must be divisible by num_heads");
    require(interaction_kernel == 1 || interaction_kernel == 3, "tfm: interaction kernel must be 1 or 3");
    require(mlp_hidden() >= 1, "tfm: mlp hidden width must be >= 1");
  }
};

template <typename T>
struct StlParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> qkv_w, qkv_b;    // [C, 3C], [3C]
  Tensor<T> proj_w, proj_b;  // [C, C], [C]
  Tensor<T> bias_table;      // [(2w-1)^2, heads]; undefined when disabled
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> fc1_w, fc1_b;  // [C, hidden]
  Tensor<T> fc2_w, fc2_b;  // [hidden, C]

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn(prefix + "ln1.gamma", ln1_gamma);
    fn(prefix + "ln1.beta", ln1_beta);
    fn(prefix + "qkv.weight", qkv_w);
    fn(prefix + "qkv.bias", qkv_b);
    fn(prefix + "proj.weight", proj_w);
    fn(prefix + "proj.bias", proj_b);
    if (bias_table.defined()) fn(prefix + "rel_bias.table", bias_table);
    fn(prefix + "ln2.gamma", ln2_gamma);
    fn(prefix + "ln2.beta", ln2_beta);
    fn(prefix + "mlp.fc1.weight", fc1_w);
    fn(prefix + "mlp.fc1.bias", fc1_b);
    fn(prefix + "mlp.fc2.weight", fc2_w);
    fn(prefix + "mlp.fc2.bias", fc2_b);
  }
};

template <typename T>
struct MstbParams {
  std::vector<StlParams<T>> stls;
  std::vector<Tensor<T>> interact_w;  // one conv per STL pair
  std::vector<Tensor<T>> interact_b;

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (std::size_t i = 0; i < stls.size(); ++i)
      stls[i].visit_params(prefix + "stl" + std::to_string(i + 1) + ".", fn);
    for (std::size_t i = 0; i < interact_w.size(); ++i) {
      fn(prefix + "interact" + std::to_string(i + 1) + ".weight", interact_w[i]);
      fn(prefix + "interact" + std::to_string(i + 1) + ".bias", interact_b[i]);
    }
  }
};

template <typename T>
struct TfmModel {
  TfmConfig cfg;
  int in_channels = 0;
  Tensor<T> reduce_w, reduce_b;  // 3x3 conv, in_channels -> embed_dim
  std::vector<MstbParams<T>> blocks;

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn(prefix + "reduce.weight", reduce_w);
    fn(prefix + "reduce.bias", reduce_b);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit_params(prefix + "mstb" + std::to_string(i + 1) + ".", fn);
  }
};

struct TokenGrid {
  int h = 0;
  int w = 0;
};

template <typename T>
StlParams<T> build_stl(const TfmConfig& cfg, int heads, Rng& rng) {
  const int C = cfg.token_dim();
  const int hidden = cfg.mlp_hidden();
  StlParams<T> p;
  p.ln1_gamma = Tensor<T>::filled({C}, T(1), true);
  p.ln1_beta = Tensor<T>::zeros({C}, true);
  p.qkv_w = detail::he_normal<T>({C, 3 * C}, C, rng);
  p.qkv_b = Tensor<T>::zeros({3 * C}, true);
  p.proj_w = detail::he_normal<T>({C, C}, C, rng);
  p.proj_b = Tensor<T>::zeros({C}, true);
  if (cfg.rel_pos_bias) {
    const int span = 2 * cfg.window_size - 1;
    p.bias_table = Tensor<T>::zeros({span * span, heads}, true);
  }
  p.ln2_gamma = Tensor<T>::filled({C}, T(1), true);
  p.ln2_beta = Tensor<T>::zeros({C}, true);
  p.fc1_w = detail::he_normal<T>({C, hidden}, C, rng);
  p.fc1_b = Tensor<T>::zeros({hidden}, true);
  p.fc2_w = detail::he_normal<T>({hidden, C}, hidden, rng);
  p.fc2_b = Tensor<T>::zeros({C}, true);
  return p;
}

template <typename T>
TfmModel<T> build_tfm(const TfmConfig& cfg, int in_channels, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TfmModel<T> m;
  m.cfg = cfg;
  m.in_channels = in_channels;
  m.reduce_w = detail::he_normal<T>({cfg.embed_dim, in_channels, 3, 3}, in_channels * 9, rng);
  m.reduce_b = Tensor<T>::zeros({cfg.embed_dim}, true);
  const int C = cfg.token_dim();
  const int k = cfg.interaction_kernel;
  for (std::size_t b = 0; b < cfg.depths.size(); ++b) {
    MstbParams<T> blk;
    for (int d = 0; d < cfg.depths[b]; ++d) blk.stls.push_back(build_stl<T>(cfg, cfg.num_heads[b], rng));
    for (int d = 0; d < cfg.depths[b] / 2; ++d) {
      blk.interact_w.push_back(detail::he_normal<T>({C, C, k, k}, C * k * k, rng));
      blk.interact_b.push_back(Tensor<T>::zeros({C}, true));
    }
    m.blocks.push_back(std::move(blk));
  }
  return m;
}

// C_f -> reduced features; the same tensor feeds both the token path and the
// skip branch.
template <typename T>
Tensor<T> channel_reduce(const Tensor<T>& cf, const TfmModel<T>& m) {
  require(cf.rank() == 4 && cf.dim(1) == m.in_channels,
          "channel_reduce: input channels do not match the model");
  return conv2d(cf, m.reduce_w, m.reduce_b, 1, 1, 1);
}

// x: [B,D,H,W] -> tokens [B, (H/K)*(W/K), K*K*D], row-major token order.
template <typename T>
std::pair<Tensor<T>, TokenGrid> patch_partition(const Tensor<T>& x, int K) {
  require(x.rank() == 4, "patch_partition: input must be [B,D,H,W]");
  const int B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(K >= 1 && H % K == 0 && W % K == 0, "patch_partition: K must divide the grid extents");
  TokenGrid grid{H / K, W / K};
  Tensor<T> nhwc = permute(x, {0, 2, 3, 1});  // [B,H,W,D]
  Tensor<T> tokens;
  if (K == 1) {
    tokens = reshape(nhwc, {B, H * W, D});
  } else {
    Tensor<T> split = reshape(nhwc, {B, grid.h, K, grid.w, K, D});
    Tensor<T> grouped = permute(split, {0, 1, 3, 2, 4, 5});
    tokens = reshape(grouped, {B, grid.h * grid.w, K * K * D});
  }
  return {tokens, grid};
}

template <typename T>
Tensor<T> patch_unpartition(const Tensor<T>& tokens, TokenGrid grid, int K, int D) {
  const int B = tokens.dim(0);
  Tensor<T> nhwc;
  if (K == 1) {
    nhwc = reshape(tokens, {B, grid.h, grid.w, D});
  } else {
    Tensor<T> grouped = reshape(tokens, {B, grid.h, grid.w, K, K, D});
    Tensor<T> split = permute(grouped, {0, 1, 3, 2, 4, 5});
    nhwc = reshape(split, {B, grid.h * K, grid.w * K, D});
  }
  return permute(nhwc, {0, 3, 1, 2});
}

// x: [B,H,W,C] -> [B*nW, w*w, C]; windows and tokens in row-major order.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int w) {
  require(x.rank() == 4, "window_partition: input must be [B,H,W,C]");
  const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  require(w >= 1 && H % w == 0 && W % w == 0, "window_partition: w must divide the grid extents");
  Tensor<T> split = reshape(x, {B, H / w, w, W / w, w, C});
  Tensor<T> grouped = permute(split, {0, 1, 3, 2, 4, 5});
  return reshape(grouped, {B * (H / w) * (W / w), w * w, C});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, int w, int B, int H, int W) {
  const int C = windows.dim(2);
  Tensor<T> grouped = reshape(windows, {B, H / w, W / w, w, w, C});
  Tensor<T> split = permute(grouped, {0, 1, 3, 2, 4, 5});
  return reshape(split, {B, H, W, C});
}

// Additive mask for shifted-window attention: locations get a region id from
// the 3x3 axis slicing {[0,-w), [-w,-shift), [-shift,0)}; after the cyclic
// shift the window contents line up with this canvas, so a pair of slots may
// attend iff their region ids match. Returns [nW, w*w, w*w] with 0 / -1e9.
template <typename T>
Tensor<T> build_swmsa_mask(int H, int W, int w, int shift) {
  require(shift >= 0 && shift < w, "build_swmsa_mask: shift must be in [0, w)");
  require(H % w == 0 && W % w == 0, "build_swmsa_mask: w must divide the grid extents");
  const int n_wh = H / w, n_ww = W / w;
  const int nW = n_wh * n_ww;
  const int N = w * w;
  Tensor<T> mask = Tensor<T>::zeros({nW, N, N});
  if (shift == 0) return mask;
  auto region = [&](int i, int n) {
    if (i < n - w) return 0;
    if (i < n - shift) return 1;
    return 2;
  };
  for (int wh = 0; wh < n_wh; ++wh) {
    for (int ww = 0; ww < n_ww; ++ww) {
      T* mw = mask.values().data() + static_cast<std::size_t>(wh * n_ww + ww) * N * N;
      for (int q = 0; q < N; ++q) {
        const int qr = region(wh * w + q / w, H) * 3 + region(ww * w + q % w, W);
        for (int k = 0; k < N; ++k) {
          const int kr = region(wh * w + k / w, H) * 3 + region(ww * w + k % w, W);
          if (qr != kr) mw[static_cast<std::size_t>(q) * N + k] = T(-1e9);
        }
      }
    }
  }
  return mask;
}

// Relative-offset row index into the (2w-1)^2 bias table, one per (query,key)
// slot pair of a w x w window.
inline std::vector<int> relative_index_table(int w) {
  const int N = w * w;
  const int span = 2 * w - 1;
  std::vector<int> idx(static_cast<std::size_t>(N) * N);
  for (int q = 0; q < N; ++q) {
    const int qy = q / w, qx = q % w;
    for (int k = 0; k < N; ++k) {
      const int dy = qy - k / w + (w - 1);
      const int dx = qx - k % w + (w - 1);
      idx[static_cast<std::size_t>(q) * N + k] = dy * span + dx;
    }
  }
  return idx;
}

// Scaled dot-product attention over per-window token groups.
//   x: [B*nW, N, C]; mask: [nW, N, N] additive constant (undefined for none).
// Optionally writes the realized post-softmax weights [B*nW, heads, N, N].
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const StlParams<T>& p, const Tensor<T>& mask,
                           int num_heads, int window_size, int batch,
                           Tensor<T>* attn_weights_out = nullptr) {
  require(x.rank() == 3, "window_attention: tokens must be [G, N, C]");
  const int G = x.dim(0), N = x.dim(1), C = x.dim(2);
  require(C % num_heads == 0, "window_attention: token dim not divisible by heads");
  const int dh = C / num_heads;
  const int nW = G / batch;
  require(nW * batch == G, "window_attention: batch does not divide the window count");

  Tensor<T> qkv = linear(x, p.qkv_w, p.qkv_b);
  auto to_heads = [&](const Tensor<T>& t) {
    Tensor<T> r = reshape(t, {G, N, num_heads, dh});
    return reshape(permute(r, {0, 2, 1, 3}), {G * num_heads, N, dh});
  };
  Tensor<T> q = to_heads(slice_last(qkv, 0, C));
  Tensor<T> k = to_heads(slice_last(qkv, C, C));
  Tensor<T> v = to_heads(slice_last(qkv, 2 * C, C));
  q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));

  Tensor<T> attn = reshape(bmm_nt(q, k), {G, num_heads, N, N});
  if (p.bias_table.defined()) {
    Tensor<T> rows = gather_rows(p.bias_table, relative_index_table(window_size));
    Tensor<T> bias = permute(reshape(rows, {N, N, num_heads}), {2, 0, 1});
    attn = add_suffix(attn, bias);
  }
  if (mask.defined()) {
    Tensor<T> expanded = Tensor<T>::zeros({G, num_heads, N, N});
    const std::size_t block = static_cast<std::size_t>(N) * N;
    for (int g = 0; g < G; ++g) {
      const T* src = mask.values().data() + static_cast<std::size_t>(g % nW) * block;
      for (int h = 0; h < num_heads; ++h) {
        T* dst = expanded.values().data() + (static_cast<std::size_t>(g) * num_heads + h) * block;
        std::copy(src, src + block, dst);
      }
    }
    attn = add(attn, expanded);
  }
  attn = softmax_last(attn);
  if (attn_weights_out) *attn_weights_out = attn.detach();

  Tensor<T> ctx = bmm(reshape(attn, {G * num_heads, N, N}), v);
  Tensor<T> merged = reshape(permute(reshape(ctx, {G, num_heads, N, dh}), {0, 2, 1, 3}), {G, N, C});
  return linear(merged, p.proj_w, p.proj_b);
}

enum class StlPhase { regular, shifted };

// One Swin layer: Z' = Z + Attn(LN(Z)); Z'' = Z' + MLP(LN(Z')). The shifted
// phase cyclically rolls the grid by -w/2 before windowing and rolls back
// after, attending under the SW-MSA mask.
template <typename T>
Tensor<T> stl_forward(const Tensor<T>& tokens, TokenGrid grid, const StlParams<T>& p,
                      StlPhase phase, const TfmConfig& cfg, int heads) {
  const int B = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2);
  require(N == grid.h * grid.w, "stl_forward: token count does not match the grid");
  require(grid.h % cfg.window_size == 0 && grid.w % cfg.window_size == 0,
          "stl_forward: window size must divide the grid extents");
  const int w = cfg.window_size;
  const int s = phase == StlPhase::shifted ? cfg.shift() : 0;

  Tensor<T> h = layernorm(tokens, p.ln1_gamma, p.ln1_beta);
  Tensor<T> g = reshape(h, {B, grid.h, grid.w, C});
  if (s > 0) g = roll_hw(g, -s, -s);
  Tensor<T> mask;
  if (s > 0) mask = build_swmsa_mask<T>(grid.h, grid.w, w, s);
  Tensor<T> wins = window_partition(g, w);
  Tensor<T> aw = window_attention(wins, p, mask, heads, w, B);
  Tensor<T> back = window_reverse(aw, w, B, grid.h, grid.w);
  if (s > 0) back = roll_hw(back, s, s);
  Tensor<T> z1 = add(tokens, reshape(back, {B, N, C}));

  Tensor<T> h2 = layernorm(z1, p.ln2_gamma, p.ln2_beta);
  Tensor<T> mlp = linear(gelu(linear(h2, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  return add(z1, mlp);
}

// Modified Swin block: (W-MSA STL, SW-MSA STL, interaction conv) repeated
// depth/2 times; the conv runs on the token grid in NCHW layout.
template <typename T>
Tensor<T> mstb_forward(const Tensor<T>& tokens, TokenGrid grid, const MstbParams<T>& blk,
                       const TfmConfig& cfg, int heads) {
  const int B = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2);
  require(blk.stls.size() % 2 == 0, "mstb_forward: depth must be even");
  Tensor<T> z = tokens;
  for (std::size_t pair = 0; pair < blk.stls.size() / 2; ++pair) {
    z = stl_forward(z, grid, blk.stls[2 * pair], StlPhase::regular, cfg, heads);
    z = stl_forward(z, grid, blk.stls[2 * pair + 1], StlPhase::shifted, cfg, heads);
    Tensor<T> g = permute(reshape(z, {B, grid.h, grid.w, C}), {0, 3, 1, 2});
    g = conv2d(g, blk.interact_w[pair], blk.interact_b[pair], 1, cfg.interaction_kernel / 2, 1);
    z = reshape(permute(g, {0, 2, 3, 1}), {B, N, C});
  }
  return z;
}

// T_F = blocks(tokens(Conv(C_f))) + Conv(C_f)
template <typename T>
Tensor<T> tfm_forward(const Tensor<T>& cf, const TfmModel<T>& m) {
  const TfmConfig& cfg = m.cfg;
  Tensor<T> x0 = channel_reduce(cf, m);
  auto [tokens, grid] = patch_partition(x0, cfg.patch_size);
  require(grid.h % cfg.window_size == 0 && grid.w % cfg.window_size == 0,
          "tfm_forward: window size must divide the token grid");
  Tensor<T> z = tokens;
  for (std::size_t b = 0; b < m.blocks.size(); ++b)
    z = mstb_forward(z, grid, m.blocks[b], cfg, cfg.num_heads[b]);
  Tensor<T> body = patch_unpartition(z, grid, cfg.patch_size, cfg.embed_dim);
  return add(body, x0);
}

}  // namespace jct
