#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"

namespace hypertea {

// Scaled dot-product attention over token matrices. Returns the attended
// values; `weights_out` (optional) receives the softmax rows for inspection.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                    Tensor<T>* weights_out = nullptr) {
  Tensor<T> scores = mul_scalar(matmul(q, transpose2d(k)), scale);
  Tensor<T> weights = softmax_rows(scores);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

// Conv1x1 -> Conv3x3 -> Conv1x1 projection applied on per-frame token grids.
template <typename T>
struct ProjStack {
  Conv2d<T> a, b, c;

  ProjStack() = default;
  ProjStack(int64_t ch, Rng& rng)
      : a(ch, ch, 1, 1, rng), b(ch, ch, 3, 3, rng), c(ch, ch, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const { return c.forward(b.forward(a.forward(x))); }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    a.collect(prefix + ".a", reg);
    b.collect(prefix + ".b", reg);
    c.collect(prefix + ".c", reg);
  }
};

// Global-local temporal attention: local-context queries attend over
// key/value tokens drawn from every frame of the global context, and the
// result is folded back with the keyframe map:
//   R = LN(G_T + UP(LN(Conv1x1(Attn) + L_hat))).
template <typename T>
struct Glta {
  PatchEmbed<T> embed_g, embed_l;
  ProjStack<T> proj_q, proj_k, proj_v;
  Conv2d<T> out_conv;            // 1x1 on attended tokens
  LayerNorm<T> norm_mid, norm_out;
  UpsampleReconstruct<T> up;     // token grid -> input extent
  int64_t ps = 2;

  Glta() = default;
  Glta(int64_t c, int64_t ps_, Rng& rng)
      : embed_g(c, c, ps_, rng),
        embed_l(c, c, ps_, rng),
        proj_q(c, rng),
        proj_k(c, rng),
        proj_v(c, rng),
        out_conv(c, c, 1, 1, rng),
        norm_mid(c),
        norm_out(c),
        up(c, c, ps_, rng),
        ps(ps_) {}

  // g_st: [T, C, H, W]; l_st: [1, C, H, W] -> [1, C, H, W]
  Tensor<T> forward(const Tensor<T>& g_st, const Tensor<T>& l_st,
                    Tensor<T>* attn_weights_out = nullptr) const {
    const int64_t c = g_st.dim(1);
    Tensor<T> g_hat = embed_g.forward(g_st);  // [T, C, h, w]
    Tensor<T> l_hat = embed_l.forward(l_st);  // [1, C, h, w]
    const int64_t h = g_hat.dim(2), w = g_hat.dim(3);

    Tensor<T> q = tokens_from_maps(proj_q.forward(l_hat));  // [h*w, C]
    Tensor<T> k = tokens_from_maps(proj_k.forward(g_hat));  // [T*h*w, C]
    Tensor<T> v = tokens_from_maps(proj_v.forward(g_hat));

    const T scale = T(1) / std::sqrt(static_cast<T>(c));
    Tensor<T> attended = attention(q, k, v, scale, attn_weights_out);  // [h*w, C]

    Tensor<T> mixed = add(out_conv.forward(map_from_tokens(attended, h, w)), l_hat);
    Tensor<T> mixed_norm = map_from_tokens(norm_mid.forward(tokens_from_maps(mixed)), h, w);
    Tensor<T> restored = up.forward(mixed_norm);  // [1, C, H, W]

    Tensor<T> g_last = slice_batch(g_st, g_st.dim(0) - 1);
    Tensor<T> summed = add(g_last, restored);
    return map_from_tokens(norm_out.forward(tokens_from_maps(summed)), g_st.dim(2), g_st.dim(3));
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    embed_g.collect(prefix + ".embed_g", reg);
    embed_l.collect(prefix + ".embed_l", reg);
    proj_q.collect(prefix + ".proj_q", reg);
    proj_k.collect(prefix + ".proj_k", reg);
    proj_v.collect(prefix + ".proj_v", reg);
    out_conv.collect(prefix + ".out_conv", reg);
    norm_mid.collect(prefix + ".norm_mid", reg);
    norm_out.collect(prefix + ".norm_out", reg);
    up.collect(prefix + ".up", reg);
  }
};

// Channel-spatial aggregation: a sigmoid spatial gate on a two-branch
// depthwise refinement, a sigmoid channel gate from per-channel max and
// standard deviation, and a residual:
//   X_s  = merge([DWC3(entry(X)), DWC5(entry(X))])
//   X_sa = sigmoid(sa(X_s)) * X_s
//   X_ca = sigmoid(fc([max_c(X), std_c(X)]))
//   X_sc = X_ca * X_sa + X
template <typename T>
struct Csam {
  Conv2d<T> entry;   // 1x1, C -> C (shared by both branches)
  Conv2d<T> dwc3;    // 3x3 depthwise
  Conv2d<T> dwc5;    // 5x5 depthwise
  Conv2d<T> merge;   // 1x1, 2C -> C
  Conv2d<T> sa;      // 1x1, C -> 1 (spatial gate logits)
  Linear<T> fc;      // 2C -> C (channel gate logits)

  Csam() = default;
  Csam(int64_t c, Rng& rng)
      : entry(c, c, 1, 1, rng),
        dwc3(c, c, 3, 3, rng, true, 1, c),
        dwc5(c, c, 5, 5, rng, true, 1, c),
        merge(2 * c, c, 1, 1, rng),
        sa(c, 1, 1, 1, rng),
        fc(2 * c, c, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    const int64_t c = x.dim(1);
    Tensor<T> e = entry.forward(x);
    Tensor<T> x_s = merge.forward(concat_channels<T>({dwc3.forward(e), dwc5.forward(e)}));
    Tensor<T> x_sa = mul_spatial(x_s, sigmoid(sa.forward(x_s)));

    Tensor<T> stats = concat<T>({channel_max_hw(x), channel_std_hw(x)}, 0);  // [2C]
    Tensor<T> gate = sigmoid(fc.forward(reshape(stats, {1, 2 * c})));        // [1, C]
    Tensor<T> x_ca = reshape(gate, {c});
    return add(scale_channels(x_sa, x_ca), x);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    entry.collect(prefix + ".entry", reg);
    dwc3.collect(prefix + ".dwc3", reg);
    dwc5.collect(prefix + ".dwc5", reg);
    merge.collect(prefix + ".merge", reg);
    sa.collect(prefix + ".sa", reg);
    fc.collect(prefix + ".fc", reg);
  }
};

// Temporal alignment: cross-attention fusion followed by channel-spatial
// re-weighting.
template <typename T>
struct Tam {
  Glta<T> glta;
  Csam<T> csam;

  Tam() = default;
  Tam(int64_t c, int64_t ps, Rng& rng) : glta(c, ps, rng), csam(c, rng) {}

  Tensor<T> forward(const Tensor<T>& g_st, const Tensor<T>& l_st) const {
    return csam.forward(glta.forward(g_st, l_st));
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    glta.collect(prefix + ".glta", reg);
    csam.collect(prefix + ".csam", reg);
  }
};

}  // namespace hypertea
