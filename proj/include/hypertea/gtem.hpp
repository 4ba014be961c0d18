#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hypertea/hypergraph.hpp"
#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"

namespace hypertea {

// Direction-preferred convolution block: parallel 1x5 / 5x1 / 1x1 branches
// (plain convs) each refined by a 3x3 depthwise conv block, fused by a plain
// 3x3 conv over their concatenation, closed with a residual. Zeroing the
// fusion conv reduces the block to the identity exactly.
template <typename T>
struct Dpcb {
  Conv2d<T> conv_h;  // 1x5
  Conv2d<T> conv_v;  // 5x1
  Conv2d<T> conv_p;  // 1x1
  BasicConvBlock<T> dwc_h, dwc_v, dwc_p;  // 3x3 depthwise components
  Conv2d<T> fusion;  // 3x3, 3C -> C

  Dpcb() = default;
  Dpcb(int64_t c, Rng& rng)
      : conv_h(c, c, 1, 5, rng),
        conv_v(c, c, 5, 1, rng),
        conv_p(c, c, 1, 1, rng),
        dwc_h(c, c, 3, rng, 1, c),
        dwc_v(c, c, 3, rng, 1, c),
        dwc_p(c, c, 3, rng, 1, c),
        fusion(3 * c, c, 3, 3, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> lh = dwc_h.forward(conv_h.forward(x), training);
    Tensor<T> lv = dwc_v.forward(conv_v.forward(x), training);
    Tensor<T> lp = dwc_p.forward(conv_p.forward(x), training);
    return add(fusion.forward(concat_channels<T>({lh, lv, lp})), x);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    conv_h.collect(prefix + ".conv_h", reg);
    conv_v.collect(prefix + ".conv_v", reg);
    conv_p.collect(prefix + ".conv_p", reg);
    dwc_h.collect(prefix + ".dwc_h", reg);
    dwc_v.collect(prefix + ".dwc_v", reg);
    dwc_p.collect(prefix + ".dwc_p", reg);
    fusion.collect(prefix + ".fusion", reg);
  }
};

// Global temporal enhancement: concatenate all T frames, reduce with two conv
// blocks, sharpen directional structure (DPCB), propagate global context over
// a spatial-position hypergraph (HCU), then scatter the context back into
// every frame through one shared pair of conv blocks.
template <typename T>
struct Gtem {
  int64_t frames = 0;
  BasicConvBlock<T> agg1, agg2;
  Dpcb<T> dpcb;
  HcuUnit<T> hcu;
  BasicConvBlock<T> scatter1, scatter2;

  Gtem() = default;
  Gtem(int64_t c, int64_t t_frames, double tau, Rng& rng)
      : frames(t_frames),
        agg1(t_frames * c, c, 3, rng),
        agg2(c, c, 3, rng),
        dpcb(c, rng),
        hcu(c, tau, rng),
        scatter1(2 * c, c, 3, rng),
        scatter2(c, c, 3, rng) {}

  // All frames fused into one global map [1, C, H, W].
  Tensor<T> aggregate(const Tensor<T>& f_s, bool training) {
    std::vector<Tensor<T>> per_frame;
    per_frame.reserve(f_s.dim(0));
    for (int64_t i = 0; i < f_s.dim(0); ++i) per_frame.push_back(slice_batch(f_s, i));
    Tensor<T> stacked = concat_channels(per_frame);  // [1, T*C, H, W]
    return agg2.forward(agg1.forward(stacked, training), training);
  }

  // [T, C, H, W] -> [T, C, H, W]
  Tensor<T> forward(const Tensor<T>& f_s, bool training) {
    if (f_s.dim(0) != frames) {
      throw NumericsError("gtem: expected " + std::to_string(frames) + " frames, got " +
                          shape_str(f_s.shape()));
    }
    Tensor<T> l_gt = aggregate(f_s, training);
    Tensor<T> d_gt = dpcb.forward(l_gt, training);
    Tensor<T> g_h = hcu.forward_map(d_gt);
    // One shared scatter stack over every frame, applied batched.
    std::vector<Tensor<T>> replicas(frames, g_h);
    Tensor<T> g_rep = concat_batch(replicas);                    // [T, C, H, W]
    Tensor<T> cat = concat_channels<T>({f_s, g_rep});            // [T, 2C, H, W]
    return scatter2.forward(scatter1.forward(cat, training), training);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    agg1.collect(prefix + ".agg1", reg);
    agg2.collect(prefix + ".agg2", reg);
    dpcb.collect(prefix + ".dpcb", reg);
    hcu.collect(prefix + ".hcu", reg);
    scatter1.collect(prefix + ".scatter1", reg);
    scatter2.collect(prefix + ".scatter2", reg);
  }
};

}  // namespace hypertea
