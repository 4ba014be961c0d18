#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"

namespace hypertea {

struct BackboneConfig {
  int64_t in_channels = 1;
  std::vector<int64_t> widths = {16, 32, 64};  // one entry per stride-2 stage

  int64_t out_channels() const { return widths.back(); }
  int64_t out_stride() const {
    int64_t s = 1;
    for (size_t i = 0; i < widths.size(); ++i) s *= 2;
    return s;
  }
};

// Cross-stage partial residual block: the input forks into two 1x1 halves,
// one half runs a 3x3 residual bottleneck, and a 1x1 block merges them back
// to the full width.
template <typename T>
struct CspBlock {
  BasicConvBlock<T> left, right, mid1, mid2, merge;

  CspBlock() = default;
  CspBlock(int64_t c, Rng& rng)
      : left(c, c / 2, 1, rng),
        right(c, c / 2, 1, rng),
        mid1(c / 2, c / 2, 3, rng),
        mid2(c / 2, c / 2, 3, rng),
        merge(c, c, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> a = left.forward(x, training);
    Tensor<T> b = right.forward(x, training);
    Tensor<T> r = add(b, mid2.forward(mid1.forward(b, training), training));
    return merge.forward(concat_channels<T>({a, r}), training);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    left.collect(prefix + ".left", reg);
    right.collect(prefix + ".right", reg);
    mid1.collect(prefix + ".mid1", reg);
    mid2.collect(prefix + ".mid2", reg);
    merge.collect(prefix + ".merge", reg);
  }
};

// Per-frame spatial feature extractor: three stages of strided conv block +
// CSP block, total stride 8. The same weights serve every frame; a [T,1,H,W]
// batch is processed per frame by slicing.
template <typename T>
struct Backbone {
  BackboneConfig config;
  std::vector<BasicConvBlock<T>> downs;
  std::vector<CspBlock<T>> blocks;

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng) : config(cfg) {
    int64_t cin = cfg.in_channels;
    for (int64_t width : cfg.widths) {
      downs.emplace_back(cin, width, 3, rng, /*stride=*/2);
      blocks.emplace_back(width, rng);
      cin = width;
    }
  }

  // [N, in_channels, H0, W0] -> [N, C, H0/s, W0/s]
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    const int64_t s = config.out_stride();
    if (x.dim(2) % s != 0 || x.dim(3) % s != 0) {
      throw NumericsError("backbone: input extent " + shape_str(x.shape()) +
                          " not divisible by stride " + std::to_string(s));
    }
    Tensor<T> y = x;
    for (size_t i = 0; i < downs.size(); ++i) {
      y = downs[i].forward(y, training);
      y = blocks[i].forward(y, training);
    }
    return y;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    for (size_t i = 0; i < downs.size(); ++i) {
      downs[i].collect(prefix + ".stage" + std::to_string(i) + ".down", reg);
      blocks[i].collect(prefix + ".stage" + std::to_string(i) + ".csp", reg);
    }
  }
};

}  // namespace hypertea
