#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hypertea/conv.hpp"
#include "hypertea/ops.hpp"
#include "hypertea/rng.hpp"
#include "hypertea/tensor.hpp"

namespace hypertea {

// Named views of a model's learnable tensors and its non-learnable state
// (batch-norm running statistics). Rebuild after any structural change; the
// buffer pointers alias storage inside the module objects.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::pair<std::string, std::vector<T>*>> buffers;

  void add_param(std::string name, const Tensor<T>& p) {
    params.emplace_back(std::move(name), p);
  }
  void add_buffer(std::string name, std::vector<T>* b) {
    buffers.emplace_back(std::move(name), b);
  }
  int64_t param_count() const {
    int64_t total = 0;
    for (const auto& [name, p] : params) total += p.numel();
    return total;
  }
};

// Saves every registered buffer (batch-norm running stats) so that repeated
// train-mode forwards — e.g. inside a finite-difference loop — stay
// side-effect free.
template <typename T>
class BufferSnapshot {
 public:
  explicit BufferSnapshot(const ParamRegistry<T>& reg) {
    for (const auto& [name, ptr] : reg.buffers) {
      ptrs_.push_back(ptr);
      saved_.push_back(*ptr);
    }
  }
  void restore() const {
    for (size_t i = 0; i < ptrs_.size(); ++i) *ptrs_[i] = saved_[i];
  }

 private:
  std::vector<std::vector<T>*> ptrs_;
  std::vector<std::vector<T>> saved_;
};

namespace detail {
// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the standard conv/linear default.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-static_cast<double>(bound),
                                                   static_cast<double>(bound)));
  Tensor<T> t = Tensor<T>::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}
}  // namespace detail

// Plain 2-D convolution layer (optionally grouped / strided / bias-free).
template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [C_out, C_in/groups, kh, kw]
  Tensor<T> bias;    // [C_out] when has_bias
  bool has_bias = false;
  int64_t stride = 1;
  int64_t groups = 1;

  Conv2d() = default;
  Conv2d(int64_t cin, int64_t cout, int64_t kh, int64_t kw, Rng& rng, bool with_bias = true,
         int64_t stride_ = 1, int64_t groups_ = 1)
      : has_bias(with_bias), stride(stride_), groups(groups_) {
    int64_t fan_in = (cin / groups_) * kh * kw;
    weight = detail::fan_in_uniform<T>({cout, cin / groups_, kh, kw}, fan_in, rng);
    if (with_bias) bias = detail::fan_in_uniform<T>({cout}, fan_in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d<T>(x, weight, has_bias ? &bias : nullptr, stride, groups);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_param(prefix + ".weight", weight);
    if (has_bias) reg.add_param(prefix + ".bias", bias);
  }
};

// Convolution -> batch norm -> SiLU; the repeated building block.
template <typename T>
struct BasicConvBlock {
  Conv2d<T> conv;
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;

  BasicConvBlock() = default;
  BasicConvBlock(int64_t cin, int64_t cout, int64_t k, Rng& rng, int64_t stride = 1,
                 int64_t groups = 1)
      : conv(cin, cout, k, k, rng, /*with_bias=*/false, stride, groups),
        gamma(Tensor<T>::filled({cout}, T(1))),
        beta(Tensor<T>::zeros({cout})),
        running_mean(cout, T(0)),
        running_var(cout, T(1)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = conv.forward(x);
    y = batch_norm(y, gamma, beta, running_mean, running_var, training);
    return silu(y);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    conv.collect(prefix + ".conv", reg);
    reg.add_param(prefix + ".bn.gamma", gamma);
    reg.add_param(prefix + ".bn.beta", beta);
    reg.add_buffer(prefix + ".bn.running_mean", &running_mean);
    reg.add_buffer(prefix + ".bn.running_var", &running_var);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int64_t c) : gamma(Tensor<T>::filled({c}, T(1))), beta(Tensor<T>::zeros({c})) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& tokens) const {
    return layer_norm_rows(tokens, gamma, beta);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_param(prefix + ".gamma", gamma);
    reg.add_param(prefix + ".beta", beta);
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng)
      : weight(detail::fan_in_uniform<T>({in, out}, in, rng)),
        bias(detail::fan_in_uniform<T>({out}, in, rng)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_param(prefix + ".weight", weight);
    reg.add_param(prefix + ".bias", bias);
  }
};

// ps x ps stride-ps convolution followed by per-token layer normalization.
// Input [N,C,H,W] -> [N,D,H/ps,W/ps].
template <typename T>
struct PatchEmbed {
  Conv2d<T> proj;
  LayerNorm<T> norm;
  int64_t ps = 1;

  PatchEmbed() = default;
  PatchEmbed(int64_t cin, int64_t d, int64_t ps_, Rng& rng)
      : proj(cin, d, ps_, ps_, rng, /*with_bias=*/true, /*stride=*/ps_), norm(d), ps(ps_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.dim(2) % ps != 0 || x.dim(3) % ps != 0) {
      throw NumericsError("patch_embed: extent not divisible by patch size " +
                          std::to_string(ps) + ": " + shape_str(x.shape()));
    }
    Tensor<T> y = conv2d<T>(x, proj.weight, &proj.bias, ps, 1, 0, 0);
    int64_t h = y.dim(2), w = y.dim(3);
    Tensor<T> t = norm.forward(tokens_from_maps(y));
    return map_from_tokens(t, h, w);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    proj.collect(prefix + ".proj", reg);
    norm.collect(prefix + ".norm", reg);
  }
};

// Nearest-neighbor x ps upsample followed by a 3x3 convolution back to the
// requested channel width.
template <typename T>
struct UpsampleReconstruct {
  Conv2d<T> conv;
  int64_t factor = 1;

  UpsampleReconstruct() = default;
  UpsampleReconstruct(int64_t cin, int64_t cout, int64_t factor_, Rng& rng)
      : conv(cin, cout, 3, 3, rng, /*with_bias=*/true), factor(factor_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv.forward(upsample_nearest(x, factor));
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    conv.collect(prefix + ".conv", reg);
  }
};

}  // namespace hypertea
