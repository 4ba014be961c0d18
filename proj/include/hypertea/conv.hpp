#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hypertea/tensor.hpp"

namespace hypertea {

// ---------------------------------------------------------------------------
// 2-D cross-correlation, NCHW, grouped.
//
// Weights are [C_out, C_in/groups, kh, kw]; padding defaults to kh/2, kw/2
// ("same" for the odd kernel extents used here: 1, 3, 5). Bias is optional.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 int64_t stride = 1, int64_t groups = 1, int64_t pad_h = -1,
                 int64_t pad_w = -1) {
  if (x.rank() != 4 || w.rank() != 4) throw NumericsError("conv2d: rank mismatch");
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1 || cin % groups != 0 || cout % groups != 0 || cig != cin / groups) {
    throw NumericsError("conv2d: channel/group mismatch: x " + shape_str(x.shape()) + ", w " +
                        shape_str(w.shape()) + ", groups " + std::to_string(groups));
  }
  if (bias && bias->numel() != cout) throw NumericsError("conv2d: bias length mismatch");
  if (pad_h < 0) pad_h = kh / 2;
  if (pad_w < 0) pad_w = kw / 2;
  const int64_t ho = (h + 2 * pad_h - kh) / stride + 1;
  const int64_t wo = (wd + 2 * pad_w - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw NumericsError("conv2d: empty output for input " + shape_str(x.shape()));
  const int64_t cpg_out = cout / groups;

  std::vector<T> out(n * cout * ho * wo, T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t co = 0; co < cout; ++co) {
      T* dst = out.data() + (ni * cout + co) * ho * wo;
      if (bias) {
        T b = bias->data()[co];
        for (int64_t p = 0; p < ho * wo; ++p) dst[p] = b;
      }
      const int64_t ci0 = (co / cpg_out) * cig;
      for (int64_t k = 0; k < cig; ++k) {
        const T* src = xv + (ni * cin + ci0 + k) * h * wd;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            T weight = wv[((co * cig + k) * kh + ky) * kw + kx];
            if (weight == T(0)) continue;
            for (int64_t oy = 0; oy < ho; ++oy) {
              int64_t iy = oy * stride + ky - pad_h;
              if (iy < 0 || iy >= h) continue;
              const T* srow = src + iy * wd;
              T* drow = dst + oy * wo;
              for (int64_t ox = 0; ox < wo; ++ox) {
                int64_t ix = ox * stride + kx - pad_w;
                if (ix < 0 || ix >= wd) continue;
                drow[ox] += weight * srow[ix];
              }
            }
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<Node<T>>> parents{xn, wn};
  std::shared_ptr<Node<T>> bn;
  if (bias) {
    bn = bias->node();
    parents.push_back(bn);
  }
  return make_op<T>(
      "conv2d", {n, cout, ho, wo}, std::move(out), std::move(parents),
      [xp = xn.get(), wp = wn.get(), bp = bn ? bn.get() : nullptr, n, cin, h, wd, cout, cig, kh,
       kw, stride, pad_h, pad_w, ho, wo, cpg_out](Node<T>& self) {
        const T* g = self.grad.data();
        std::vector<T>* gx = xp->requires_grad ? &grad_buffer(*xp) : nullptr;
        std::vector<T>* gw = wp->requires_grad ? &grad_buffer(*wp) : nullptr;
        if (bp && bp->requires_grad) {
          auto& gb = grad_buffer(*bp);
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t co = 0; co < cout; ++co) {
              const T* grow = g + (ni * cout + co) * ho * wo;
              T acc = 0;
              for (int64_t p = 0; p < ho * wo; ++p) acc += grow[p];
              gb[co] += acc;
            }
        }
        if (!gx && !gw) return;
        for (int64_t ni = 0; ni < n; ++ni) {
          for (int64_t co = 0; co < cout; ++co) {
            const T* grow = g + (ni * cout + co) * ho * wo;
            const int64_t ci0 = (co / cpg_out) * cig;
            for (int64_t k = 0; k < cig; ++k) {
              const T* src = xp->value.data() + (ni * cin + ci0 + k) * h * wd;
              T* gsrc = gx ? gx->data() + (ni * cin + ci0 + k) * h * wd : nullptr;
              for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const int64_t widx = ((co * cig + k) * kh + ky) * kw + kx;
                  T weight = wp->value[widx];
                  T wacc = 0;
                  for (int64_t oy = 0; oy < ho; ++oy) {
                    int64_t iy = oy * stride + ky - pad_h;
                    if (iy < 0 || iy >= h) continue;
                    const T* grow2 = grow + oy * wo;
                    for (int64_t ox = 0; ox < wo; ++ox) {
                      int64_t ix = ox * stride + kx - pad_w;
                      if (ix < 0 || ix >= wd) continue;
                      if (gsrc) gsrc[iy * wd + ix] += grow2[ox] * weight;
                      if (gw) wacc += grow2[ox] * src[iy * wd + ix];
                    }
                  }
                  if (gw) (*gw)[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int64_t stride = 1, int64_t groups = 1) {
  return conv2d(x, w, &bias, stride, groups);
}

template <typename T>
Tensor<T> conv2d_nobias(const Tensor<T>& x, const Tensor<T>& w, int64_t stride = 1,
                        int64_t groups = 1) {
  return conv2d<T>(x, w, nullptr, stride, groups);
}

// ---------------------------------------------------------------------------
// Nearest-neighbor upsample by an integer factor.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t factor) {
  if (x.rank() != 4 || factor < 1) throw NumericsError("upsample_nearest: bad input");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h * factor, wo = w * factor;
  std::vector<T> out(n * c * ho * wo);
  for (int64_t m = 0; m < n * c; ++m) {
    const T* src = x.data().data() + m * h * w;
    T* dst = out.data() + m * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy) {
      const T* srow = src + (oy / factor) * w;
      T* drow = dst + oy * wo;
      for (int64_t ox = 0; ox < wo; ++ox) drow[ox] = srow[ox / factor];
    }
  }
  auto xn = x.node();
  return make_op<T>("upsample_nearest", {n, c, ho, wo}, std::move(out), {xn},
                    [xp = xn.get(), n, c, h, w, factor](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      auto& gx = grad_buffer(*xp);
                      const int64_t ho = h * factor, wo = w * factor;
                      for (int64_t m = 0; m < n * c; ++m) {
                        const T* grow = self.grad.data() + m * ho * wo;
                        T* dst = gx.data() + m * h * w;
                        for (int64_t oy = 0; oy < ho; ++oy)
                          for (int64_t ox = 0; ox < wo; ++ox)
                            dst[(oy / factor) * w + ox / factor] += grow[oy * wo + ox];
                      }
                    });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.
//
// Train mode normalizes with biased batch statistics and updates the running
// buffers in place (running variance uses the unbiased estimator, momentum
// weighting new stats). Eval mode normalizes with the frozen buffers.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4) throw NumericsError("batch_norm: rank != 4");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || static_cast<int64_t>(running_mean.size()) != c ||
      static_cast<int64_t>(running_var.size()) != c) {
    throw NumericsError("batch_norm: parameter length mismatch");
  }
  const int64_t hw = h * w;
  const int64_t m = n * hw;  // samples per channel

  std::vector<T> mean(c), inv_std(c), xhat(x.numel());
  const T* xv = x.data().data();
  for (int64_t ci = 0; ci < c; ++ci) {
    T mu = 0, var = 0;
    if (training) {
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* src = xv + (ni * c + ci) * hw;
        for (int64_t p = 0; p < hw; ++p) mu += src[p];
      }
      mu /= static_cast<T>(m);
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* src = xv + (ni * c + ci) * hw;
        for (int64_t p = 0; p < hw; ++p) var += (src[p] - mu) * (src[p] - mu);
      }
      var /= static_cast<T>(m);
      T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
      running_mean[ci] = (T(1) - momentum) * running_mean[ci] + momentum * mu;
      running_var[ci] = (T(1) - momentum) * running_var[ci] + momentum * unbiased;
    } else {
      mu = running_mean[ci];
      var = running_var[ci];
    }
    mean[ci] = mu;
    inv_std[ci] = T(1) / std::sqrt(var + eps);
  }
  std::vector<T> out(x.numel());
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (ni * c + ci) * hw;
      const T g = gamma.data()[ci], b = beta.data()[ci];
      for (int64_t p = 0; p < hw; ++p) {
        xhat[base + p] = (xv[base + p] - mean[ci]) * inv_std[ci];
        out[base + p] = g * xhat[base + p] + b;
      }
    }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op<T>(
      "batch_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xp = xn.get(), gp = gn.get(), bp = bn.get(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), training, n, c, hw, m](Node<T>& self) {
        const T* g = self.grad.data();
        if (bp->requires_grad) {
          auto& gb = grad_buffer(*bp);
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
              const T* grow = g + (ni * c + ci) * hw;
              T acc = 0;
              for (int64_t p = 0; p < hw; ++p) acc += grow[p];
              gb[ci] += acc;
            }
        }
        if (gp->requires_grad) {
          auto& gg = grad_buffer(*gp);
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
              const int64_t base = (ni * c + ci) * hw;
              T acc = 0;
              for (int64_t p = 0; p < hw; ++p) acc += g[base + p] * xhat[base + p];
              gg[ci] += acc;
            }
        }
        if (!xp->requires_grad) return;
        auto& gx = grad_buffer(*xp);
        for (int64_t ci = 0; ci < c; ++ci) {
          const T gamma_v = gp->value[ci];
          if (!training) {
            const T k = gamma_v * inv_std[ci];
            for (int64_t ni = 0; ni < n; ++ni) {
              const int64_t base = (ni * c + ci) * hw;
              for (int64_t p = 0; p < hw; ++p) gx[base + p] += g[base + p] * k;
            }
            continue;
          }
          // Train mode: the batch statistics depend on x.
          T sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int64_t ni = 0; ni < n; ++ni) {
            const int64_t base = (ni * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
              T dxh = g[base + p] * gamma_v;
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat[base + p];
            }
          }
          const T scale = inv_std[ci] / static_cast<T>(m);
          for (int64_t ni = 0; ni < n; ++ni) {
            const int64_t base = (ni * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
              T dxh = g[base + p] * gamma_v;
              gx[base + p] += scale * (static_cast<T>(m) * dxh - sum_dxhat -
                                       xhat[base + p] * sum_dxhat_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layer normalization across each row of a [R, C] token matrix.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  if (x.rank() != 2) throw NumericsError("layer_norm_rows: rank != 2");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw NumericsError("layer_norm_rows: parameter length mismatch");
  }
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(r);
  const T* xv = x.data().data();
  for (int64_t i = 0; i < r; ++i) {
    const T* row = xv + i * c;
    T mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = gamma.data()[j] * xhat[i * c + j] + beta.data()[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op<T>(
      "layer_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xp = xn.get(), gp = gn.get(), bp = bn.get(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), r, c](Node<T>& self) {
        const T* g = self.grad.data();
        if (bp->requires_grad) {
          auto& gb = grad_buffer(*bp);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
        if (gp->requires_grad) {
          auto& gg = grad_buffer(*gp);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
        }
        if (!xp->requires_grad) return;
        auto& gx = grad_buffer(*xp);
        for (int64_t i = 0; i < r; ++i) {
          T sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int64_t j = 0; j < c; ++j) {
            T dxh = g[i * c + j] * gp->value[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[i * c + j];
          }
          const T scale = inv_std[i] / static_cast<T>(c);
          for (int64_t j = 0; j < c; ++j) {
            T dxh = g[i * c + j] * gp->value[j];
            gx[i * c + j] += scale * (static_cast<T>(c) * dxh - sum_dxhat -
                                      xhat[i * c + j] * sum_dxhat_xhat);
          }
        }
      });
}

}  // namespace hypertea
