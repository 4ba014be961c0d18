#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "hypertea/tensor.hpp"

namespace hypertea {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw NumericsError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b,
                             Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, op);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>(op, a.shape(), std::move(out), {an, bn},
                    [ap = an.get(), bp = bn.get(), bwd](Node<T>& self) {
                      const auto& g = self.grad;
                      std::vector<T>* ga = ap->requires_grad ? &grad_buffer(*ap) : nullptr;
                      std::vector<T>* gb = bp->requires_grad ? &grad_buffer(*bp) : nullptr;
                      for (size_t i = 0; i < g.size(); ++i) {
                        auto [da, db] = bwd(ap->value[i], bp->value[i], g[i]);
                        if (ga) (*ga)[i] += da;
                        if (gb) (*gb)[i] += db;
                      }
                    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return std::pair<T, T>(g, g); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return std::pair<T, T>(g, -g); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g) { return std::pair<T, T>(g * y, g * x); });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T g) { return std::pair<T, T>(g / y, -g * x / (y * y)); });
}

// Ties route the gradient to the first operand.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "minimum", a, b, [](T x, T y) { return std::min(x, y); },
      [](T x, T y, T g) {
        return x <= y ? std::pair<T, T>(g, T(0)) : std::pair<T, T>(T(0), g);
      });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "maximum", a, b, [](T x, T y) { return std::max(x, y); },
      [](T x, T y, T g) {
        return x >= y ? std::pair<T, T>(g, T(0)) : std::pair<T, T>(T(0), g);
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary & scalar
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise_unary(const char* op, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  auto an = a.node();
  return make_op<T>(op, a.shape(), std::move(out), {an},
                    [ap = an.get(), bwd](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (size_t i = 0; i < self.grad.size(); ++i) {
                        ga[i] += bwd(ap->value[i], self.value[i], self.grad[i]);
                      }
                    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return elementwise_unary<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  return elementwise_unary<T>(
      "mul_scalar", a, [c](T x) { return x * c; }, [c](T, T, T g) { return g * c; });
}

template <typename T>
Tensor<T> sub_from_scalar(T c, const Tensor<T>& a) {
  return elementwise_unary<T>(
      "sub_from_scalar", a, [c](T x) { return c - x; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "sigmoid", a, [](T x) { return sigmoid_value(x); },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y, T g) { return g * (T(1) - y * y); });
}

// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "silu", a, [](T x) { return x * sigmoid_value(x); },
      [](T x, T, T g) {
        T s = sigmoid_value(x);
        return g * (s + x * s * (T(1) - s));
      });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

// Numerically stable binary cross-entropy on logits; `targets` is a constant.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.numel()) {
    throw NumericsError("bce_with_logits: target length mismatch");
  }
  const auto& x = logits.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::max(x[i], T(0)) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  auto an = logits.node();
  return make_op<T>("bce_with_logits", logits.shape(), std::move(out), {an},
                    [ap = an.get(), targets](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (size_t i = 0; i < self.grad.size(); ++i) {
                        ga[i] += self.grad[i] * (sigmoid_value(ap->value[i]) - targets[i]);
                      }
                    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  auto an = a.node();
  return make_op<T>("sum", {1}, {acc}, {an}, [ap = an.get()](Node<T>& self) {
    if (!ap->requires_grad) return;
    auto& ga = grad_buffer(*ap);
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix ops (2-D, row-major)
// ---------------------------------------------------------------------------

namespace detail {
// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void matmul_bt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = 0;
      const T* arow = a + i * k;
      const T* brow = b + j * k;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}
// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw NumericsError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::matmul_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_op<T>("matmul", {m, n}, std::move(out), {an, bn},
                    [ap = an.get(), bp = bn.get(), m, k, n](Node<T>& self) {
                      if (ap->requires_grad) {
                        detail::matmul_bt_acc(self.grad.data(), bp->value.data(),
                                              grad_buffer(*ap).data(), m, n, k);
                      }
                      if (bp->requires_grad) {
                        detail::matmul_at_acc(ap->value.data(), self.grad.data(),
                                              grad_buffer(*bp).data(), m, k, n);
                      }
                    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw NumericsError("transpose2d: rank != 2");
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto an = a.node();
  return make_op<T>("transpose2d", {n, m}, std::move(out), {an},
                    [ap = an.get(), m, n](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
                    });
}

// X[n,in] * W[in,out] + b[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1)) {
    throw NumericsError("linear: incompatible shapes");
  }
  int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  std::vector<T> out(n * out_dim);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < out_dim; ++j) out[i * out_dim + j] = b.data()[j];
  detail::matmul_acc(x.data().data(), w.data().data(), out.data(), n, in, out_dim);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op<T>("linear", {n, out_dim}, std::move(out), {xn, wn, bn},
                    [xp = xn.get(), wp = wn.get(), bp = bn.get(), n, in, out_dim](Node<T>& self) {
                      if (xp->requires_grad) {
                        detail::matmul_bt_acc(self.grad.data(), wp->value.data(),
                                              grad_buffer(*xp).data(), n, out_dim, in);
                      }
                      if (wp->requires_grad) {
                        detail::matmul_at_acc(xp->value.data(), self.grad.data(),
                                              grad_buffer(*wp).data(), n, in, out_dim);
                      }
                      if (bp->requires_grad) {
                        auto& gb = grad_buffer(*bp);
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < out_dim; ++j) gb[j] += self.grad[i * out_dim + j];
                      }
                    });
}

// Row-wise softmax with max subtraction; rows sum to one.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw NumericsError("softmax_rows: rank != 2");
  int64_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  for (int64_t i = 0; i < r; ++i) {
    const T* row = a.data().data() + i * c;
    T* orow = out.data() + i * c;
    T mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (int64_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  auto an = a.node();
  return make_op<T>("softmax_rows", a.shape(), std::move(out), {an},
                    [ap = an.get(), r, c](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (int64_t i = 0; i < r; ++i) {
                        const T* y = self.value.data() + i * c;
                        const T* g = self.grad.data() + i * c;
                        T dot = 0;
                        for (int64_t j = 0; j < c; ++j) dot += g[j] * y[j];
                        for (int64_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (g[j] - dot);
                      }
                    });
}

// ---------------------------------------------------------------------------
// Shape & layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw NumericsError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                        shape_str(shape));
  }
  auto an = a.node();
  return make_op<T>("reshape", std::move(shape), a.data(), {an},
                    [ap = an.get()](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                    });
}

// Concatenates along an axis; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
  if (parts.empty()) throw NumericsError("concat: empty input");
  const size_t rank = parts[0].rank();
  if (axis >= rank) throw NumericsError("concat: bad axis");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw NumericsError("concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
        throw NumericsError("concat: extent mismatch on axis " + std::to_string(d));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  std::vector<T> out(numel_of(out_shape));
  int64_t total_axis = out_shape[axis];
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) {
    int64_t pa = p.shape()[axis];
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = p.data().data() + o * pa * inner;
      T* dst = out.data() + (o * total_axis + offset) * inner;
      std::copy(src, src + pa * inner, dst);
    }
    offsets.push_back(offset);
    offset += pa;
    nodes.push_back(p.node());
  }
  std::vector<std::shared_ptr<Node<T>>> parents = nodes;
  return make_op<T>("concat", out_shape, std::move(out), std::move(parents),
                    [nodes, offsets, outer, inner, total_axis](Node<T>& self) {
                      for (size_t pi = 0; pi < nodes.size(); ++pi) {
                        Node<T>* p = nodes[pi].get();
                        if (!p->requires_grad) continue;
                        int64_t pa = static_cast<int64_t>(p->value.size()) / (outer * inner);
                        auto& gp = grad_buffer(*p);
                        for (int64_t o = 0; o < outer; ++o) {
                          const T* src = self.grad.data() + (o * total_axis + offsets[pi]) * inner;
                          T* dst = gp.data() + o * pa * inner;
                          for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                        }
                      }
                    });
}

// Contiguous slice [lo, hi) along an axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, int64_t lo, int64_t hi) {
  const size_t rank = a.rank();
  if (axis >= rank || lo < 0 || hi > a.shape()[axis] || lo >= hi) {
    throw NumericsError("slice: bad range");
  }
  Shape out_shape = a.shape();
  out_shape[axis] = hi - lo;
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (size_t d = axis + 1; d < rank; ++d) inner *= a.shape()[d];
  int64_t total_axis = a.shape()[axis];
  int64_t pa = hi - lo;

  std::vector<T> out(numel_of(out_shape));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = a.data().data() + (o * total_axis + lo) * inner;
    std::copy(src, src + pa * inner, out.data() + o * pa * inner);
  }
  auto an = a.node();
  return make_op<T>("slice", out_shape, std::move(out), {an},
                    [ap = an.get(), outer, inner, total_axis, lo, pa](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (int64_t o = 0; o < outer; ++o) {
                        T* dst = ga.data() + (o * total_axis + lo) * inner;
                        const T* src = self.grad.data() + o * pa * inner;
                        for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                      }
                    });
}

// Feature maps are [N,C,H,W] throughout; N carries the frame index for
// sequences and is 1 for single maps.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  return concat(parts, 1);
}

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  return concat(parts, 0);
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int64_t n) {
  return slice(x, 0, n, n + 1);
}

template <typename T>
std::vector<Tensor<T>> chunk_channels(const Tensor<T>& x, int64_t k) {
  int64_t c = x.dim(1);
  if (c % k != 0) {
    throw NumericsError("chunk_channels: " + std::to_string(c) + " channels not divisible by " +
                        std::to_string(k));
  }
  std::vector<Tensor<T>> out;
  int64_t step = c / k;
  for (int64_t i = 0; i < k; ++i) out.push_back(slice(x, 1, i * step, (i + 1) * step));
  return out;
}

// [N,C,h,w] -> [N*h*w, C] token matrix, tokens ordered frame-major then
// row-major over the grid.
template <typename T>
Tensor<T> tokens_from_maps(const Tensor<T>& x) {
  if (x.rank() != 4) throw NumericsError("tokens_from_maps: rank != 4");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t hw = h * w;
  std::vector<T> out(n * hw * c);
  const T* src = x.data().data();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t p = 0; p < hw; ++p)
        out[(ni * hw + p) * c + ci] = src[(ni * c + ci) * hw + p];
  auto an = x.node();
  return make_op<T>("tokens_from_maps", {n * hw, c}, std::move(out), {an},
                    [ap = an.get(), n, c, hw](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t ci = 0; ci < c; ++ci)
                          for (int64_t p = 0; p < hw; ++p)
                            ga[(ni * c + ci) * hw + p] += self.grad[(ni * hw + p) * c + ci];
                    });
}

// [N*h*w, C] token matrix -> [N,C,h,w] maps; exact inverse of tokens_from_maps.
template <typename T>
Tensor<T> map_from_tokens(const Tensor<T>& t, int64_t h, int64_t w) {
  if (t.rank() != 2 || h * w <= 0 || t.dim(0) % (h * w) != 0) {
    throw NumericsError("map_from_tokens: bad token count");
  }
  int64_t hw = h * w, n = t.dim(0) / hw, c = t.dim(1);
  std::vector<T> out(n * c * hw);
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t ci = 0; ci < c; ++ci)
        out[(ni * c + ci) * hw + p] = t.data()[(ni * hw + p) * c + ci];
  auto an = t.node();
  return make_op<T>("map_from_tokens", {n, c, h, w}, std::move(out), {an},
                    [ap = an.get(), n, c, hw](Node<T>& self) {
                      if (!ap->requires_grad) return;
                      auto& ga = grad_buffer(*ap);
                      for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t p = 0; p < hw; ++p)
                          for (int64_t ci = 0; ci < c; ++ci)
                            ga[(ni * hw + p) * c + ci] += self.grad[(ni * c + ci) * hw + p];
                    });
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

// x[N,C,H,W] * s[C], channel-wise.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 4 || s.numel() != x.dim(1)) throw NumericsError("scale_channels: bad shapes");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci) {
      T sv = s.data()[ci];
      const T* src = x.data().data() + (ni * c + ci) * hw;
      T* dst = out.data() + (ni * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) dst[p] = src[p] * sv;
    }
  auto xn = x.node();
  auto sn = s.node();
  return make_op<T>("scale_channels", x.shape(), std::move(out), {xn, sn},
                    [xp = xn.get(), sp = sn.get(), n, c, hw](Node<T>& self) {
                      std::vector<T>* gx = xp->requires_grad ? &grad_buffer(*xp) : nullptr;
                      std::vector<T>* gs = sp->requires_grad ? &grad_buffer(*sp) : nullptr;
                      for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t ci = 0; ci < c; ++ci) {
                          int64_t base = (ni * c + ci) * hw;
                          T sv = sp->value[ci];
                          for (int64_t p = 0; p < hw; ++p) {
                            T g = self.grad[base + p];
                            if (gx) (*gx)[base + p] += g * sv;
                            if (gs) (*gs)[ci] += g * xp->value[base + p];
                          }
                        }
                    });
}

// x[N,C,H,W] * m[N,1,H,W], broadcast over channels.
template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  if (x.rank() != 4 || m.rank() != 4 || m.dim(1) != 1 || m.dim(0) != x.dim(0) ||
      m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3)) {
    throw NumericsError("mul_spatial: bad shapes");
  }
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = x.data().data() + (ni * c + ci) * hw;
      const T* mp = m.data().data() + ni * hw;
      T* dst = out.data() + (ni * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) dst[p] = src[p] * mp[p];
    }
  auto xn = x.node();
  auto mn = m.node();
  return make_op<T>("mul_spatial", x.shape(), std::move(out), {xn, mn},
                    [xp = xn.get(), mp_ = mn.get(), n, c, hw](Node<T>& self) {
                      std::vector<T>* gx = xp->requires_grad ? &grad_buffer(*xp) : nullptr;
                      std::vector<T>* gm = mp_->requires_grad ? &grad_buffer(*mp_) : nullptr;
                      for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t ci = 0; ci < c; ++ci) {
                          int64_t base = (ni * c + ci) * hw;
                          for (int64_t p = 0; p < hw; ++p) {
                            T g = self.grad[base + p];
                            if (gx) (*gx)[base + p] += g * mp_->value[ni * hw + p];
                            if (gm) (*gm)[ni * hw + p] += g * xp->value[base + p];
                          }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Per-channel spatial statistics (single map [1,C,H,W] -> [C])
// ---------------------------------------------------------------------------

// Maximum over spatial positions; gradient routes to the first argmax.
template <typename T>
Tensor<T> channel_max_hw(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(0) != 1) throw NumericsError("channel_max_hw: expects [1,C,H,W]");
  int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(c);
  std::vector<int64_t> arg(c);
  for (int64_t ci = 0; ci < c; ++ci) {
    const T* src = x.data().data() + ci * hw;
    int64_t best = 0;
    for (int64_t p = 1; p < hw; ++p)
      if (src[p] > src[best]) best = p;
    out[ci] = src[best];
    arg[ci] = best;
  }
  auto xn = x.node();
  return make_op<T>("channel_max_hw", {c}, std::move(out), {xn},
                    [xp = xn.get(), arg, hw, c](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      auto& gx = grad_buffer(*xp);
                      for (int64_t ci = 0; ci < c; ++ci) gx[ci * hw + arg[ci]] += self.grad[ci];
                    });
}

// Population standard deviation over spatial positions.
template <typename T>
Tensor<T> channel_std_hw(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(0) != 1) throw NumericsError("channel_std_hw: expects [1,C,H,W]");
  int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(c), means(c);
  for (int64_t ci = 0; ci < c; ++ci) {
    const T* src = x.data().data() + ci * hw;
    T mean = 0;
    for (int64_t p = 0; p < hw; ++p) mean += src[p];
    mean /= static_cast<T>(hw);
    T var = 0;
    for (int64_t p = 0; p < hw; ++p) var += (src[p] - mean) * (src[p] - mean);
    var /= static_cast<T>(hw);
    means[ci] = mean;
    out[ci] = std::sqrt(var);
  }
  auto xn = x.node();
  return make_op<T>("channel_std_hw", {c}, std::move(out), {xn},
                    [xp = xn.get(), means, hw, c](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      auto& gx = grad_buffer(*xp);
                      for (int64_t ci = 0; ci < c; ++ci) {
                        T sd = self.value[ci];
                        if (sd <= T(0)) continue;  // constant channel: subgradient 0
                        T scale = self.grad[ci] / (static_cast<T>(hw) * sd);
                        const T* src = xp->value.data() + ci * hw;
                        for (int64_t p = 0; p < hw; ++p)
                          gx[ci * hw + p] += scale * (src[p] - means[ci]);
                      }
                    });
}

// Rows of per-cell features gathered from a [1,C,H,W] map at (y,x) cells.
template <typename T>
Tensor<T> gather_cells(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& cells) {
  if (x.rank() != 4 || x.dim(0) != 1) throw NumericsError("gather_cells: expects [1,C,H,W]");
  int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t p_count = static_cast<int64_t>(cells.size());
  std::vector<T> out(p_count * c);
  for (int64_t i = 0; i < p_count; ++i) {
    auto [cy, cx] = cells[i];
    if (cy < 0 || cy >= h || cx < 0 || cx >= w) throw NumericsError("gather_cells: out of range");
    for (int64_t ci = 0; ci < c; ++ci) out[i * c + ci] = x.data()[(ci * h + cy) * w + cx];
  }
  auto xn = x.node();
  return make_op<T>("gather_cells", {p_count, c}, std::move(out), {xn},
                    [xp = xn.get(), cells, c, h, w](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      auto& gx = grad_buffer(*xp);
                      for (size_t i = 0; i < cells.size(); ++i) {
                        auto [cy, cx] = cells[i];
                        for (int64_t ci = 0; ci < c; ++ci)
                          gx[(ci * h + cy) * w + cx] += self.grad[i * c + ci];
                      }
                    });
}

// Column j of a [R,C] matrix as a length-R vector.
template <typename T>
Tensor<T> column(const Tensor<T>& x, int64_t j) {
  if (x.rank() != 2 || j < 0 || j >= x.dim(1)) throw NumericsError("column: bad index");
  int64_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r);
  for (int64_t i = 0; i < r; ++i) out[i] = x.data()[i * c + j];
  auto xn = x.node();
  return make_op<T>("column", {r}, std::move(out), {xn},
                    [xp = xn.get(), j, c](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      auto& gx = grad_buffer(*xp);
                      for (size_t i = 0; i < self.grad.size(); ++i)
                        gx[i * c + j] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace hypertea
