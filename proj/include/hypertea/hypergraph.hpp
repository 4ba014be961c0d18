#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"
#include "hypertea/tensor.hpp"

namespace hypertea {

// Distance-based hypergraph over N vertices: one hyperedge per vertex holding
// every vertex within Euclidean feature distance tau (self-distance 0 keeps
// each vertex in its own hyperedge, so all degrees are >= 1 and M = N).
// Stored sparsely: edge_members are the columns of the incidence matrix H,
// vertex_edges its rows.
struct Hypergraph {
  int64_t n = 0;
  int64_t m = 0;
  double tau = 0.0;
  std::vector<std::vector<int32_t>> edge_members;  // e -> vertices in e (ascending)
  std::vector<std::vector<int32_t>> vertex_edges;  // v -> edges containing v (ascending)
  std::vector<int64_t> dv;                         // vertex degrees
  std::vector<int64_t> de;                         // hyperedge degrees
};

// eps-ball construction on row-vector features [N, C]. Membership compares
// squared distances, so tau = +inf yields the complete hypergraph exactly.
template <typename T>
Hypergraph build_hypergraph(const T* features, int64_t n, int64_t c, double tau) {
  if (n < 1 || tau < 0.0) throw NumericsError("build_hypergraph: need N >= 1 and tau >= 0");
  for (int64_t i = 0; i < n * c; ++i) {
    if (!std::isfinite(features[i])) {
      throw NumericsError("build_hypergraph: non-finite feature at flat index " +
                          std::to_string(i));
    }
  }
  Hypergraph hg;
  hg.n = n;
  hg.m = n;
  hg.tau = tau;
  hg.edge_members.resize(n);
  hg.vertex_edges.resize(n);
  const double tau2 = tau * tau;
  for (int64_t v = 0; v < n; ++v) {
    const T* fv = features + v * c;
    auto& members = hg.edge_members[v];
    for (int64_t u = 0; u < n; ++u) {
      const T* fu = features + u * c;
      double d2 = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        double d = static_cast<double>(fu[k]) - static_cast<double>(fv[k]);
        d2 += d * d;
      }
      if (d2 <= tau2) {
        members.push_back(static_cast<int32_t>(u));
        hg.vertex_edges[u].push_back(static_cast<int32_t>(v));
      }
    }
  }
  hg.dv.assign(n, 0);
  hg.de.assign(n, 0);
  for (int64_t e = 0; e < n; ++e) hg.de[e] = static_cast<int64_t>(hg.edge_members[e].size());
  for (int64_t v = 0; v < n; ++v) hg.dv[v] = static_cast<int64_t>(hg.vertex_edges[v].size());
  return hg;
}

template <typename T>
Hypergraph build_hypergraph(const Tensor<T>& features, double tau) {
  if (features.rank() != 2) throw NumericsError("build_hypergraph: features must be [N, C]");
  return build_hypergraph(features.data().data(), features.dim(0), features.dim(1), tau);
}

// Two-stage propagation Y = P X with P = Dv^-1 H De^-1 H^T: vertices average
// into their hyperedges, hyperedges average back into vertices. P is
// row-stochastic, so constants pass through unchanged. The reverse pass
// applies P^T = H De^-1 H^T Dv^-1 with the same membership lists; no gradient
// flows through the discrete incidence structure.
template <typename T>
Tensor<T> hyper_propagate(const Tensor<T>& x, std::shared_ptr<const Hypergraph> hg_ptr) {
  const Hypergraph& hg = *hg_ptr;
  if (x.rank() != 2 || x.dim(0) != hg.n) {
    throw NumericsError("hyper_propagate: features " + shape_str(x.shape()) +
                        " do not match vertex count " + std::to_string(hg.n));
  }
  const int64_t n = hg.n, c = x.dim(1);
  std::vector<T> edge_feat(hg.m * c, T(0));
  const T* xv = x.data().data();
  for (int64_t e = 0; e < hg.m; ++e) {
    T* dst = edge_feat.data() + e * c;
    for (int32_t u : hg.edge_members[e]) {
      const T* src = xv + static_cast<int64_t>(u) * c;
      for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
    }
    const T inv = T(1) / static_cast<T>(hg.de[e]);
    for (int64_t k = 0; k < c; ++k) dst[k] *= inv;
  }
  std::vector<T> out(n * c, T(0));
  for (int64_t v = 0; v < n; ++v) {
    T* dst = out.data() + v * c;
    for (int32_t e : hg.vertex_edges[v]) {
      const T* src = edge_feat.data() + static_cast<int64_t>(e) * c;
      for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
    }
    const T inv = T(1) / static_cast<T>(hg.dv[v]);
    for (int64_t k = 0; k < c; ++k) dst[k] *= inv;
  }
  auto xn = x.node();
  return make_op<T>("hyper_propagate", x.shape(), std::move(out), {xn},
                    [xp = xn.get(), hg_ptr = std::move(hg_ptr), n, c](Node<T>& self) {
                      if (!xp->requires_grad) return;
                      const Hypergraph& g = *hg_ptr;
                      std::vector<T> scaled(n * c);
                      for (int64_t v = 0; v < n; ++v) {
                        const T inv = T(1) / static_cast<T>(g.dv[v]);
                        for (int64_t k = 0; k < c; ++k)
                          scaled[v * c + k] = self.grad[v * c + k] * inv;
                      }
                      std::vector<T> edge_grad(g.m * c, T(0));
                      for (int64_t e = 0; e < g.m; ++e) {
                        T* dst = edge_grad.data() + e * c;
                        for (int32_t u : g.edge_members[e]) {
                          const T* src = scaled.data() + static_cast<int64_t>(u) * c;
                          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                        }
                        const T inv = T(1) / static_cast<T>(g.de[e]);
                        for (int64_t k = 0; k < c; ++k) dst[k] *= inv;
                      }
                      auto& gx = grad_buffer(*xp);
                      for (int64_t v = 0; v < n; ++v) {
                        T* dst = gx.data() + v * c;
                        for (int32_t e : g.vertex_edges[v]) {
                          const T* src = edge_grad.data() + static_cast<int64_t>(e) * c;
                          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> hyper_propagate(const Tensor<T>& x, const Hypergraph& hg) {
  return hyper_propagate(x, std::make_shared<const Hypergraph>(hg));
}

// Hypergraph convolution unit (residual two-stage propagation):
//   Y = X + P (X Theta + bias).
template <typename T>
Tensor<T> hcu_forward(const Tensor<T>& x, std::shared_ptr<const Hypergraph> hg,
                      const Tensor<T>& theta, const Tensor<T>& bias) {
  if (theta.rank() != 2 || theta.dim(0) != theta.dim(1) || theta.dim(0) != x.dim(1)) {
    throw NumericsError("hcu_forward: Theta must be square [C, C] matching the features");
  }
  return add(x, hyper_propagate(linear(x, theta, bias), std::move(hg)));
}

template <typename T>
Tensor<T> hcu_forward(const Tensor<T>& x, const Hypergraph& hg, const Tensor<T>& theta,
                      const Tensor<T>& bias) {
  return hcu_forward(x, std::make_shared<const Hypergraph>(hg), theta, bias);
}

// HCU as a module: owns Theta/bias and rebuilds the hypergraph from the
// current input features on every call.
template <typename T>
struct HcuUnit {
  Tensor<T> theta;  // [C, C]
  Tensor<T> bias;   // [C]
  double tau = 8.0;

  HcuUnit() = default;
  HcuUnit(int64_t c, double tau_, Rng& rng)
      : theta(detail::fan_in_uniform<T>({c, c}, c, rng)),
        bias(detail::fan_in_uniform<T>({c}, c, rng)),
        tau(tau_) {}

  // Tokens [N, C] -> [N, C]; the graph is built on the token values.
  Tensor<T> forward_tokens(const Tensor<T>& tokens, Hypergraph* out_hg = nullptr) const {
    auto hg = std::make_shared<const Hypergraph>(build_hypergraph(tokens, tau));
    if (out_hg) *out_hg = *hg;
    return hcu_forward(tokens, std::move(hg), theta, bias);
  }

  // Map [1, C, h, w] -> [1, C, h, w] with one vertex per spatial position.
  Tensor<T> forward_map(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(0) != 1) throw NumericsError("hcu forward_map: expects [1,C,h,w]");
    Tensor<T> tokens = tokens_from_maps(x);
    return map_from_tokens(forward_tokens(tokens), x.dim(2), x.dim(3));
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_param(prefix + ".theta", theta);
    reg.add_param(prefix + ".bias", bias);
  }
};

// Plain-text dump of the incidence structure for fixture inspection:
// header line "N M tau", then H row by row, then Dv and De.
inline void dump_hypergraph(const Hypergraph& hg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw NumericsError("dump_hypergraph: cannot open " + path);
  out << hg.n << " " << hg.m << " " << hg.tau << "\n";
  std::vector<std::vector<char>> dense(hg.n, std::vector<char>(hg.m, 0));
  for (int64_t e = 0; e < hg.m; ++e)
    for (int32_t v : hg.edge_members[e]) dense[v][e] = 1;
  for (int64_t v = 0; v < hg.n; ++v) {
    for (int64_t e = 0; e < hg.m; ++e) out << (e ? " " : "") << int(dense[v][e]);
    out << "\n";
  }
  for (int64_t v = 0; v < hg.n; ++v) out << (v ? " " : "") << hg.dv[v];
  out << "\n";
  for (int64_t e = 0; e < hg.m; ++e) out << (e ? " " : "") << hg.de[e];
  out << "\n";
}

}  // namespace hypertea
