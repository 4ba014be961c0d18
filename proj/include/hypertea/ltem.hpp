#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypertea/hypergraph.hpp"
#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"

namespace hypertea {

// Recurrent cell state at token resolution.
template <typename T>
struct HcCellState {
  Tensor<T> c;  // cell memory   [1, C_h, h, w]
  Tensor<T> h;  // hidden state  [1, C_h, h, w]
};

// LSTM-style cell whose joint gate pre-activation passes through a hypergraph
// convolution unit before gate splitting:
//   L_h  = HCU(Conv1x1([X_t, H_{t-1}]))
//   F_t  = Conv1x1(L_h) + L_h
//   i,f,o = sigmoid(chunks), g = tanh(chunk)
//   C_t  = f * C_{t-1} + i * g
//   H_t  = o * tanh(C_t)
// The hypergraph is rebuilt from the current pre-activations on every step.
template <typename T>
struct HcCell {
  Conv2d<T> gate_proj;   // 1x1, (C_in + C_h) -> 4*C_h
  HcuUnit<T> hcu;        // over 4*C_h channels
  Conv2d<T> modulation;  // 1x1, 4*C_h -> 4*C_h
  int64_t c_hidden = 0;

  HcCell() = default;
  HcCell(int64_t c_in, int64_t c_hidden_, double tau, Rng& rng)
      : gate_proj(c_in + c_hidden_, 4 * c_hidden_, 1, 1, rng),
        hcu(4 * c_hidden_, tau, rng),
        modulation(4 * c_hidden_, 4 * c_hidden_, 1, 1, rng),
        c_hidden(c_hidden_) {
    // Forget-gate bias starts at +1 so fresh cells retain memory (standard
    // LSTM practice; harmless for the zero-parameter analytic cases, which
    // zero the biases explicitly).
    for (int64_t j = c_hidden_; j < 2 * c_hidden_; ++j) gate_proj.bias.data()[j] += T(1);
  }

  HcCellState<T> step(const Tensor<T>& x_t, const HcCellState<T>& prev) const {
    Tensor<T> joint = gate_proj.forward(concat_channels<T>({x_t, prev.h}));
    Tensor<T> l_h = hcu.forward_map(joint);
    Tensor<T> f_t = add(modulation.forward(l_h), l_h);
    auto gates = chunk_channels(f_t, 4);
    Tensor<T> i = sigmoid(gates[0]);
    Tensor<T> f = sigmoid(gates[1]);
    Tensor<T> o = sigmoid(gates[2]);
    Tensor<T> g = tanh_act(gates[3]);
    Tensor<T> c_t = add(mul(f, prev.c), mul(i, g));
    Tensor<T> h_t = mul(o, tanh_act(c_t));
    return {c_t, h_t};
  }

  HcCellState<T> zero_state(int64_t h, int64_t w) const {
    return {Tensor<T>::zeros({1, c_hidden, h, w}), Tensor<T>::zeros({1, c_hidden, h, w})};
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    gate_proj.collect(prefix + ".gate_proj", reg);
    hcu.collect(prefix + ".hcu", reg);
    modulation.collect(prefix + ".modulation", reg);
  }
};

// Local temporal enhancement: patch-embed every frame once, scan L stacked
// cell layers over time at token resolution (layer k consumes layer k-1's
// hidden states), reconstruct the final top-layer hidden state back to the
// input extent.
template <typename T>
struct Ltem {
  PatchEmbed<T> embed;              // C -> C_h, patch size ps
  std::vector<HcCell<T>> cells;     // L layers
  UpsampleReconstruct<T> reconstruct;  // C_h -> C, factor ps
  int64_t ps = 2;

  Ltem() = default;
  Ltem(int64_t c, int64_t layers, int64_t ps_, double tau, Rng& rng)
      : embed(c, c, ps_, rng), reconstruct(c, c, ps_, rng), ps(ps_) {
    if (layers < 1) throw NumericsError("ltem: layer count must be >= 1");
    for (int64_t l = 0; l < layers; ++l) cells.emplace_back(c, c, tau, rng);
  }

  // [T, C, H, W] -> [1, C, H, W] (keyframe-local context)
  Tensor<T> forward(const Tensor<T>& f_s, bool /*training*/ = true) const {
    const int64_t t_frames = f_s.dim(0);
    Tensor<T> embedded = embed.forward(f_s);  // [T, C_h, h, w]
    const int64_t h = embedded.dim(2), w = embedded.dim(3);

    std::vector<Tensor<T>> layer_inputs;
    layer_inputs.reserve(t_frames);
    for (int64_t t = 0; t < t_frames; ++t) layer_inputs.push_back(slice_batch(embedded, t));

    Tensor<T> top_hidden;
    for (const auto& cell : cells) {
      HcCellState<T> state = cell.zero_state(h, w);
      std::vector<Tensor<T>> hiddens;
      hiddens.reserve(t_frames);
      for (int64_t t = 0; t < t_frames; ++t) {
        state = cell.step(layer_inputs[t], state);
        hiddens.push_back(state.h);
      }
      top_hidden = state.h;
      layer_inputs = std::move(hiddens);
    }
    return reconstruct.forward(top_hidden);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    embed.collect(prefix + ".embed", reg);
    for (size_t l = 0; l < cells.size(); ++l) {
      cells[l].collect(prefix + ".cell" + std::to_string(l), reg);
    }
    reconstruct.collect(prefix + ".reconstruct", reg);
  }
};

}  // namespace hypertea
