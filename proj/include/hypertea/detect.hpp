#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/ops.hpp"

namespace hypertea {

// Axis-aligned pixel box, corners ordered (x1 < x2, y1 < y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
};

inline double iou(const Box& a, const Box& b) {
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct Detection {
  Box box;
  double score = 0;
};
using DetectionSet = std::vector<Detection>;

// Per-grid-cell training target: positive cells carry the encoded box.
struct CellTarget {
  bool positive = false;
  double tx = 0, ty = 0, tw = 0, th = 0;  // encoded offsets / log scales
  Box box;                                // original pixel box
};

// Box encoding on a stride-s grid: the center lands inside one cell as a
// sigmoid-space fraction, width/height are log ratios to the stride.
struct EncodedBox {
  int64_t gx = 0, gy = 0;
  double tx = 0, ty = 0, tw = 0, th = 0;
};

inline EncodedBox encode_box(const Box& b, int64_t stride, int64_t grid_h, int64_t grid_w) {
  if (b.w() <= 0.0 || b.h() <= 0.0) throw NumericsError("encode_box: degenerate box");
  const double s = static_cast<double>(stride);
  EncodedBox e;
  e.gx = std::clamp<int64_t>(static_cast<int64_t>(std::floor(b.cx() / s)), 0, grid_w - 1);
  e.gy = std::clamp<int64_t>(static_cast<int64_t>(std::floor(b.cy() / s)), 0, grid_h - 1);
  const double kEps = 1e-9;  // keeps the logit finite when the center sits on a cell edge
  double fx = std::clamp(b.cx() / s - static_cast<double>(e.gx), kEps, 1.0 - kEps);
  double fy = std::clamp(b.cy() / s - static_cast<double>(e.gy), kEps, 1.0 - kEps);
  e.tx = std::log(fx / (1.0 - fx));
  e.ty = std::log(fy / (1.0 - fy));
  e.tw = std::log(b.w() / s);
  e.th = std::log(b.h() / s);
  return e;
}

inline Box decode_box(double tx, double ty, double tw, double th, int64_t gx, int64_t gy,
                      int64_t stride) {
  const double s = static_cast<double>(stride);
  auto sigmoid = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  double cx = (static_cast<double>(gx) + sigmoid(tx)) * s;
  double cy = (static_cast<double>(gy) + sigmoid(ty)) * s;
  double w = std::exp(tw) * s;
  double h = std::exp(th) * s;
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// The cell containing each ground-truth center goes positive; when two boxes
// share a cell the larger area wins.
inline std::vector<CellTarget> assign_targets(const std::vector<Box>& boxes, int64_t grid_h,
                                              int64_t grid_w, int64_t stride) {
  std::vector<CellTarget> targets(grid_h * grid_w);
  for (const auto& b : boxes) {
    EncodedBox e = encode_box(b, stride, grid_h, grid_w);
    CellTarget& slot = targets[e.gy * grid_w + e.gx];
    if (slot.positive && slot.box.area() >= b.area()) continue;
    slot.positive = true;
    slot.tx = e.tx;
    slot.ty = e.ty;
    slot.tw = e.tw;
    slot.th = e.th;
    slot.box = b;
  }
  return targets;
}

// Raw per-cell head outputs for one keyframe.
template <typename T>
struct RawPrediction {
  Tensor<T> obj;  // [1, 1, H, W] objectness logits
  Tensor<T> cls;  // [1, 1, H, W] class logits (single target class)
  Tensor<T> reg;  // [1, 4, H, W] tx, ty, tw, th
  int64_t stride = 8;
  int64_t grid_h() const { return obj.dim(2); }
  int64_t grid_w() const { return obj.dim(3); }
};

struct LossWeights {
  double reg = 5.0;
  double cls = 1.0;
  double obj = 1.0;
};

// Anchor-free head: three parallel stacks (2x basic conv block + 1x1
// projection) emitting objectness, class, and box-regression maps.
template <typename T>
struct HeadBranch {
  BasicConvBlock<T> b1, b2;
  Conv2d<T> proj;

  HeadBranch() = default;
  HeadBranch(int64_t c, int64_t c_out, Rng& rng)
      : b1(c, c, 3, rng), b2(c, c, 3, rng), proj(c, c_out, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return proj.forward(b2.forward(b1.forward(x, training), training));
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    b1.collect(prefix + ".b1", reg);
    b2.collect(prefix + ".b2", reg);
    proj.collect(prefix + ".proj", reg);
  }
};

template <typename T>
struct DetectHead {
  HeadBranch<T> obj_branch, cls_branch, reg_branch;
  int64_t stride = 8;

  DetectHead() = default;
  DetectHead(int64_t c, int64_t stride_, Rng& rng)
      : obj_branch(c, 1, rng), cls_branch(c, 1, rng), reg_branch(c, 4, rng), stride(stride_) {
    // Start objectness near a 1% positive prior so the background sea does
    // not dominate the first gradient steps.
    const double prior = 0.01;
    obj_branch.proj.bias.data()[0] = static_cast<T>(-std::log((1.0 - prior) / prior));
  }

  RawPrediction<T> forward(const Tensor<T>& x, bool training = true) {
    return {obj_branch.forward(x, training), cls_branch.forward(x, training),
            reg_branch.forward(x, training), stride};
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    obj_branch.collect(prefix + ".obj", reg);
    cls_branch.collect(prefix + ".cls", reg);
    reg_branch.collect(prefix + ".reg", reg);
  }
};

template <typename T>
struct DetectionLoss {
  Tensor<T> total, reg, cls, obj;
};

// total = w.reg * mean(1 - IoU) + w.cls * mean BCE(positives)
//       + w.obj * mean BCE(all cells).
template <typename T>
DetectionLoss<T> compute_loss(const RawPrediction<T>& pred, const std::vector<CellTarget>& targets,
                              const LossWeights& w) {
  const int64_t gh = pred.grid_h(), gw = pred.grid_w();
  if (static_cast<int64_t>(targets.size()) != gh * gw)
    throw NumericsError("compute_loss: target grid mismatch");

  std::vector<T> obj_target(gh * gw, T(0));
  std::vector<std::pair<int64_t, int64_t>> cells;   // (cy, cx) of positives
  std::vector<const CellTarget*> pos;
  for (int64_t i = 0; i < gh * gw; ++i) {
    if (!targets[i].positive) continue;
    obj_target[i] = T(1);
    cells.emplace_back(i / gw, i % gw);
    pos.push_back(&targets[i]);
  }

  Tensor<T> l_obj = mean_all(bce_with_logits(pred.obj, obj_target));
  Tensor<T> l_cls = Tensor<T>::scalar(T(0));
  Tensor<T> l_reg = Tensor<T>::scalar(T(0));

  if (!pos.empty()) {
    const int64_t p = static_cast<int64_t>(pos.size());
    Tensor<T> cls_at = gather_cells(pred.cls, cells);  // [P, 1]
    l_cls = mean_all(bce_with_logits(cls_at, std::vector<T>(p, T(1))));

    Tensor<T> reg_at = gather_cells(pred.reg, cells);  // [P, 4]
    std::vector<T> gxc(p), gyc(p), gx1(p), gy1(p), gx2(p), gy2(p), garea(p);
    for (int64_t i = 0; i < p; ++i) {
      gxc[i] = static_cast<T>(cells[i].second);
      gyc[i] = static_cast<T>(cells[i].first);
      gx1[i] = static_cast<T>(pos[i]->box.x1);
      gy1[i] = static_cast<T>(pos[i]->box.y1);
      gx2[i] = static_cast<T>(pos[i]->box.x2);
      gy2[i] = static_cast<T>(pos[i]->box.y2);
      garea[i] = static_cast<T>(pos[i]->box.area());
    }
    const T s = static_cast<T>(pred.stride);
    Tensor<T> cx = mul_scalar(add(sigmoid(column(reg_at, 0)), Tensor<T>::from({p}, std::move(gxc))), s);
    Tensor<T> cy = mul_scalar(add(sigmoid(column(reg_at, 1)), Tensor<T>::from({p}, std::move(gyc))), s);
    Tensor<T> bw = mul_scalar(exp_op(column(reg_at, 2)), s);
    Tensor<T> bh = mul_scalar(exp_op(column(reg_at, 3)), s);
    Tensor<T> x1 = sub(cx, mul_scalar(bw, T(0.5)));
    Tensor<T> x2 = add(cx, mul_scalar(bw, T(0.5)));
    Tensor<T> y1 = sub(cy, mul_scalar(bh, T(0.5)));
    Tensor<T> y2 = add(cy, mul_scalar(bh, T(0.5)));

    Tensor<T> tx1 = Tensor<T>::from({p}, std::move(gx1));
    Tensor<T> ty1 = Tensor<T>::from({p}, std::move(gy1));
    Tensor<T> tx2 = Tensor<T>::from({p}, std::move(gx2));
    Tensor<T> ty2 = Tensor<T>::from({p}, std::move(gy2));
    Tensor<T> iw = relu(sub(minimum(x2, tx2), maximum(x1, tx1)));
    Tensor<T> ih = relu(sub(minimum(y2, ty2), maximum(y1, ty1)));
    Tensor<T> inter = mul(iw, ih);
    Tensor<T> uni = sub(add(mul(bw, bh), Tensor<T>::from({p}, std::move(garea))), inter);
    l_reg = mean_all(sub_from_scalar(T(1), div(inter, uni)));
  }

  Tensor<T> total = add(add(mul_scalar(l_reg, static_cast<T>(w.reg)),
                            mul_scalar(l_cls, static_cast<T>(w.cls))),
                        mul_scalar(l_obj, static_cast<T>(w.obj)));
  return {total, l_reg, l_cls, l_obj};
}

// score = sigmoid(obj) * sigmoid(cls); cells at or above the confidence
// threshold decode to pixel boxes, returned in descending score order
// (stable: earlier cells first on ties).
template <typename T>
DetectionSet decode(const RawPrediction<T>& pred, double conf_thresh) {
  const int64_t gh = pred.grid_h(), gw = pred.grid_w();
  auto sigmoid = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  DetectionSet dets;
  for (int64_t gy = 0; gy < gh; ++gy) {
    for (int64_t gx = 0; gx < gw; ++gx) {
      const int64_t i = gy * gw + gx;
      double score = sigmoid(static_cast<double>(pred.obj.data()[i])) *
                     sigmoid(static_cast<double>(pred.cls.data()[i]));
      if (score < conf_thresh) continue;
      const int64_t hw = gh * gw;
      Box b = decode_box(static_cast<double>(pred.reg.data()[0 * hw + i]),
                         static_cast<double>(pred.reg.data()[1 * hw + i]),
                         static_cast<double>(pred.reg.data()[2 * hw + i]),
                         static_cast<double>(pred.reg.data()[3 * hw + i]), gx, gy, pred.stride);
      dets.push_back({b, score});
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

// Greedy NMS: keep in descending score order, suppress boxes overlapping a
// kept box beyond the threshold. Equal scores keep their input order.
inline DetectionSet nms(const DetectionSet& dets, double iou_thresh) {
  DetectionSet sorted = dets;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  DetectionSet kept;
  for (const auto& d : sorted) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace hypertea
