#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hypertea/detect.hpp"

namespace hypertea {

struct MatchResult {
  int64_t tp = 0, fp = 0, fn = 0;
  std::vector<int64_t> det_match;  // per detection: matched gt index or -1
};

// Greedy matching at a fixed IoU floor: detections (already score-descending)
// claim the highest-IoU unmatched ground truth.
inline MatchResult match(const DetectionSet& dets, const std::vector<Box>& gts,
                         double iou_min = 0.5) {
  MatchResult m;
  m.det_match.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best = -1.0;
    int64_t best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      double v = iou(dets[d].box, gts[g]);
      if (v >= iou_min && v > best) {
        best = v;
        best_g = static_cast<int64_t>(g);
      }
    }
    if (best_g >= 0) {
      taken[best_g] = true;
      m.det_match[d] = best_g;
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  m.fn = static_cast<int64_t>(gts.size()) - m.tp;
  return m;
}

struct Prf1 {
  double precision = 0, recall = 0, f1 = 0;
};

// Each ratio defined as 0 when its denominator is 0.
inline Prf1 prf1(const MatchResult& m) {
  Prf1 r;
  if (m.tp + m.fp > 0) r.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) r.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (r.precision + r.recall > 0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

// One scored detection tied to its frame, for cross-frame ranking sweeps.
struct RankedDetection {
  int64_t frame = 0;
  Box box;
  double score = 0;
};

struct SweepPoint {
  double score = 0;   // threshold at which this prefix ends
  double precision = 0;
  double recall = 0;
};

namespace detail_eval {

// Global descending-score sweep; every prefix yields one (precision, recall)
// point. TP/FP assignment is greedy per frame in rank order.
inline std::vector<SweepPoint> sweep(std::vector<RankedDetection> dets,
                                     const std::vector<std::vector<Box>>& gts_per_frame,
                                     double iou_min) {
  std::stable_sort(dets.begin(), dets.end(), [](const RankedDetection& a, const RankedDetection& b) {
    return a.score > b.score;
  });
  int64_t total_gt = 0;
  for (const auto& g : gts_per_frame) total_gt += static_cast<int64_t>(g.size());

  std::vector<std::vector<bool>> taken(gts_per_frame.size());
  for (size_t f = 0; f < gts_per_frame.size(); ++f) taken[f].assign(gts_per_frame[f].size(), false);

  std::vector<SweepPoint> points;
  points.reserve(dets.size());
  int64_t tp = 0, fp = 0;
  for (const auto& d : dets) {
    const auto& gts = gts_per_frame[d.frame];
    double best = 0.0;
    int64_t best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[d.frame][g]) continue;
      double v = iou(d.box, gts[g]);
      if (v >= iou_min && v > best) {
        best = v;
        best_g = static_cast<int64_t>(g);
      }
    }
    if (best_g >= 0) {
      taken[d.frame][best_g] = true;
      ++tp;
    } else {
      ++fp;
    }
    SweepPoint p;
    p.score = d.score;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
    points.push_back(p);
  }
  return points;
}

}  // namespace detail_eval

// Average precision with all-points interpolation: the precision envelope
// (monotone non-increasing from the right) integrated over recall. Single
// class, so this is also the mAP at the chosen IoU.
inline double average_precision(const std::vector<RankedDetection>& dets,
                                const std::vector<std::vector<Box>>& gts_per_frame,
                                double iou_min = 0.5) {
  auto points = detail_eval::sweep(dets, gts_per_frame, iou_min);
  if (points.empty()) return 0.0;
  const size_t n = points.size();
  std::vector<double> prec(n);
  for (size_t i = 0; i < n; ++i) prec[i] = points[i].precision;
  for (size_t i = n - 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ap += (points[i].recall - prev_recall) * prec[i];
    prev_recall = points[i].recall;
  }
  return ap;
}

// PR rows at each distinct score threshold (descending). Rows inherit the
// sweep's counting, so recall is monotone down the list.
inline std::vector<SweepPoint> pr_curve(const std::vector<RankedDetection>& dets,
                                        const std::vector<std::vector<Box>>& gts_per_frame,
                                        double iou_min = 0.5) {
  auto points = detail_eval::sweep(dets, gts_per_frame, iou_min);
  std::vector<SweepPoint> rows;
  for (size_t i = 0; i < points.size(); ++i) {
    if (i + 1 < points.size() && points[i + 1].score == points[i].score) continue;
    rows.push_back(points[i]);  // last prefix point of each distinct score
  }
  return rows;
}

inline void write_pr_curve_csv(const std::string& path, const std::vector<SweepPoint>& rows) {
  std::ofstream out(path);
  if (!out) throw NumericsError("write_pr_curve_csv: cannot open " + path);
  out << "threshold,precision,recall\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", r.score, r.precision, r.recall);
    out << buf;
  }
}

// Mean per-pixel squared difference between consecutive frames, in the 0-255
// storage scale. A sequence complexity proxy.
template <typename T>
double sequence_mse(const std::vector<std::vector<T>>& frames) {
  if (frames.size() < 2) throw NumericsError("sequence_mse: need at least 2 frames");
  const size_t px = frames[0].size();
  double total = 0.0;
  for (size_t t = 1; t < frames.size(); ++t) {
    if (frames[t].size() != px) throw NumericsError("sequence_mse: frame size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < px; ++i) {
      double d = static_cast<double>(frames[t][i]) - static_cast<double>(frames[t - 1][i]);
      acc += d * d;
    }
    total += acc / static_cast<double>(px);
  }
  return total / static_cast<double>(frames.size() - 1);
}

}  // namespace hypertea
