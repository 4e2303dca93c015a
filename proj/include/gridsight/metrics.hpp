#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gridsight/grid.hpp"

namespace gridsight {

// 4x4 confusion counts; rows index the ground-truth class, columns the
// prediction.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (int t = 0; t < kNumClasses; ++t) {
      for (int p = 0; p < kNumClasses; ++p) counts[t][p] += o.counts[t][p];
    }
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (const auto& row : counts) {
      for (std::int64_t v : row) n += v;
    }
    return n;
  }
};

// Tallies cells where both maps mark the cell evaluable.
inline ConfusionMatrix confusion(const GridMap& pred, const GridMap& truth) {
  if (!(pred.spec == truth.spec)) throw std::invalid_argument("confusion: grid spec mismatch");
  ConfusionMatrix cm;
  const std::size_t n = pred.classes.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (pred.eval_mask[k] && truth.eval_mask[k]) {
      ++cm.counts[truth.classes[k]][pred.classes[k]];
    }
  }
  return cm;
}

// Per-class recall averaged over classes present in the ground truth.
inline double mean_accuracy(const ConfusionMatrix& cm) {
  double sum = 0;
  int classes = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::int64_t truth_count = 0;
    for (int p = 0; p < kNumClasses; ++p) truth_count += cm.counts[c][p];
    if (truth_count == 0) continue;
    sum += static_cast<double>(cm.counts[c][c]) / static_cast<double>(truth_count);
    ++classes;
  }
  if (classes == 0) throw std::runtime_error("mean_accuracy: empty confusion matrix");
  return sum / classes;
}

// Per-class IoU averaged over classes present in the ground truth.
inline double mean_iou(const ConfusionMatrix& cm) {
  double sum = 0;
  int classes = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::int64_t tp = cm.counts[c][c];
    std::int64_t fn = 0, fp = 0;
    for (int p = 0; p < kNumClasses; ++p) {
      if (p != c) {
        fn += cm.counts[c][p];
        fp += cm.counts[p][c];
      }
    }
    if (tp + fn == 0) continue;  // class absent from the ground truth
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++classes;
  }
  if (classes == 0) throw std::runtime_error("mean_iou: empty confusion matrix");
  return sum / classes;
}

struct SetMetrics {
  double mean_accuracy = 0;
  double mean_iou = 0;
  int samples_used = 0;
  int samples_skipped = 0;  // samples with no evaluable cells
};

// Per-sample metrics averaged arithmetically over the samples.
inline SetMetrics evaluate_set(const std::vector<std::pair<GridMap, GridMap>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_set: empty sample list");
  SetMetrics out;
  double acc_sum = 0, iou_sum = 0;
  for (const auto& [pred, truth] : pairs) {
    ConfusionMatrix cm = confusion(pred, truth);
    if (cm.total() == 0) {
      ++out.samples_skipped;
      continue;
    }
    acc_sum += mean_accuracy(cm);
    iou_sum += mean_iou(cm);
    ++out.samples_used;
  }
  if (out.samples_used == 0) throw std::runtime_error("evaluate_set: no evaluable samples");
  out.mean_accuracy = acc_sum / out.samples_used;
  out.mean_iou = iou_sum / out.samples_used;
  return out;
}

}  // namespace gridsight
