#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gridsight/camera.hpp"
#include "gridsight/class_mapping.hpp"
#include "gridsight/grid.hpp"
#include "gridsight/image.hpp"

namespace gridsight {

struct LabeledPoint {
  double x = 0, y = 0;
  std::uint8_t cls = kClassNonFree;
};

// Per-cell tallies for the majority vote.
struct CellVote {
  std::array<std::uint32_t, kNumClasses> counts{};

  void add(std::uint8_t cls) { ++counts[cls]; }

  // Argmax with ties broken by the fixed priority 0 > 1 > 2 > 3; a cell with
  // no tallies stays non-free-space.
  std::uint8_t winner() const {
    std::uint8_t best = kClassNonFree;
    std::uint32_t best_count = counts[0];
    for (int c = 1; c < kNumClasses; ++c) {
      if (counts[c] > best_count) {
        best = static_cast<std::uint8_t>(c);
        best_count = counts[c];
      }
    }
    return best;
  }
};

namespace detail {

inline GridMap vote_to_map(const std::vector<CellVote>& votes, const GridSpec& spec,
                           std::vector<std::uint8_t> eval_mask) {
  GridMap map(spec);
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      map.cls(i, j) = votes[static_cast<std::size_t>(i) * spec.cols + j].winner();
    }
  }
  if (!eval_mask.empty()) {
    if (eval_mask.size() != map.eval_mask.size()) {
      throw std::invalid_argument("grid_from_pointlist: mask dimensions do not match spec");
    }
    map.eval_mask = std::move(eval_mask);
  }
  return map;
}

}  // namespace detail

// Majority vote of pre-projected ground-plane points. Exposed for tests and
// the synthetic oracle; the image pipelines below share its semantics.
inline GridMap grid_from_pointlist(std::span<const LabeledPoint> points, const GridSpec& spec,
                                   std::vector<std::uint8_t> eval_mask = {}) {
  spec.validate();
  std::vector<CellVote> votes(static_cast<std::size_t>(spec.rows) * spec.cols);
  for (const LabeledPoint& p : points) {
    if (auto cell = world_to_cell(spec, p.x, p.y)) {
      votes[static_cast<std::size_t>(cell->first) * spec.cols + cell->second].add(p.cls);
    }
  }
  return detail::vote_to_map(votes, spec, std::move(eval_mask));
}

// Weak ground truth: labeled disparity -> 3-D points -> top-view majority
// vote. Doubles as the binocular baseline when fed predicted labels.
// Disparity <= 0 is invalid; points above ceiling_m (when set) are dropped.
inline GridMap project_labeled_cloud(const ImageF32& disparity, const ImageU8& labels,
                                     const CameraRig& rig, const GridSpec& spec,
                                     const ClassMapping& mapping,
                                     std::optional<double> ceiling_m = std::nullopt) {
  spec.validate();
  mapping.validate();
  const Intrinsics& k = rig.intrinsics;
  if (disparity.width != k.width || disparity.height != k.height || disparity.channels != 1 ||
      labels.width != k.width || labels.height != k.height || labels.channels != 1) {
    throw std::invalid_argument("project_labeled_cloud: image dimensions do not match rig");
  }

  std::vector<CellVote> votes(static_cast<std::size_t>(spec.rows) * spec.cols);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const float d = disparity.at(v, u);
      if (!(d > 0.0f)) continue;
      const std::uint8_t label = labels.at(v, u);
      if (mapping.is_ignored(label)) continue;
      const double depth = k.fx * rig.baseline_m / d;
      const Vec3 p = backproject(u, v, depth, rig);
      if (ceiling_m && p.z > *ceiling_m) continue;
      if (auto cell = world_to_cell(spec, p.x, p.y)) {
        votes[static_cast<std::size_t>(cell->first) * spec.cols + cell->second].add(
            mapping.grid_class(label));
      }
    }
  }
  return detail::vote_to_map(votes, spec, fov_mask(rig, spec));
}

}  // namespace gridsight
