#pragma once

#include "gridsight/camera.hpp"
#include "gridsight/class_mapping.hpp"
#include "gridsight/gt_pipeline.hpp"
#include "gridsight/grid.hpp"
#include "gridsight/image.hpp"

namespace gridsight {

// Monocular baseline: every pixel labeled as a ground class is assumed to
// lie on the z = 0 plane and is back-projected through the calibration only.
// Voting, tie-break, and empty-cell semantics match project_labeled_cloud.
inline GridMap flatplane_map(const ImageU8& labels, const CameraRig& rig, const GridSpec& spec,
                             const ClassMapping& mapping) {
  spec.validate();
  mapping.validate();
  const Intrinsics& k = rig.intrinsics;
  if (labels.width != k.width || labels.height != k.height || labels.channels != 1) {
    throw std::invalid_argument("flatplane_map: label dimensions do not match rig");
  }

  std::vector<CellVote> votes(static_cast<std::size_t>(spec.rows) * spec.cols);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const std::uint8_t label = labels.at(v, u);
      const std::uint8_t cls = mapping.is_ignored(label) ? ClassMapping::kNonGround
                                                         : mapping.grid_class(label);
      if (cls < 1 || cls > 3) continue;  // only ground-like pixels contribute
      auto ground = ray_ground_intersection(u, v, rig);
      if (!ground) continue;
      if (auto cell = world_to_cell(spec, ground->first, ground->second)) {
        votes[static_cast<std::size_t>(cell->first) * spec.cols + cell->second].add(cls);
      }
    }
  }
  return detail::vote_to_map(votes, spec, fov_mask(rig, spec));
}

}  // namespace gridsight
