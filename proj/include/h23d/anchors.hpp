#pragma once

#include <span>
#include <vector>

#include "h23d/boxes.hpp"
#include "h23d/geometry.hpp"

namespace h23d {

struct AnchorSize {
  double l = 3.9, w = 1.6, h = 1.56;
  double z = -1.78;  // centre height
  int label = 1;
};

// One anchor per (location, size, yaw), ordered location-major (row, col),
// then size, then yaw. Centres sit at the BEV cell centres of `grid`.
std::vector<Box3D> gen_anchors(const GridSpec& grid, std::span<const AnchorSize> sizes,
                               std::span<const double> yaws);

struct TargetAssignment {
  std::vector<int> labels;  // -1 ignore, 0 background, >= 1 class id
  std::vector<BoxResidual> targets;  // meaningful where labels >= 1
  std::vector<int> matched_gt;       // -1 when unmatched
  std::size_t num_foreground = 0;    // N_a
};

// BEV rotated IoU matching. Anchors with best IoU >= match_thr are
// foreground, < unmatch_thr background, otherwise ignored; every gt's best
// anchor (if it overlaps at all) is forced to foreground.
TargetAssignment assign_rpn_targets(std::span<const Box3D> anchors,
                                    std::span<const Box3D> gts, double match_thr,
                                    double unmatch_thr);

}  // namespace h23d
