#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "h23d/boxes.hpp"

namespace h23d {

// Indices sorted by descending score; equal scores keep index order.
std::vector<std::size_t> score_order(std::span<const double> scores);

// Greedy suppression by BEV rotated IoU > thr against any kept box.
// Returns kept indices in descending-score order.
std::vector<std::size_t> classic_nms(std::span<const Box3D> boxes,
                                     std::span<const double> scores, double thr);

// A box is dropped when any higher-scoring box, kept or not, overlaps it by
// more than thr. At most max_out survivors, highest scores first.
std::vector<std::size_t> fast_nms(std::span<const Box3D> boxes,
                                  std::span<const double> scores, double thr,
                                  std::size_t max_out);

}  // namespace h23d
