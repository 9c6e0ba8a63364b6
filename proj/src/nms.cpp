#include "h23d/nms.hpp"

#include <algorithm>
#include <numeric>

#include "h23d/error.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

namespace {
void check_inputs(std::span<const Box3D> boxes, std::span<const double> scores) {
  if (boxes.size() != scores.size())
    throw ShapeError("nms: boxes and scores differ in length");
}
}  // namespace

std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> classic_nms(std::span<const Box3D> boxes,
                                     std::span<const double> scores, double thr) {
  check_inputs(boxes, scores);
  std::vector<std::size_t> kept;
  for (std::size_t i : score_order(scores)) {
    bool keep = true;
    for (std::size_t k : kept)
      if (bev_rotated_iou(boxes[i], boxes[k]) > thr) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(i);
  }
  return kept;
}

std::vector<std::size_t> fast_nms(std::span<const Box3D> boxes,
                                  std::span<const double> scores, double thr,
                                  std::size_t max_out) {
  check_inputs(boxes, scores);
  const std::vector<std::size_t> order = score_order(scores);
  const std::size_t n = order.size();
  std::vector<unsigned char> suppressed(n, 0);
  parallel_for(0, n, [&](std::size_t r) {
    const Box3D& b = boxes[order[r]];
    for (std::size_t q = 0; q < r; ++q)
      if (bev_rotated_iou(boxes[order[q]], b) > thr) {
        suppressed[r] = 1;
        break;
      }
  }, 64);
  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < n && kept.size() < max_out; ++r)
    if (!suppressed[r]) kept.push_back(order[r]);
  return kept;
}

}  // namespace h23d
