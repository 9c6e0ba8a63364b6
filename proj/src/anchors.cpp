#include "h23d/anchors.hpp"

#include "h23d/error.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

std::vector<Box3D> gen_anchors(const GridSpec& grid, std::span<const AnchorSize> sizes,
                               std::span<const double> yaws) {
  grid.validate();
  if (sizes.empty() || yaws.empty())
    throw ConfigError("gen_anchors: need at least one size and one yaw");
  std::vector<Box3D> out;
  out.reserve(grid.cell_count() * sizes.size() * yaws.size());
  for (std::int64_t r = 0; r < grid.rows(); ++r) {
    for (std::int64_t c = 0; c < grid.cols(); ++c) {
      for (const AnchorSize& s : sizes) {
        for (double yaw : yaws) {
          Box3D b;
          b.x = grid.first.cell_center(r);
          b.y = grid.second.cell_center(c);
          b.z = s.z;
          b.l = s.l;
          b.w = s.w;
          b.h = s.h;
          b.yaw = normalize_angle(yaw);
          b.label = s.label;
          b.validate();
          out.push_back(b);
        }
      }
    }
  }
  return out;
}

TargetAssignment assign_rpn_targets(std::span<const Box3D> anchors,
                                    std::span<const Box3D> gts, double match_thr,
                                    double unmatch_thr) {
  if (!(match_thr > unmatch_thr))
    throw ConfigError("assign_rpn_targets: match threshold must exceed unmatch threshold");
  const std::size_t na = anchors.size(), ng = gts.size();
  TargetAssignment ta;
  ta.labels.assign(na, 0);
  ta.targets.assign(na, BoxResidual{});
  ta.matched_gt.assign(na, -1);
  if (ng == 0) return ta;

  std::vector<double> iou(na * ng, 0.0);
  parallel_for(0, na, [&](std::size_t a) {
    for (std::size_t g = 0; g < ng; ++g) iou[a * ng + g] = bev_rotated_iou(anchors[a], gts[g]);
  }, 256);

  for (std::size_t a = 0; a < na; ++a) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < ng; ++g)
      if (iou[a * ng + g] > best) {
        best = iou[a * ng + g];
        arg = static_cast<int>(g);
      }
    if (best >= match_thr) {
      ta.labels[a] = gts[arg].label;
      ta.matched_gt[a] = arg;
    } else if (best >= unmatch_thr) {
      ta.labels[a] = -1;
    }
  }
  for (std::size_t g = 0; g < ng; ++g) {
    double best = 0.0;
    std::size_t arg = na;
    for (std::size_t a = 0; a < na; ++a)
      if (iou[a * ng + g] > best) {
        best = iou[a * ng + g];
        arg = a;
      }
    if (arg == na) continue;
    ta.labels[arg] = gts[g].label;
    ta.matched_gt[arg] = static_cast<int>(g);
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (ta.labels[a] < 1) continue;
    ta.targets[a] = encode_box(gts[ta.matched_gt[a]], anchors[a]);
    ++ta.num_foreground;
  }
  return ta;
}

}  // namespace h23d
