#pragma once

#include <random>
#include <span>

#include "h23d/roi.hpp"

namespace h23d::detail {

// Comparison fixture: conventional multi-scale voxel RoI pooling. Every grid
// point of the fine partition queries at both radii, one aggregator per
// radius, channels [large radius | small radius] so the output width matches
// HvRoiPool.
class MultiRadiusPool {
 public:
  MultiRadiusPool(std::size_t c_voxel, const RoiPoolConfig& cfg, std::mt19937_64& rng);

  Tensor forward(std::span<const Box3D> rois, const H3DVoxels& voxels, std::uint64_t seed,
                 Mode mode);
  const RoiPoolStats& stats() const noexcept { return stats_; }

 private:
  RoiPoolConfig cfg_;
  GridAggregator large_, small_;
  RoiPoolStats stats_;
};

}  // namespace h23d::detail
