#include "h23d/detail/multi_radius_pool.hpp"

#include "h23d/parallel.hpp"

namespace h23d::detail {

MultiRadiusPool::MultiRadiusPool(std::size_t c_voxel, const RoiPoolConfig& cfg,
                                 std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  large_ = GridAggregator(c_voxel, cfg.coarse_channels, "mr.large", rng, cfg.bn_momentum);
  small_ = GridAggregator(c_voxel, cfg.fine_channels, "mr.small", rng, cfg.bn_momentum);
}

Tensor MultiRadiusPool::forward(std::span<const Box3D> rois, const H3DVoxels& voxels,
                                std::uint64_t seed, Mode mode) {
  const VoxelLookup lookup(voxels);
  const std::size_t G = cfg_.fine_grid;
  const auto ql = query_rois(rois, lookup, G, cfg_.coarse_radius, cfg_.max_neighbors, seed, 0);
  const auto qs = query_rois(rois, lookup, G, cfg_.fine_radius, cfg_.max_neighbors, seed, 1);
  stats_ = {};
  for (const auto* qv : {&ql, &qs})
    for (const QueryResult& q : *qv) {
      stats_.probes += q.probes;
      stats_.neighbors += q.neighbors.size();
    }
  const Tensor fl = large_.forward(ql, voxels.features(), mode);
  const Tensor fs = small_.forward(qs, voxels.features(), mode);
  const std::size_t n = G * G * G, cl = cfg_.coarse_channels, cs = cfg_.fine_channels;
  Tensor out({rois.size(), n, cl + cs});
  parallel_for(0, rois.size() * n, [&](std::size_t i) {
    double* dst = out.data().data() + i * (cl + cs);
    auto a = fl.row(i);
    auto b = fs.row(i);
    std::copy(a.begin(), a.end(), dst);
    std::copy(b.begin(), b.end(), dst + cl);
  });
  return out;
}

}  // namespace h23d::detail
