#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "h23d/boxes.hpp"
#include "h23d/fusion.hpp"
#include "h23d/layers.hpp"

namespace h23d {

using Vec3 = std::array<double, 3>;

// Centres of the G x G x G division of the box in its local frame, mapped to
// the world frame. Index (a, b, c) along (l, w, h) is stored at (a*G + b)*G + c.
std::vector<Vec3> gen_grid_points(const Box3D& box, std::size_t G);

// Occupied-voxel lookup by integer triple.
class VoxelLookup {
 public:
  explicit VoxelLookup(const H3DVoxels& voxels);
  std::optional<std::size_t> find(const std::array<std::int64_t, 3>& ijk) const;
  const H3DVoxels& voxels() const noexcept { return *voxels_; }

 private:
  const H3DVoxels* voxels_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

struct Neighbor {
  std::size_t voxel = 0;
  Vec3 offset{};  // voxel centre minus grid point, metres
};

struct QueryResult {
  std::vector<Neighbor> neighbors;  // ascending voxel index
  std::size_t candidates = 0;       // in-radius voxels before sampling
  std::size_t probes = 0;           // distance evaluations performed
};

// Manhattan ball size in voxel units: number of integer offsets with
// |dx| + |dy| + |dz| <= r.
std::size_t manhattan_ball_size(int r);

// k of n indices drawn uniformly without replacement from a generator
// seeded with `seed`, returned ascending. Returns 0..n-1 when n <= k.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

// Per grid point sampling seed.
std::uint64_t query_seed(std::uint64_t seed, std::uint64_t roi, std::uint64_t level,
                         std::uint64_t point);

// Voxels within Manhattan index distance `radius` of the grid point's
// containing cell. Either the radius ball is probed in the hash table or the
// occupied voxels are scanned, whichever is fewer evaluations.
QueryResult voxel_query(const Vec3& grid_point, const VoxelLookup& lookup, int radius,
                        std::size_t max_k, std::uint64_t seed);

// Shared (feature || offset) -> FC+BN+ReLU, then channel max over each
// query's neighbours. An empty neighbourhood yields zeros.
class GridAggregator {
 public:
  GridAggregator() = default;
  GridAggregator(std::size_t c_voxel, std::size_t c_out, const std::string& name,
                 std::mt19937_64& rng, double bn_momentum = 0.1);

  // {queries, c_out}
  Tensor forward(std::span<const QueryResult> queries, const Tensor& voxel_features,
                 Mode mode);
  // Gradient w.r.t. the voxel features, {M, c_voxel}.
  Tensor backward(const Tensor& grad);

  void collect_params(std::vector<Param*>& out) { mlp_.collect_params(out); }
  void collect_buffers(std::vector<Param*>& out) { mlp_.collect_buffers(out); }
  std::size_t out_channels() const noexcept { return c_out_; }

 private:
  std::size_t c_voxel_ = 0, c_out_ = 0;
  Sequential mlp_;
  std::size_t n_voxels_ = 0;
  std::size_t n_queries_ = 0;
  std::vector<std::size_t> entry_voxel_;
  std::vector<std::size_t> argmax_;  // (query, channel) -> entry, npos if empty
  bool ran_mlp_ = false;
};

Tensor aggregate_grid(const QueryResult& query, const Tensor& voxel_features,
                      GridAggregator& agg, Mode mode);

struct RoiPoolConfig {
  std::size_t coarse_grid = 3;
  std::size_t fine_grid = 6;
  int coarse_radius = 6;
  int fine_radius = 3;
  std::size_t max_neighbors = 16;
  std::size_t coarse_channels = 32;
  std::size_t fine_channels = 32;
  double bn_momentum = 0.1;

  void validate() const;  // throws ConfigError
};

struct RoiPoolStats {
  std::size_t probes = 0;
  std::size_t neighbors = 0;
};

// Coarse pass and fine pass; the coarse grid is replicated to the fine
// resolution and concatenated channel-wise: cell f holds
// [coarse(parent(f)) | fine(f)].
class HvRoiPool {
 public:
  HvRoiPool() = default;
  HvRoiPool(std::size_t c_voxel, const RoiPoolConfig& cfg, std::mt19937_64& rng);

  // {R, G_f^3, C_c + C_f}
  Tensor forward(std::span<const Box3D> rois, const H3DVoxels& voxels, std::uint64_t seed,
                 Mode mode);
  Tensor backward(const Tensor& grad);  // {M, c_voxel}

  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);
  const RoiPoolStats& stats() const noexcept { return stats_; }
  const RoiPoolConfig& config() const noexcept { return cfg_; }
  std::size_t cells() const noexcept { return cfg_.fine_grid * cfg_.fine_grid * cfg_.fine_grid; }
  std::size_t out_channels() const noexcept { return cfg_.coarse_channels + cfg_.fine_channels; }
  // Coarse cell feeding fine cell f.
  std::size_t parent_cell(std::size_t f) const;

 private:
  RoiPoolConfig cfg_;
  GridAggregator coarse_, fine_;
  std::size_t n_rois_ = 0;
  RoiPoolStats stats_;
};

// Queries for every grid point of every RoI at one partition level, in
// (roi, point) order.
std::vector<QueryResult> query_rois(std::span<const Box3D> rois, const VoxelLookup& lookup,
                                    std::size_t G, int radius, std::size_t max_k,
                                    std::uint64_t seed, std::uint64_t level);

struct HeadOutput {
  Tensor conf;  // {R, 1}
  Tensor reg;   // {R, 7}
};

// Two FC+BN+ReLU trunk layers, then confidence and residual branches.
class DetectHead {
 public:
  DetectHead() = default;
  DetectHead(std::size_t in_width, std::size_t h1, std::size_t h2, std::mt19937_64& rng,
             double bn_momentum = 0.1);

  HeadOutput forward(const Tensor& roi_features, Mode mode);
  Tensor backward(const Tensor& grad_conf, const Tensor& grad_reg);
  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out) { trunk_.collect_buffers(out); }
  std::size_t in_width() const noexcept { return in_width_; }

 private:
  std::size_t in_width_ = 0;
  Sequential trunk_;
  Layer conf_;
  Layer reg_;
};

}  // namespace h23d
