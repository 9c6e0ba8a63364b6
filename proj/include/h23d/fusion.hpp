#pragma once

#include <array>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "h23d/geometry.hpp"
#include "h23d/layers.hpp"
#include "h23d/scatter.hpp"

namespace h23d {

// Per-point rows, all aligned to the same point ordering.
struct MultiViewPointFeatures {
  Tensor f_raw;  // {N, C_r}
  Tensor f_pv;   // {N, C_p}
  Tensor f_bev;  // {N, C_b}
  Tensor f_bev_input;  // {N, C}
  Tensor f_h3d;  // {N, C_h}
};

// Two FC+BN+ReLU layers lifting the augmented input to C_raw.
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(std::size_t in_width, std::size_t hidden, std::size_t out_width,
               std::mt19937_64& rng, double bn_momentum = 0.1);

  Tensor forward(const Tensor& x, Mode mode) { return net_.forward(x, mode); }
  Tensor backward(const Tensor& g) { return net_.backward(g); }
  void collect_params(std::vector<Param*>& out) { net_.collect_params(out); }
  void collect_buffers(std::vector<Param*>& out) { net_.collect_buffers(out); }

 private:
  Sequential net_;
};

// f' = ReLU(BN(FC([f_raw, f_pv]))).
class BevInputEncoder {
 public:
  BevInputEncoder() = default;
  BevInputEncoder(std::size_t c_raw, std::size_t c_pv, std::size_t c_out,
                  std::mt19937_64& rng, double bn_momentum = 0.1);

  Tensor forward(const Tensor& f_raw, const Tensor& f_pv, Mode mode);
  std::pair<Tensor, Tensor> backward(const Tensor& g);  // {d f_raw, d f_pv}
  void collect_params(std::vector<Param*>& out) { net_.collect_params(out); }
  void collect_buffers(std::vector<Param*>& out) { net_.collect_buffers(out); }
  std::size_t out_width() const noexcept { return c_out_; }

 private:
  std::size_t c_raw_ = 0, c_pv_ = 0, c_out_ = 0;
  Sequential net_;
};

// Cross-view channel gating:
//   gate_pv  = Sigmoid(BN(FC(f_bev)))   gate_bev = Sigmoid(BN(FC(f_pv)))
//   f_h3d    = ReLU(BN(FC([f_pv * gate_pv, f_bev * gate_bev])))
class Bgmvf {
 public:
  Bgmvf() = default;
  Bgmvf(std::size_t c_pv, std::size_t c_bev, std::size_t c_h, std::mt19937_64& rng,
        double bn_momentum = 0.1);

  Tensor forward(const Tensor& f_pv, const Tensor& f_bev, Mode mode);
  std::pair<Tensor, Tensor> backward(const Tensor& g);  // {d f_pv, d f_bev}
  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);

  // Gates from the latest forward.
  const Tensor& gate_pv() const noexcept { return gate_pv_; }
  const Tensor& gate_bev() const noexcept { return gate_bev_; }
  Sequential& gate_pv_net() noexcept { return gate_pv_net_; }
  Sequential& gate_bev_net() noexcept { return gate_bev_net_; }
  std::size_t out_width() const noexcept { return c_h_; }

 private:
  std::size_t c_pv_ = 0, c_bev_ = 0, c_h_ = 0;
  Sequential gate_pv_net_, gate_bev_net_, proj_;
  Tensor f_pv_, f_bev_, gate_pv_, gate_bev_;
};

// 3D hybrid grid: x and y from the BEV grid, z from the PV height axis.
struct H3DGrid {
  AxisSpec x, y, z;

  static H3DGrid from_views(const GridSpec& bev, const GridSpec& pv);
  std::array<std::int64_t, 3> dims() const { return {x.cells(), y.cells(), z.cells()}; }
  std::int64_t cell_count() const;
  std::int64_t linear_id(const std::array<std::int64_t, 3>& ijk) const;
  std::array<std::int64_t, 3> triple(std::int64_t id) const;
  std::array<double, 3> center(const std::array<std::int64_t, 3>& ijk) const;
  // Containing cell of a metric point; may lie outside the grid.
  std::array<std::int64_t, 3> cell_of(const std::array<double, 3>& p) const;
  bool contains(const std::array<std::int64_t, 3>& ijk) const;
};

struct H3DVoxels {
  H3DGrid grid;
  std::vector<std::array<std::int64_t, 3>> triples;  // sorted by linear id
  std::vector<std::array<double, 3>> centers;        // metres
  SparseGrid sparse;  // features {M, C_h}

  std::size_t size() const noexcept { return triples.size(); }
  const Tensor& features() const noexcept { return sparse.features; }
};

// Scatter-max of f_h3d over the triples (BEV i, BEV j, PV k).
H3DVoxels h3d_voxelize(const Tensor& f_h3d, std::span<const ProjectedIndex> bev,
                       std::span<const ProjectedIndex> pv, const H3DGrid& grid);

}  // namespace h23d
