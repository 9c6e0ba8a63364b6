#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "h23d/geometry.hpp"
#include "h23d/tensor.hpp"

namespace h23d {

// Result of a unique-scatter max reduction.
struct SparseGrid {
  std::vector<std::int64_t> cell_ids;   // strictly increasing
  Tensor features;                      // {cells, C}
  std::vector<std::size_t> point_cell;  // point -> row in cell_ids
  std::vector<std::size_t> argmax;      // (cell, channel) -> point id
  std::int64_t n_cells = 0;             // size of the id space

  std::size_t size() const noexcept { return cell_ids.size(); }
  std::size_t channels() const { return features.dim(1); }
  std::size_t point_count() const noexcept { return point_cell.size(); }
};

// Per unique cell and channel, the max over member points. Ties go to the
// lowest point index. Throws OutOfRangeError for ids outside [0, n_cells).
SparseGrid scatter_max(const Tensor& point_features,
                       std::span<const std::int64_t> cell_ids,
                       std::int64_t n_cells);

// Routes each (cell, channel) gradient to its recorded argmax point.
Tensor scatter_max_backward(const Tensor& grad_cells, const SparseGrid& sparse);

// Channel-first dense map {C, rows, cols} with zero fill.
struct DenseMap {
  Tensor values;
  std::vector<std::uint8_t> occupied;  // rows * cols

  std::size_t rows() const { return values.dim(1); }
  std::size_t cols() const { return values.dim(2); }
  std::size_t occupied_count() const;
};

DenseMap densify(const SparseGrid& sparse, std::size_t rows, std::size_t cols);
DenseMap densify(const SparseGrid& sparse, const GridSpec& grid);
// Gradient of densify w.r.t. the sparse cell features.
Tensor densify_backward(const Tensor& grad_map, const SparseGrid& sparse);

using MapCoord = std::array<double, 2>;  // continuous (row, col)

// Bilinear sample of a {C, H, W} map at continuous grid coordinates. Cell
// (r, c) holds its value at (r + 0.5, c + 0.5); samples beyond the outermost
// centres reuse the edge cells. Coordinates must lie in [0, H) x [0, W).
Tensor bilinear_gather(const Tensor& map, std::span<const MapCoord> coords);
Tensor bilinear_gather_backward(const Tensor& grad_points,
                                std::span<const MapCoord> coords,
                                const Shape& map_shape);

struct BilinearTap {
  std::array<std::size_t, 4> cell{};  // flattened row * W + col
  std::array<double, 4> weight{};
};
BilinearTap bilinear_tap(const MapCoord& coord, std::size_t rows, std::size_t cols);

}  // namespace h23d
