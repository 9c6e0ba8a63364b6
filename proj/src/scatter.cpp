#include "h23d/scatter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "h23d/error.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

SparseGrid scatter_max(const Tensor& point_features,
                       std::span<const std::int64_t> cell_ids,
                       std::int64_t n_cells) {
  if (point_features.rank() != 2)
    throw ShapeError("scatter_max: features must be {N, C}, got " +
                     shape_str(point_features.shape()));
  const std::size_t n = point_features.dim(0);
  const std::size_t channels = point_features.dim(1);
  if (cell_ids.size() != n)
    throw ShapeError("scatter_max: " + std::to_string(cell_ids.size()) +
                     " cell ids for " + std::to_string(n) + " points");
  for (std::int64_t id : cell_ids)
    if (id < 0 || id >= n_cells)
      throw OutOfRangeError("scatter_max: cell id " + std::to_string(id) +
                            " outside [0, " + std::to_string(n_cells) + ")");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cell_ids[a] < cell_ids[b];
  });

  SparseGrid out;
  out.n_cells = n_cells;
  out.point_cell.resize(n);
  std::vector<std::size_t> group_start;
  for (std::size_t s = 0; s < n; ++s) {
    const std::int64_t id = cell_ids[order[s]];
    if (out.cell_ids.empty() || out.cell_ids.back() != id) {
      out.cell_ids.push_back(id);
      group_start.push_back(s);
    }
    out.point_cell[order[s]] = out.cell_ids.size() - 1;
  }
  group_start.push_back(n);

  const std::size_t m = out.cell_ids.size();
  out.features = Tensor({m, channels});
  out.argmax.assign(m * channels, 0);
  // Members of a group are in increasing point order, so a strict `>` keeps
  // the lowest index on ties.
  parallel_for(0, m, [&](std::size_t g) {
    auto dst = out.features.row(g);
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t best = order[group_start[g]];
      double best_v = point_features.at(best, c);
      for (std::size_t s = group_start[g] + 1; s < group_start[g + 1]; ++s) {
        const double v = point_features.at(order[s], c);
        if (v > best_v) {
          best_v = v;
          best = order[s];
        }
      }
      dst[c] = best_v;
      out.argmax[g * channels + c] = best;
    }
  }, 256);
  return out;
}

Tensor scatter_max_backward(const Tensor& grad_cells, const SparseGrid& sparse) {
  require_same_shape(grad_cells, sparse.features, "scatter_max_backward");
  const std::size_t channels = sparse.channels();
  Tensor grad({sparse.point_count(), channels});
  for (std::size_t g = 0; g < sparse.size(); ++g)
    for (std::size_t c = 0; c < channels; ++c)
      grad.at(sparse.argmax[g * channels + c], c) += grad_cells.at(g, c);
  return grad;
}

std::size_t DenseMap::occupied_count() const {
  return static_cast<std::size_t>(
      std::count(occupied.begin(), occupied.end(), std::uint8_t{1}));
}

DenseMap densify(const SparseGrid& sparse, std::size_t rows, std::size_t cols) {
  const auto total = static_cast<std::int64_t>(rows * cols);
  if (sparse.n_cells != total)
    throw ShapeError("densify: sparse id space " + std::to_string(sparse.n_cells) +
                     " does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  const std::size_t channels = sparse.features.rank() == 2 ? sparse.channels() : 0;
  DenseMap out{Tensor({channels, rows, cols}), std::vector<std::uint8_t>(rows * cols, 0)};
  const std::size_t plane = rows * cols;
  for (std::size_t g = 0; g < sparse.size(); ++g) {
    const auto cell = static_cast<std::size_t>(sparse.cell_ids[g]);
    out.occupied[cell] = 1;
    for (std::size_t c = 0; c < channels; ++c)
      out.values[c * plane + cell] = sparse.features.at(g, c);
  }
  return out;
}

DenseMap densify(const SparseGrid& sparse, const GridSpec& grid) {
  return densify(sparse, static_cast<std::size_t>(grid.rows()),
                 static_cast<std::size_t>(grid.cols()));
}

Tensor densify_backward(const Tensor& grad_map, const SparseGrid& sparse) {
  if (grad_map.rank() != 3 || grad_map.dim(0) != sparse.channels() ||
      static_cast<std::int64_t>(grad_map.dim(1) * grad_map.dim(2)) != sparse.n_cells)
    throw ShapeError("densify_backward: gradient shape " +
                     shape_str(grad_map.shape()) + " does not match sparse grid");
  const std::size_t channels = sparse.channels();
  const std::size_t plane = grad_map.dim(1) * grad_map.dim(2);
  Tensor grad({sparse.size(), channels});
  for (std::size_t g = 0; g < sparse.size(); ++g) {
    const auto cell = static_cast<std::size_t>(sparse.cell_ids[g]);
    for (std::size_t c = 0; c < channels; ++c)
      grad.at(g, c) = grad_map[c * plane + cell];
  }
  return grad;
}

BilinearTap bilinear_tap(const MapCoord& coord, std::size_t rows, std::size_t cols) {
  if (!(coord[0] >= 0.0 && coord[0] < static_cast<double>(rows) &&
        coord[1] >= 0.0 && coord[1] < static_cast<double>(cols)))
    throw OutOfRangeError("bilinear_gather: coordinate (" +
                          std::to_string(coord[0]) + ", " +
                          std::to_string(coord[1]) + ") outside map " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  // Shift into cell-centre space, then clamp the two neighbours per axis.
  const double sr = coord[0] - 0.5;
  const double sc = coord[1] - 0.5;
  const double fr = std::floor(sr);
  const double fc = std::floor(sc);
  const double wr = sr - fr;
  const double wc = sc - fc;
  auto clamp = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  const std::size_t r0 = clamp(fr, rows), r1 = clamp(fr + 1.0, rows);
  const std::size_t c0 = clamp(fc, cols), c1 = clamp(fc + 1.0, cols);
  BilinearTap tap;
  tap.cell = {r0 * cols + c0, r0 * cols + c1, r1 * cols + c0, r1 * cols + c1};
  tap.weight = {(1 - wr) * (1 - wc), (1 - wr) * wc, wr * (1 - wc), wr * wc};
  return tap;
}

Tensor bilinear_gather(const Tensor& map, std::span<const MapCoord> coords) {
  if (map.rank() != 3)
    throw ShapeError("bilinear_gather: map must be {C, H, W}, got " +
                     shape_str(map.shape()));
  const std::size_t channels = map.dim(0), rows = map.dim(1), cols = map.dim(2);
  const std::size_t plane = rows * cols;
  std::vector<BilinearTap> taps(coords.size());
  for (std::size_t n = 0; n < coords.size(); ++n)
    taps[n] = bilinear_tap(coords[n], rows, cols);
  Tensor out({coords.size(), channels});
  parallel_for(0, coords.size(), [&](std::size_t n) {
    const BilinearTap& t = taps[n];
    auto dst = out.row(n);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = map.data().data() + c * plane;
      dst[c] = t.weight[0] * src[t.cell[0]] + t.weight[1] * src[t.cell[1]] +
               t.weight[2] * src[t.cell[2]] + t.weight[3] * src[t.cell[3]];
    }
  }, 512);
  return out;
}

Tensor bilinear_gather_backward(const Tensor& grad_points,
                                std::span<const MapCoord> coords,
                                const Shape& map_shape) {
  if (map_shape.size() != 3)
    throw ShapeError("bilinear_gather_backward: map shape must be rank 3");
  const std::size_t channels = map_shape[0], rows = map_shape[1], cols = map_shape[2];
  require_shape(grad_points, {coords.size(), channels}, "bilinear_gather_backward");
  std::vector<BilinearTap> taps(coords.size());
  for (std::size_t n = 0; n < coords.size(); ++n)
    taps[n] = bilinear_tap(coords[n], rows, cols);
  Tensor grad(map_shape);
  const std::size_t plane = rows * cols;
  // Channels are independent; within a channel points accumulate in order.
  parallel_for(0, channels, [&](std::size_t c) {
    double* dst = grad.data().data() + c * plane;
    for (std::size_t n = 0; n < coords.size(); ++n) {
      const double g = grad_points.at(n, c);
      const BilinearTap& t = taps[n];
      for (int k = 0; k < 4; ++k) dst[t.cell[k]] += t.weight[k] * g;
    }
  });
  return grad;
}

}  // namespace h23d
