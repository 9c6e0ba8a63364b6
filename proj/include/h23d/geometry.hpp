#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "h23d/tensor.hpp"

namespace h23d {

struct Point {
  double x = 0.0;  // m
  double y = 0.0;  // m
  double z = 0.0;  // m
  double r = 0.0;  // reflectance in [0, 1]
  double t = 0.0;  // s, meaningful only when the cloud carries time
};

struct PointCloud {
  std::vector<Point> points;
  bool has_time = false;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

struct Cylindrical {
  double rho = 0.0;  // m
  double phi = 0.0;  // rad, in (-pi, pi]
  double z = 0.0;    // m
};

// Full-quadrant azimuth. Throws InvalidPointError for a point on the z axis.
Cylindrical to_cylindrical(const Point& p);

// One quantized axis: half-open range [min, max) split into cells of `cell`.
struct AxisSpec {
  double min = 0.0;
  double max = 0.0;
  double cell = 1.0;

  std::int64_t cells() const;
  double cell_center(std::int64_t idx) const { return (idx + 0.5) * cell + min; }
  bool contains(double v) const { return v >= min && v < max; }
  void validate(const char* name) const;
};

// Two-axis view grid. BEV: first = x, second = y (metres).
// PV: first = azimuth (radians), second = z (metres).
struct GridSpec {
  AxisSpec first;
  AxisSpec second;

  std::int64_t rows() const { return first.cells(); }
  std::int64_t cols() const { return second.cells(); }
  std::int64_t cell_count() const { return rows() * cols(); }
  std::int64_t linear_id(std::int64_t r, std::int64_t c) const { return r * cols() + c; }
  void validate() const;
};

struct ProjectedIndex {
  std::array<double, 2> continuous{};
  std::array<std::int64_t, 2> quantized{};
};

// Continuous index (v - min) / cell. Values within 1e-9 of an integer snap to
// it so that cell boundaries quoted in decimal degrees land in the cell they
// name; quantized == floor(continuous) always holds.
double continuous_index(double value, const AxisSpec& axis);

ProjectedIndex project(double a, double b, const GridSpec& grid);

// (l, k) from azimuth and height. Throws OutOfRangeError outside the grid.
ProjectedIndex pv_index(const Point& p, const GridSpec& pv);
ProjectedIndex pv_index_cyl(double phi, double z, const GridSpec& pv);
// (i, j) from x and y. Throws OutOfRangeError outside the grid.
ProjectedIndex bev_index(const Point& p, const GridSpec& bev);

bool in_range(const Point& p, const GridSpec& bev, const GridSpec& pv);

// Keeps points inside every configured range, in order.
PointCloud clip_range(const PointCloud& cloud, const GridSpec& bev,
                      const GridSpec& pv);

// Per-point (x, y, z, phi, x_d, y_d, z_d, phi_d, r[, t]); the *_d channels are
// coordinate minus containing-cell centre in the named view.
Tensor augment_input(const PointCloud& cloud, const GridSpec& bev,
                     const GridSpec& pv);

inline std::size_t augmented_width(bool has_time) { return has_time ? 10 : 9; }

// Per-point projections of an already clipped cloud.
struct CloudIndices {
  std::vector<ProjectedIndex> pv;
  std::vector<ProjectedIndex> bev;
};
CloudIndices index_cloud(const PointCloud& cloud, const GridSpec& bev,
                         const GridSpec& pv);

double deg2rad(double deg);
double rad2deg(double rad);

}  // namespace h23d
