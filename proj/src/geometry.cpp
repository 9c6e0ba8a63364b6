#include "h23d/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "h23d/error.hpp"

namespace h23d {

namespace {
constexpr double kSnapTolerance = 1e-9;
}

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

Cylindrical to_cylindrical(const Point& p) {
  if (p.x == 0.0 && p.y == 0.0)
    throw InvalidPointError("azimuth undefined for a point on the z axis");
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
    throw InvalidPointError("non-finite point coordinate");
  return {std::hypot(p.x, p.y), std::atan2(p.y, p.x), p.z};
}

std::int64_t AxisSpec::cells() const {
  return static_cast<std::int64_t>(std::ceil((max - min) / cell - kSnapTolerance));
}

void AxisSpec::validate(const char* name) const {
  if (!(max > min))
    throw ConfigError(std::string(name) + ": max must exceed min");
  if (!(cell > 0.0))
    throw ConfigError(std::string(name) + ": cell size must be positive");
}

void GridSpec::validate() const {
  first.validate("first axis");
  second.validate("second axis");
}

double continuous_index(double value, const AxisSpec& axis) {
  const double c = (value - axis.min) / axis.cell;
  const double nearest = std::round(c);
  return std::abs(c - nearest) < kSnapTolerance ? nearest : c;
}

ProjectedIndex project(double a, double b, const GridSpec& grid) {
  if (!grid.first.contains(a) || !grid.second.contains(b))
    throw OutOfRangeError("coordinate (" + std::to_string(a) + ", " +
                          std::to_string(b) + ") outside grid");
  ProjectedIndex out;
  out.continuous = {continuous_index(a, grid.first),
                    continuous_index(b, grid.second)};
  const std::array<std::int64_t, 2> counts{grid.rows(), grid.cols()};
  for (int d = 0; d < 2; ++d) {
    // Snapping must never lift an in-range value onto the cell count.
    const double limit = static_cast<double>(counts[d]);
    if (out.continuous[d] >= limit)
      out.continuous[d] = std::nextafter(limit, 0.0);
    out.quantized[d] = static_cast<std::int64_t>(std::floor(out.continuous[d]));
  }
  return out;
}

ProjectedIndex pv_index_cyl(double phi, double z, const GridSpec& pv) {
  return project(phi, z, pv);
}

ProjectedIndex pv_index(const Point& p, const GridSpec& pv) {
  const Cylindrical c = to_cylindrical(p);
  return pv_index_cyl(c.phi, c.z, pv);
}

ProjectedIndex bev_index(const Point& p, const GridSpec& bev) {
  return project(p.x, p.y, bev);
}

bool in_range(const Point& p, const GridSpec& bev, const GridSpec& pv) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
    return false;
  if (!bev.first.contains(p.x) || !bev.second.contains(p.y)) return false;
  if (!pv.second.contains(p.z)) return false;
  if (p.x == 0.0 && p.y == 0.0) return false;
  return pv.first.contains(std::atan2(p.y, p.x));
}

PointCloud clip_range(const PointCloud& cloud, const GridSpec& bev,
                      const GridSpec& pv) {
  PointCloud out;
  out.has_time = cloud.has_time;
  out.points.reserve(cloud.size());
  for (const Point& p : cloud.points)
    if (in_range(p, bev, pv)) out.points.push_back(p);
  return out;
}

CloudIndices index_cloud(const PointCloud& cloud, const GridSpec& bev,
                         const GridSpec& pv) {
  CloudIndices idx;
  idx.pv.resize(cloud.size());
  idx.bev.resize(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    idx.pv[n] = pv_index(cloud.points[n], pv);
    idx.bev[n] = bev_index(cloud.points[n], bev);
  }
  return idx;
}

Tensor augment_input(const PointCloud& cloud, const GridSpec& bev,
                     const GridSpec& pv) {
  const std::size_t width = augmented_width(cloud.has_time);
  Tensor out({cloud.size(), width});
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Point& p = cloud.points[n];
    const Cylindrical cyl = to_cylindrical(p);
    const ProjectedIndex b = bev_index(p, bev);
    const ProjectedIndex v = pv_index_cyl(cyl.phi, cyl.z, pv);
    auto row = out.row(n);
    row[0] = p.x;
    row[1] = p.y;
    row[2] = p.z;
    row[3] = cyl.phi;
    row[4] = p.x - bev.first.cell_center(b.quantized[0]);
    row[5] = p.y - bev.second.cell_center(b.quantized[1]);
    row[6] = p.z - pv.second.cell_center(v.quantized[1]);
    row[7] = cyl.phi - pv.first.cell_center(v.quantized[0]);
    row[8] = p.r;
    if (cloud.has_time) row[9] = p.t;
  }
  return out;
}

}  // namespace h23d
