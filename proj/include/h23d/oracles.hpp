#pragma once

// Brute-force reference implementations. Slow on purpose: each one avoids the
// data structures and shortcuts of the operator it checks.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "h23d/anchors.hpp"
#include "h23d/boxes.hpp"
#include "h23d/fusion.hpp"
#include "h23d/roi.hpp"
#include "h23d/scatter.hpp"

namespace h23d::oracle {

// Per-cell loop over every point.
SparseGrid scatter_max(const Tensor& features, std::span<const std::int64_t> cell_ids,
                       std::int64_t n_cells);

// Every voxel's Manhattan distance to the containing cell, ascending voxel index.
std::vector<std::size_t> voxel_candidates(const Vec3& grid_point, const H3DVoxels& voxels,
                                          int radius);
// Exhaustive scan followed by the documented seeded subsample.
QueryResult voxel_query(const Vec3& grid_point, const H3DVoxels& voxels, int radius,
                        std::size_t max_k, std::uint64_t seed);

// Repeated arg-max selection with O(n^2) suppression sweeps.
std::vector<std::size_t> classic_nms(std::span<const Box3D> boxes,
                                     std::span<const double> scores, double thr);

// Intersection polygon from mutually contained corners and edge crossings,
// ordered by angle, area by shoelace.
double polygon_bev_iou(const Box3D& a, const Box3D& b);
double polygon_iou3d(const Box3D& a, const Box3D& b);

// Jittered stratified sampling of box a (per_axis samples per side).
double monte_carlo_bev_iou(const Box3D& a, const Box3D& b, std::size_t per_axis,
                           std::uint64_t seed);
double monte_carlo_iou3d(const Box3D& a, const Box3D& b, std::size_t per_axis,
                         std::uint64_t seed);

// Full IoU table, first-maximum matching, forced best anchors.
TargetAssignment assign_rpn_targets(std::span<const Box3D> anchors, std::span<const Box3D> gts,
                                    double match_thr, double unmatch_thr);

// std::map keyed by the index triple.
H3DVoxels group_triples(const Tensor& f_h3d, std::span<const ProjectedIndex> bev,
                        std::span<const ProjectedIndex> pv, const H3DGrid& grid);

// Scalar per-point bilinear blend with explicit edge clamping.
Tensor bilinear_gather(const Tensor& map, std::span<const MapCoord> coords);

Box3D random_box(std::mt19937_64& rng, double extent = 10.0);
// A box overlapping `a` most of the time.
Box3D random_neighbor(const Box3D& a, std::mt19937_64& rng);

struct SuiteEntry {
  std::string name;
  std::size_t instances = 0;
  std::size_t mismatches = 0;
  double max_error = 0.0;
  double tolerance = 0.0;  // 0 means exact
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  std::size_t instances = 1000;
  std::size_t nms_sets = 100000;
};

// Every oracle comparison on seeded random instances.
std::vector<SuiteEntry> run_suite(const SuiteOptions& opts);

std::string suite_to_json(const std::vector<SuiteEntry>& entries);

}  // namespace h23d::oracle
