#include "h23d/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "h23d/error.hpp"
#include "h23d/nms.hpp"

namespace h23d::oracle {

SparseGrid scatter_max(const Tensor& features, std::span<const std::int64_t> cell_ids,
                       std::int64_t n_cells) {
  const std::size_t n = cell_ids.size();
  const std::size_t c = features.rank() == 2 ? features.dim(1) : 0;
  for (std::int64_t id : cell_ids)
    if (id < 0 || id >= n_cells) throw OutOfRangeError("oracle scatter_max: bad cell id");
  const std::set<std::int64_t> unique(cell_ids.begin(), cell_ids.end());
  SparseGrid g;
  g.n_cells = n_cells;
  g.cell_ids.assign(unique.begin(), unique.end());
  g.features = Tensor({g.cell_ids.size(), c});
  g.argmax.assign(g.cell_ids.size() * c, 0);
  g.point_cell.assign(n, 0);
  for (std::size_t k = 0; k < g.cell_ids.size(); ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      bool first = true;
      for (std::size_t p = 0; p < n; ++p) {
        if (cell_ids[p] != g.cell_ids[k]) continue;
        if (first || features.at(p, ch) > g.features.at(k, ch)) {
          g.features.at(k, ch) = features.at(p, ch);
          g.argmax[k * c + ch] = p;
          first = false;
        }
      }
    }
    for (std::size_t p = 0; p < n; ++p)
      if (cell_ids[p] == g.cell_ids[k]) g.point_cell[p] = k;
  }
  return g;
}

std::vector<std::size_t> voxel_candidates(const Vec3& grid_point, const H3DVoxels& voxels,
                                          int radius) {
  const H3DGrid& gr = voxels.grid;
  const std::int64_t ci = static_cast<std::int64_t>(std::floor(continuous_index(grid_point[0], gr.x)));
  const std::int64_t cj = static_cast<std::int64_t>(std::floor(continuous_index(grid_point[1], gr.y)));
  const std::int64_t ck = static_cast<std::int64_t>(std::floor(continuous_index(grid_point[2], gr.z)));
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    const auto& t = voxels.triples[v];
    const std::int64_t d = std::abs(t[0] - ci) + std::abs(t[1] - cj) + std::abs(t[2] - ck);
    if (d <= radius) out.push_back(v);
  }
  return out;
}

QueryResult voxel_query(const Vec3& grid_point, const H3DVoxels& voxels, int radius,
                        std::size_t max_k, std::uint64_t seed) {
  const auto cand = voxel_candidates(grid_point, voxels, radius);
  QueryResult q;
  q.candidates = cand.size();
  q.probes = voxels.size();
  for (std::size_t s : sample_indices(cand.size(), max_k, seed)) {
    const auto& c = voxels.centers[cand[s]];
    q.neighbors.push_back(
        {cand[s], {c[0] - grid_point[0], c[1] - grid_point[1], c[2] - grid_point[2]}});
  }
  return q;
}

std::vector<std::size_t> classic_nms(std::span<const Box3D> boxes,
                                     std::span<const double> scores, double thr) {
  const std::size_t n = boxes.size();
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> kept;
  while (true) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && (best == n || scores[i] > scores[best])) best = i;
    if (best == n) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && bev_rotated_iou(boxes[best], boxes[i]) > thr) alive[i] = false;
  }
  return kept;
}

namespace {

bool inside(const Vec2& p, const std::array<Vec2, 4>& poly) {
  for (int e = 0; e < 4; ++e) {
    const Vec2& a = poly[e];
    const Vec2& b = poly[(e + 1) % 4];
    if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < -1e-12) return false;
  }
  return true;
}

bool segment_cross(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2, Vec2& out) {
  const double rx = p2.x - p1.x, ry = p2.y - p1.y;
  const double sx = q2.x - q1.x, sy = q2.y - q1.y;
  const double den = rx * sy - ry * sx;
  if (std::abs(den) < 1e-15) return false;
  const double t = ((q1.x - p1.x) * sy - (q1.y - p1.y) * sx) / den;
  const double u = ((q1.x - p1.x) * ry - (q1.y - p1.y) * rx) / den;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return false;
  out = {p1.x + t * rx, p1.y + t * ry};
  return true;
}

double polygon_intersection(const Box3D& a, const Box3D& b) {
  const auto pa = bev_corners(a), pb = bev_corners(b);
  std::vector<Vec2> pts;
  for (const Vec2& p : pa)
    if (inside(p, pb)) pts.push_back(p);
  for (const Vec2& p : pb)
    if (inside(p, pa)) pts.push_back(p);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      Vec2 x;
      if (segment_cross(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4], x)) pts.push_back(x);
    }
  if (pts.size() < 3) return 0.0;
  double cx = 0.0, cy = 0.0;
  for (const Vec2& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const Vec2& p, const Vec2& q) {
    return std::atan2(p.y - cy, p.x - cx) < std::atan2(q.y - cy, q.x - cx);
  });
  double area = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2& p = pts[i];
    const Vec2& q = pts[(i + 1) % pts.size()];
    area += p.x * q.y - q.x * p.y;
  }
  return std::abs(area) / 2;
}

double z_overlap(const Box3D& a, const Box3D& b) {
  const double lo = std::max(a.z - a.h / 2, b.z - b.h / 2);
  const double hi = std::min(a.z + a.h / 2, b.z + b.h / 2);
  return std::max(0.0, hi - lo);
}

bool in_box(const Box3D& b, double x, double y, double z, bool use_z) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = x - b.x, dy = y - b.y;
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  if (std::abs(u) > b.l / 2 || std::abs(v) > b.w / 2) return false;
  return !use_z || std::abs(z - b.z) <= b.h / 2;
}

double sampled_iou(const Box3D& a, const Box3D& b, std::size_t k, std::uint64_t seed,
                   bool use_z) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  const std::size_t kz = use_z ? k : 1;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t m = 0; m < kz; ++m) {
        const double lu = ((i + u01(rng)) / k - 0.5) * a.l;
        const double lv = ((j + u01(rng)) / k - 0.5) * a.w;
        const double lz = use_z ? ((m + u01(rng)) / kz - 0.5) * a.h : 0.0;
        if (in_box(b, a.x + c * lu - s * lv, a.y + s * lu + c * lv, a.z + lz, use_z)) ++hits;
      }
  const double frac = static_cast<double>(hits) / static_cast<double>(k * k * kz);
  const double va = use_z ? a.l * a.w * a.h : a.l * a.w;
  const double vb = use_z ? b.l * b.w * b.h : b.l * b.w;
  const double inter = frac * va;
  return inter / (va + vb - inter);
}

}  // namespace

double polygon_bev_iou(const Box3D& a, const Box3D& b) {
  const double i = polygon_intersection(a, b);
  return i / (a.l * a.w + b.l * b.w - i);
}

double polygon_iou3d(const Box3D& a, const Box3D& b) {
  const double i = polygon_intersection(a, b) * z_overlap(a, b);
  return i / (a.l * a.w * a.h + b.l * b.w * b.h - i);
}

double monte_carlo_bev_iou(const Box3D& a, const Box3D& b, std::size_t per_axis,
                           std::uint64_t seed) {
  return sampled_iou(a, b, per_axis, seed, false);
}

double monte_carlo_iou3d(const Box3D& a, const Box3D& b, std::size_t per_axis,
                         std::uint64_t seed) {
  return sampled_iou(a, b, per_axis, seed, true);
}

TargetAssignment assign_rpn_targets(std::span<const Box3D> anchors, std::span<const Box3D> gts,
                                    double match_thr, double unmatch_thr) {
  const std::size_t na = anchors.size(), ng = gts.size();
  TargetAssignment ta;
  ta.labels.assign(na, 0);
  ta.targets.assign(na, BoxResidual{});
  ta.matched_gt.assign(na, -1);
  if (ng == 0) return ta;
  std::vector<std::vector<double>> iou(na, std::vector<double>(ng));
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t g = 0; g < ng; ++g) iou[a][g] = bev_rotated_iou(anchors[a], gts[g]);
  for (std::size_t a = 0; a < na; ++a) {
    const auto it = std::max_element(iou[a].begin(), iou[a].end());
    const int g = static_cast<int>(it - iou[a].begin());
    if (*it >= match_thr) {
      ta.labels[a] = gts[g].label;
      ta.matched_gt[a] = g;
    } else if (*it >= unmatch_thr) {
      ta.labels[a] = -1;
    }
  }
  for (std::size_t g = 0; g < ng; ++g) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < na; ++a)
      if (iou[a][g] > iou[best][g]) best = a;
    if (na == 0 || !(iou[best][g] > 0.0)) continue;
    ta.labels[best] = gts[g].label;
    ta.matched_gt[best] = static_cast<int>(g);
  }
  for (std::size_t a = 0; a < na; ++a)
    if (ta.labels[a] >= 1) {
      ta.targets[a] = encode_box(gts[ta.matched_gt[a]], anchors[a]);
      ++ta.num_foreground;
    }
  return ta;
}

H3DVoxels group_triples(const Tensor& f_h3d, std::span<const ProjectedIndex> bev,
                        std::span<const ProjectedIndex> pv, const H3DGrid& grid) {
  std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> groups;
  for (std::size_t n = 0; n < bev.size(); ++n)
    groups[{bev[n].quantized[0], bev[n].quantized[1], pv[n].quantized[1]}].push_back(n);
  const std::size_t c = f_h3d.dim(1);
  H3DVoxels v;
  v.grid = grid;
  v.sparse.features = Tensor({groups.size(), c});
  std::size_t row = 0;
  for (const auto& [t, members] : groups) {
    v.triples.push_back(t);
    v.centers.push_back({grid.x.cell_center(t[0]), grid.y.cell_center(t[1]),
                         grid.z.cell_center(t[2])});
    v.sparse.cell_ids.push_back((t[0] * grid.y.cells() + t[1]) * grid.z.cells() + t[2]);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = f_h3d.at(members[0], ch);
      for (std::size_t p : members) m = std::max(m, f_h3d.at(p, ch));
      v.sparse.features.at(row, ch) = m;
    }
    ++row;
  }
  return v;
}

Tensor bilinear_gather(const Tensor& map, std::span<const MapCoord> coords) {
  const std::size_t ch = map.dim(0), rows = map.dim(1), cols = map.dim(2);
  Tensor out({coords.size(), ch});
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double sr = std::clamp(coords[n][0] - 0.5, 0.0, static_cast<double>(rows - 1));
    const double sc = std::clamp(coords[n][1] - 0.5, 0.0, static_cast<double>(cols - 1));
    for (std::size_t c = 0; c < ch; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wr = std::max(0.0, 1.0 - std::abs(sr - static_cast<double>(r)));
        if (wr == 0.0) continue;
        for (std::size_t q = 0; q < cols; ++q) {
          const double wq = std::max(0.0, 1.0 - std::abs(sc - static_cast<double>(q)));
          acc += wr * wq * map.at(c, r, q);
        }
      }
      out.at(n, c) = acc;
    }
  }
  return out;
}

Box3D random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> pos(-extent, extent), size(0.3, 5.0),
      yaw(-std::numbers::pi, std::numbers::pi), z(-2.0, 1.0);
  Box3D b;
  b.x = pos(rng);
  b.y = pos(rng);
  b.z = z(rng);
  b.l = size(rng);
  b.w = size(rng);
  b.h = size(rng) / 2;
  b.yaw = normalize_angle(yaw(rng));
  return b;
}

Box3D random_neighbor(const Box3D& a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), scale(0.5, 1.6);
  Box3D b = a;
  b.x += u(rng) * a.l * 0.6;
  b.y += u(rng) * a.w * 0.6;
  b.z += u(rng) * a.h * 0.5;
  b.l *= scale(rng);
  b.w *= scale(rng);
  b.h *= scale(rng);
  b.yaw = normalize_angle(a.yaw + u(rng) * std::numbers::pi);
  return b;
}

namespace {

SuiteEntry exact_entry(std::string name) {
  SuiteEntry e;
  e.name = std::move(name);
  return e;
}

void finish(SuiteEntry& e) {
  e.passed = e.mismatches == 0 && e.instances > 0 &&
             (e.tolerance == 0.0 || e.max_error < e.tolerance);
}

bool same_grid(const SparseGrid& a, const SparseGrid& b) {
  return a.cell_ids == b.cell_ids && a.features.shape() == b.features.shape() &&
         a.features.values() == b.features.values() && a.argmax == b.argmax &&
         a.point_cell == b.point_cell;
}

H3DVoxels random_scene(std::mt19937_64& rng, std::size_t points, std::size_t channels) {
  H3DGrid grid{{0.0, 8.0, 0.2}, {-4.0, 4.0, 0.2}, {-2.0, 1.0, 0.1}};
  // Clustered points so that queries see both sparse and dense neighbourhoods.
  std::uniform_real_distribution<double> ux(0.0, 8.0), uy(-4.0, 4.0), uz(-2.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.4);
  std::vector<ProjectedIndex> bev, pv;
  const double cx = ux(rng), cy = uy(rng);
  for (std::size_t n = 0; n < points; ++n) {
    double x = n % 2 ? ux(rng) : std::clamp(cx + jitter(rng), 0.0, 7.999);
    double y = n % 2 ? uy(rng) : std::clamp(cy + jitter(rng), -4.0, 3.999);
    bev.push_back(project(x, y, {grid.x, grid.y}));
    pv.push_back(project(0.0, uz(rng), {{-1.0, 1.0, 1.0}, grid.z}));
  }
  Tensor f({points, channels});
  std::normal_distribution<double> nd;
  for (double& v : f.values()) v = nd(rng);
  return h3d_voxelize(f, bev, pv, grid);
}

bool same_query(const QueryResult& a, const QueryResult& b) {
  if (a.candidates != b.candidates || a.neighbors.size() != b.neighbors.size()) return false;
  for (std::size_t i = 0; i < a.neighbors.size(); ++i)
    if (a.neighbors[i].voxel != b.neighbors[i].voxel ||
        a.neighbors[i].offset != b.neighbors[i].offset)
      return false;
  return true;
}

}  // namespace

std::vector<SuiteEntry> run_suite(const SuiteOptions& opts) {
  std::vector<SuiteEntry> out;
  std::mt19937_64 rng(opts.seed);

  {
    SuiteEntry e = exact_entry("scatter_max");
    std::uniform_int_distribution<int> npts(0, 120), small(-3, 3);
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const std::size_t n = npts(rng), c = 1 + t % 4;
      const std::int64_t cells = 1 + static_cast<std::int64_t>(t % 37);
      std::uniform_int_distribution<std::int64_t> cell(0, cells - 1);
      Tensor f({n, c});
      // Small integers half the time to exercise the tie rule.
      std::normal_distribution<double> nd;
      for (double& v : f.values()) v = t % 2 ? small(rng) : nd(rng);
      std::vector<std::int64_t> ids(n);
      for (auto& id : ids) id = cell(rng);
      if (!same_grid(h23d::scatter_max(f, ids, cells), oracle::scatter_max(f, ids, cells)))
        ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry e = exact_entry("voxel_query");
    std::uniform_int_distribution<int> npts(1, 700), radius(1, 6);
    std::uniform_real_distribution<double> ux(-0.5, 8.5), uy(-4.5, 4.5), uz(-2.3, 1.3);
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const H3DVoxels vox = random_scene(rng, npts(rng), 2);
      const VoxelLookup lookup(vox);
      const Vec3 p{ux(rng), uy(rng), uz(rng)};
      const int r = radius(rng);
      const std::size_t k = t % 3 ? 16 : 4;
      if (!same_query(h23d::voxel_query(p, lookup, r, k, t), oracle::voxel_query(p, vox, r, k, t)))
        ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry e = exact_entry("classic_nms");
    std::uniform_int_distribution<int> nbox(0, 24);
    std::uniform_real_distribution<double> score(0.0, 1.0), thr(0.05, 0.8);
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const int n = nbox(rng);
      std::vector<Box3D> boxes;
      std::vector<double> scores;
      for (int i = 0; i < n; ++i) {
        boxes.push_back(i > 0 && i % 3 == 0 ? random_neighbor(boxes.back(), rng)
                                            : random_box(rng, 6.0));
        // Quantized scores produce ties.
        scores.push_back(t % 2 ? std::round(score(rng) * 8) / 8 : score(rng));
      }
      const double th = thr(rng);
      if (h23d::classic_nms(boxes, scores, th) != oracle::classic_nms(boxes, scores, th)) ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry poly_bev{"bev_iou_polygon", 0, 0, 0.0, 1e-9, false};
    SuiteEntry poly_3d{"iou3d_polygon", 0, 0, 0.0, 1e-9, false};
    SuiteEntry mc_bev{"bev_iou_monte_carlo", 0, 0, 0.0, 0.01, false};
    SuiteEntry mc_3d{"iou3d_monte_carlo", 0, 0, 0.0, 0.01, false};
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const Box3D a = random_box(rng, 5.0);
      const Box3D b = t % 10 == 0 ? a : t % 10 == 1 ? random_box(rng, 5.0) : random_neighbor(a, rng);
      const double bev = bev_rotated_iou(a, b), v3 = iou3d(a, b);
      auto track = [](SuiteEntry& e, double err) {
        e.max_error = std::max(e.max_error, err);
        if (!(err < e.tolerance)) ++e.mismatches;
        ++e.instances;
      };
      track(poly_bev, std::abs(bev - polygon_bev_iou(a, b)));
      track(poly_3d, std::abs(v3 - polygon_iou3d(a, b)));
      track(mc_bev, std::abs(bev - monte_carlo_bev_iou(a, b, 160, t)));
      track(mc_3d, std::abs(v3 - monte_carlo_iou3d(a, b, 32, t)));
    }
    for (SuiteEntry* e : {&poly_bev, &poly_3d, &mc_bev, &mc_3d}) {
      finish(*e);
      out.push_back(*e);
    }
  }

  {
    SuiteEntry e = exact_entry("rpn_target_assignment");
    const GridSpec grid{{0.0, 8.0, 0.5}, {-4.0, 4.0, 0.5}};
    const AnchorSize sizes[] = {{3.9, 1.6, 1.56, -1.0, 1}, {0.8, 0.6, 1.7, -0.6, 2}};
    const double yaws[] = {0.0, std::numbers::pi / 2};
    const auto anchors = gen_anchors(grid, sizes, yaws);
    std::uniform_int_distribution<int> ngt(0, 4);
    const std::size_t scenes = std::max<std::size_t>(opts.instances / 5, 1);
    for (std::size_t t = 0; t < scenes; ++t) {
      std::vector<Box3D> gts;
      for (int g = ngt(rng); g > 0; --g) {
        Box3D b = random_box(rng, 3.5);
        b.x += 4.0;
        b.label = 1 + static_cast<int>(rng() % 2);
        gts.push_back(b);
      }
      const auto fast = h23d::assign_rpn_targets(anchors, gts, 0.6, 0.45);
      const auto slow = oracle::assign_rpn_targets(anchors, gts, 0.6, 0.45);
      if (fast.labels != slow.labels || fast.matched_gt != slow.matched_gt ||
          fast.targets != slow.targets || fast.num_foreground != slow.num_foreground)
        ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry e = exact_entry("h3d_grouping");
    const H3DGrid grid{{0.0, 2.0, 0.2}, {-1.0, 1.0, 0.2}, {-1.0, 0.0, 0.1}};
    std::uniform_int_distribution<int> npts(1, 200);
    std::uniform_real_distribution<double> ux(0.0, 2.0), uy(-1.0, 1.0), uz(-1.0, 0.0);
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const std::size_t n = npts(rng);
      std::vector<ProjectedIndex> bev, pv;
      for (std::size_t p = 0; p < n; ++p) {
        bev.push_back(project(ux(rng), uy(rng), {grid.x, grid.y}));
        pv.push_back(project(0.0, uz(rng), {{-1.0, 1.0, 1.0}, grid.z}));
      }
      Tensor f({n, 3});
      std::normal_distribution<double> nd;
      for (double& v : f.values()) v = nd(rng);
      const H3DVoxels a = h3d_voxelize(f, bev, pv, grid);
      const H3DVoxels b = group_triples(f, bev, pv, grid);
      if (a.triples != b.triples || a.centers != b.centers ||
          a.sparse.cell_ids != b.sparse.cell_ids ||
          a.features().values() != b.features().values())
        ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry e{"bilinear_gather", 0, 0, 0.0, 1e-12, false};
    std::uniform_int_distribution<int> dim(1, 9);
    std::normal_distribution<double> nd;
    for (std::size_t t = 0; t < opts.instances; ++t) {
      const std::size_t h = dim(rng), w = dim(rng);
      Tensor m({2, h, w});
      for (double& v : m.values()) v = nd(rng);
      std::uniform_real_distribution<double> r(0.0, static_cast<double>(h)),
          c(0.0, static_cast<double>(w));
      std::vector<MapCoord> coords(5);
      for (auto& q : coords) q = {r(rng), c(rng)};
      const Tensor a = h23d::bilinear_gather(m, coords), b = oracle::bilinear_gather(m, coords);
      double err = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
      e.max_error = std::max(e.max_error, err);
      if (!(err < e.tolerance)) ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }

  {
    SuiteEntry e = exact_entry("fast_nms_subset");
    std::uniform_int_distribution<int> nbox(1, 10);
    std::uniform_real_distribution<double> score(0.0, 1.0), thr(0.05, 0.8);
    for (std::size_t t = 0; t < opts.nms_sets; ++t) {
      const int n = nbox(rng);
      std::vector<Box3D> boxes;
      std::vector<double> scores;
      for (int i = 0; i < n; ++i) {
        boxes.push_back(i > 0 && i % 2 == 0 ? random_neighbor(boxes[i - 1], rng)
                                            : random_box(rng, 3.0));
        scores.push_back(score(rng));
      }
      const double th = thr(rng);
      auto fast = fast_nms(boxes, scores, th, boxes.size());
      auto classic = h23d::classic_nms(boxes, scores, th);
      std::sort(fast.begin(), fast.end());
      std::sort(classic.begin(), classic.end());
      if (!std::includes(classic.begin(), classic.end(), fast.begin(), fast.end())) ++e.mismatches;
      ++e.instances;
    }
    finish(e);
    out.push_back(e);
  }
  return out;
}

std::string suite_to_json(const std::vector<SuiteEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries)
    arr.push_back({{"name", e.name},
                   {"instances", e.instances},
                   {"mismatches", e.mismatches},
                   {"max_error", e.max_error},
                   {"tolerance", e.tolerance},
                   {"passed", e.passed}});
  return arr.dump(2);
}

}  // namespace h23d::oracle
