#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "h23d/detail/multi_radius_pool.hpp"
#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/oracles.hpp"
#include "h23d/roi.hpp"
#include "support.hpp"

using namespace h23d;
using h23d::test::random_tensor;

namespace {

H3DGrid grid_with(double x_max) { return {{0.0, x_max, 0.2}, {-4.0, 4.0, 0.2}, {-3.0, 1.0, 0.1}}; }

H3DVoxels voxels_from(const std::vector<Vec3>& pts, const Tensor& f, const H3DGrid& g) {
  std::vector<ProjectedIndex> bev, pv;
  for (const Vec3& p : pts) {
    const auto ijk = g.cell_of(p);
    ProjectedIndex b, v;
    b.quantized = {ijk[0], ijk[1]};
    v.quantized = {0, ijk[2]};
    bev.push_back(b);
    pv.push_back(v);
  }
  return h3d_voxelize(f, bev, pv, g);
}

std::vector<Vec3> points_around(const Box3D& box, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nx(0.0, box.l / 2), ny(0.0, box.w / 2), nz(0.0, box.h / 2);
  std::vector<Vec3> pts;
  while (pts.size() < n) {
    const Vec3 p{box.x + nx(rng), box.y + ny(rng), box.z + nz(rng)};
    if (p[0] > 0.05 && p[0] < 7.9 && std::abs(p[1]) < 3.9 && p[2] > -2.95 && p[2] < 0.95)
      pts.push_back(p);
  }
  return pts;
}

Box3D test_roi() { return {4.0, 0.3, -1.0, 3.9, 1.6, 1.56, 0.4}; }

RoiPoolConfig small_pool() {
  RoiPoolConfig c;
  c.coarse_channels = 4;
  c.fine_channels = 3;
  return c;
}

}  // namespace

TEST_SUITE("roi") {

TEST_CASE("a single partition is the box centre") {
  const Box3D b{1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 0.7};
  const auto g = gen_grid_points(b, 1);
  REQUIRE(g.size() == 1);
  CHECK(g[0][0] == doctest::Approx(1.0));
  CHECK(g[0][1] == doctest::Approx(2.0));
  CHECK(g[0][2] == doctest::Approx(3.0));
}

TEST_CASE("two partitions of a unit cube") {
  const auto g = gen_grid_points({0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0}, 2);
  REQUIRE(g.size() == 8);
  for (const Vec3& p : g)
    for (double v : p) CHECK(std::abs(v) == doctest::Approx(0.25));
  CHECK(g[0] == Vec3{-0.25, -0.25, -0.25});
  CHECK(g[1] == Vec3{-0.25, -0.25, 0.25});
  CHECK(g[7] == Vec3{0.25, 0.25, 0.25});
}

TEST_CASE("grid points rotate with the box") {
  const auto a = gen_grid_points({0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.0}, 2);
  const auto b = gen_grid_points({0.0, 0.0, 0.0, 2.0, 1.0, 1.0, std::numbers::pi / 2}, 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i][0] == doctest::Approx(-a[i][1]));
    CHECK(b[i][1] == doctest::Approx(a[i][0]));
    CHECK(b[i][2] == a[i][2]);
  }
}

TEST_CASE("manhattan ball sizes") {
  CHECK(manhattan_ball_size(0) == 1);
  CHECK(manhattan_ball_size(1) == 7);
  CHECK(manhattan_ball_size(3) == 63);
  CHECK(manhattan_ball_size(6) == 377);
}

TEST_CASE("index sampling") {
  const auto all = sample_indices(5, 16, 1);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto s = sample_indices(100, 16, 42);
  CHECK(s.size() == 16);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(s.back() < 100);
  CHECK(s == sample_indices(100, 16, 42));
  CHECK(s != sample_indices(100, 16, 43));
}

TEST_CASE("query without voxels in range is empty") {
  const H3DGrid g = grid_with(8.0);
  const H3DVoxels v = voxels_from({{7.5, 3.5, 0.5}}, Tensor({1, 2}, 1.0), g);
  const VoxelLookup lookup(v);
  const QueryResult q = voxel_query({1.0, -3.0, -2.5}, lookup, 3, 16, 1);
  CHECK(q.neighbors.empty());
  CHECK(q.candidates == 0);
}

TEST_CASE("a voxel at the query cell is found with zero offset") {
  const H3DGrid g = grid_with(8.0);
  const H3DVoxels v = voxels_from({{1.01, 0.03, -1.04}}, Tensor({1, 2}, 1.0), g);
  const VoxelLookup lookup(v);
  const QueryResult q = voxel_query(v.centers[0], lookup, 1, 16, 1);
  REQUIRE(q.neighbors.size() == 1);
  for (double o : q.neighbors[0].offset) CHECK(std::abs(o) < 1e-12);
}

TEST_CASE("voxel query matches the exhaustive oracle") {
  const H3DGrid g = grid_with(8.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0.0, 8.0), uy(-4.0, 4.0), uz(-3.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Box3D b{ux(rng), uy(rng), -1.0, 3.0, 1.5, 1.5, 0.0};
    const auto pts = points_around(b, 50 + rng() % 400, rng);
    const H3DVoxels v = voxels_from(pts, Tensor({pts.size(), 1}), g);
    const VoxelLookup lookup(v);
    const Vec3 gp{ux(rng), uy(rng), uz(rng)};
    for (int r : {3, 6}) {
      const QueryResult a = voxel_query(gp, lookup, r, 16, trial);
      const QueryResult o = oracle::voxel_query(gp, v, r, 16, trial);
      CHECK(a.candidates == o.candidates);
      REQUIRE(a.neighbors.size() == o.neighbors.size());
      CHECK(a.neighbors.size() <= 16);
      for (std::size_t i = 0; i < a.neighbors.size(); ++i) {
        CHECK(a.neighbors[i].voxel == o.neighbors[i].voxel);
        CHECK(a.neighbors[i].offset == o.neighbors[i].offset);
      }
    }
  }
}

TEST_CASE("a larger radius never loses candidates") {
  const H3DGrid g = grid_with(8.0);
  std::mt19937_64 rng(4);
  const auto pts = points_around(test_roi(), 500, rng);
  const H3DVoxels v = voxels_from(pts, Tensor({pts.size(), 1}), g);
  const VoxelLookup lookup(v);
  for (const Vec3& gp : gen_grid_points(test_roi(), 3)) {
    const QueryResult small = voxel_query(gp, lookup, 3, 100000, 1);
    const QueryResult large = voxel_query(gp, lookup, 6, 100000, 1);
    CHECK(small.candidates <= large.candidates);
    for (const Neighbor& n : small.neighbors)
      CHECK(std::any_of(large.neighbors.begin(), large.neighbors.end(),
                        [&](const Neighbor& m) { return m.voxel == n.voxel; }));
  }
}

TEST_CASE("probe counts do not grow with grid volume") {
  std::mt19937_64 rng(5);
  const auto pts = points_around(test_roi(), 400, rng);
  const Tensor f({pts.size(), 1});
  const H3DVoxels small = voxels_from(pts, f, grid_with(8.0));
  const H3DVoxels large = voxels_from(pts, f, grid_with(800.0));
  REQUIRE(small.size() == large.size());
  const VoxelLookup ls(small), ll(large);
  const Box3D roi[] = {test_roi()};
  std::size_t ps = 0, pl = 0;
  for (const auto& q : query_rois(roi, ls, 6, 3, 16, 1, 1)) ps += q.probes;
  for (const auto& q : query_rois(roi, ll, 6, 3, 16, 1, 1)) pl += q.probes;
  CHECK(ps == pl);
  CHECK(ps > 0);
}

TEST_CASE("aggregation equals the per-neighbour maximum") {
  std::mt19937_64 rng(6);
  const auto pts = points_around(test_roi(), 300, rng);
  const H3DGrid g = grid_with(8.0);
  const H3DVoxels v = voxels_from(pts, random_tensor({pts.size(), 3}, rng), g);
  const VoxelLookup lookup(v);
  const Box3D roi[] = {test_roi()};
  const auto qs = query_rois(roi, lookup, 3, 6, 16, 9, 0);

  std::mt19937_64 wa(77), wb(77);
  GridAggregator agg(3, 5, "agg", wa);
  Sequential mlp = fc_bn_relu(6, 5, "agg", wb);
  const Tensor out = agg.forward(qs, v.features(), Mode::eval);
  for (std::size_t q = 0; q < qs.size(); ++q) {
    std::vector<double> best(5, 0.0);
    bool first = true;
    for (const Neighbor& n : qs[q].neighbors) {
      Tensor row({1, 6});
      for (std::size_t c = 0; c < 3; ++c) row[c] = v.features().at(n.voxel, c);
      for (int a = 0; a < 3; ++a) row[3 + a] = n.offset[a];
      const Tensor h = mlp.forward(row, Mode::eval);
      for (std::size_t c = 0; c < 5; ++c) best[c] = first ? h[c] : std::max(best[c], h[c]);
      first = false;
    }
    for (std::size_t c = 0; c < 5; ++c) CHECK(out.at(q, c) == doctest::Approx(best[c]).epsilon(1e-12));
  }
}

TEST_CASE("empty voxel set gives all-zero roi features") {
  std::mt19937_64 rng(7);
  HvRoiPool pool(3, small_pool(), rng);
  const H3DGrid g = grid_with(8.0);
  const H3DVoxels v = voxels_from({}, Tensor({0, 3}), g);
  const Box3D rois[] = {test_roi(), {2.0, -1.0, -1.0, 2.0, 1.0, 1.0, 0.0}};
  const Tensor out = pool.forward(rois, v, 1, Mode::train);
  CHECK(out.shape() == Shape{2, 216, 7});
  CHECK(std::all_of(out.values().begin(), out.values().end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("coarse half of each fine cell replicates its parent") {
  std::mt19937_64 rng(8);
  const auto pts = points_around(test_roi(), 600, rng);
  const H3DGrid g = grid_with(8.0);
  const H3DVoxels v = voxels_from(pts, random_tensor({pts.size(), 3}, rng), g);
  std::mt19937_64 wa(21), wb(21);
  HvRoiPool pool(3, small_pool(), wa);
  GridAggregator coarse(3, 4, "roi.coarse", wb);
  const Box3D rois[] = {test_roi(), {3.0, -0.5, -1.2, 3.5, 1.7, 1.5, -1.0}};
  const Tensor out = pool.forward(rois, v, 5, Mode::eval);
  const VoxelLookup lookup(v);
  const Tensor ref = coarse.forward(query_rois(rois, lookup, 3, 6, 16, 5, 0), v.features(), Mode::eval);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t c = 0; c < 6; ++c) {
          const std::size_t f = (a * 6 + b) * 6 + c;
          const std::size_t parent = ((a / 2) * 3 + b / 2) * 3 + c / 2;
          CHECK(pool.parent_cell(f) == parent);
          for (std::size_t ch = 0; ch < 4; ++ch)
            CHECK(out[(r * 216 + f) * 7 + ch] == ref.at(r * 27 + parent, ch));
        }
}

TEST_CASE("pooling is equivariant to whole-voxel translation") {
  std::mt19937_64 rng(9);
  const auto pts = points_around(test_roi(), 500, rng);
  const Tensor f = random_tensor({pts.size(), 3}, rng);
  const H3DGrid g = grid_with(12.0);
  const double shift = 10 * 0.2;
  std::vector<Vec3> moved = pts;
  for (Vec3& p : moved) p[0] += shift;
  const H3DVoxels a = voxels_from(pts, f, g), b = voxels_from(moved, f, g);
  REQUIRE(a.size() == b.size());
  std::mt19937_64 w(4);
  HvRoiPool pool(3, small_pool(), w);
  Box3D roi = test_roi(), roi2 = test_roi();
  roi2.x += shift;
  const Box3D ra[] = {roi}, rb[] = {roi2};
  const Tensor oa = pool.forward(ra, a, 3, Mode::eval);
  const Tensor ob = pool.forward(rb, b, 3, Mode::eval);
  CHECK(h23d::test::max_abs_diff(oa, ob) < 1e-9);
}

TEST_CASE("hierarchical pooling probes fewer voxels than the multi-radius fixture") {
  std::mt19937_64 rng(10);
  const auto pts = points_around(test_roi(), 800, rng);
  const H3DVoxels v = voxels_from(pts, random_tensor({pts.size(), 3}, rng), grid_with(8.0));
  std::mt19937_64 wa(1), wb(1);
  HvRoiPool hv(3, small_pool(), wa);
  detail::MultiRadiusPool mr(3, small_pool(), wb);
  const Box3D rois[] = {test_roi()};
  const Tensor a = hv.forward(rois, v, 1, Mode::eval);
  const Tensor b = mr.forward(rois, v, 1, Mode::eval);
  CHECK(a.shape() == b.shape());
  CHECK(hv.stats().probes < mr.stats().probes);
}

TEST_CASE("detect head output arity") {
  std::mt19937_64 rng(11);
  DetectHead head(12, 8, 6, rng);
  std::mt19937_64 rng2(11);
  DetectHead head2(12, 8, 6, rng2);
  std::mt19937_64 in(3);
  const Tensor x = random_tensor({4, 12}, in);
  CHECK(head.forward(x, Mode::eval).conf.values() == head2.forward(x, Mode::eval).conf.values());
  const HeadOutput o = head.forward(random_tensor({5, 12}, rng), Mode::train);
  CHECK(o.conf.shape() == Shape{5, 1});
  CHECK(o.reg.shape() == Shape{5, 7});
}

TEST_CASE("invalid pool configs are rejected") {
  RoiPoolConfig c = small_pool();
  c.fine_grid = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_pool();
  c.max_neighbors = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("finite-difference gradients") {
  for (const char* op : {"aggregate_grid", "hv_roi_pool", "detect_head"}) {
    CAPTURE(op);
    CHECK(gradcheck(op, 6).passed);
  }
}

}  // TEST_SUITE
