#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/oracles.hpp"
#include "h23d/scatter.hpp"
#include "support.hpp"

using namespace h23d;
using h23d::test::random_tensor;

TEST_SUITE("scatter") {

TEST_CASE("two points in one cell") {
  const Tensor f({2, 2}, {1.0, 3.0, 2.0, 2.0});
  const std::vector<std::int64_t> ids{4, 4};
  const SparseGrid g = scatter_max(f, ids, 10);
  REQUIRE(g.size() == 1);
  CHECK(g.cell_ids[0] == 4);
  CHECK(g.features.at(0, 0) == 2.0);
  CHECK(g.features.at(0, 1) == 3.0);
  CHECK(g.argmax == std::vector<std::size_t>{1, 0});

  const Tensor back = scatter_max_backward(Tensor({1, 2}, {1.0, 1.0}), g);
  CHECK(back.values() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("a single point is its own cell") {
  const Tensor f({1, 3}, {-1.0, 0.0, 5.0});
  const std::vector<std::int64_t> ids{2};
  const SparseGrid g = scatter_max(f, ids, 3);
  REQUIRE(g.size() == 1);
  CHECK(g.features.values() == f.values());
}

TEST_CASE("ties go to the lowest point index") {
  const Tensor f({3, 1}, {7.0, 7.0, 7.0});
  const std::vector<std::int64_t> ids{1, 1, 1};
  CHECK(scatter_max(f, ids, 2).argmax[0] == 0);
}

TEST_CASE("cell ids outside the id space are rejected") {
  const Tensor f({1, 1}, {1.0});
  const std::vector<std::int64_t> hi{5}, lo{-1};
  CHECK_THROWS_AS(scatter_max(f, hi, 5), OutOfRangeError);
  CHECK_THROWS_AS(scatter_max(f, lo, 5), OutOfRangeError);
}

TEST_CASE("matches the per-cell loop oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const Tensor f = random_tensor({n, 4}, rng);
    std::vector<std::int64_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int64_t>(rng() % 10);
    const SparseGrid a = scatter_max(f, ids, 10);
    const SparseGrid b = oracle::scatter_max(f, ids, 10);
    CHECK(a.cell_ids == b.cell_ids);
    CHECK(a.features.values() == b.features.values());
    CHECK(a.argmax == b.argmax);
  }
}

TEST_CASE("each cell dominates its members and is attained by one") {
  std::mt19937_64 rng(4);
  const Tensor f = random_tensor({300, 3}, rng);
  std::vector<std::int64_t> ids(300);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng() % 17);
  const SparseGrid g = scatter_max(f, ids, 17);
  for (std::size_t p = 0; p < 300; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(g.features.at(g.point_cell[p], c) >= f.at(p, c));
      CHECK(g.features.at(g.point_cell[p], c) == f.at(g.argmax[g.point_cell[p] * 3 + c], c));
    }
}

TEST_CASE("invariant under point permutation") {
  std::mt19937_64 rng(6);
  const Tensor f = random_tensor({80, 2}, rng);
  std::vector<std::int64_t> ids(80);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng() % 9);
  std::vector<std::size_t> perm(80);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor fp({80, 2});
  std::vector<std::int64_t> ip(80);
  for (std::size_t i = 0; i < 80; ++i) {
    fp.at(i, 0) = f.at(perm[i], 0);
    fp.at(i, 1) = f.at(perm[i], 1);
    ip[i] = ids[perm[i]];
  }
  const SparseGrid a = scatter_max(f, ids, 9), b = scatter_max(fp, ip, 9);
  CHECK(a.cell_ids == b.cell_ids);
  CHECK(a.features.values() == b.features.values());
}

TEST_CASE("densify fills occupied cells and zeros elsewhere") {
  SparseGrid empty = scatter_max(Tensor({0, 2}), std::vector<std::int64_t>{}, 12);
  const DenseMap e = densify(empty, 3, 4);
  CHECK(e.values.shape() == Shape{2, 3, 4});
  CHECK(e.occupied_count() == 0);
  CHECK(std::all_of(e.values.values().begin(), e.values.values().end(),
                    [](double v) { return v == 0.0; }));

  const Tensor f({3, 1}, {1.0, 2.0, 3.0});
  const std::vector<std::int64_t> ids{5, 5, 10};
  const DenseMap d = densify(scatter_max(f, ids, 12), 3, 4);
  CHECK(d.occupied_count() == 2);
  CHECK(d.values.at(0, 1, 1) == 2.0);
  CHECK(d.values.at(0, 2, 2) == 3.0);
  CHECK(d.values.at(0, 0, 0) == 0.0);
}

TEST_CASE("occupancy equals the number of distinct ids") {
  std::mt19937_64 rng(8);
  std::vector<std::int64_t> ids(500);
  for (auto& id : ids) id = static_cast<std::int64_t>(rng() % 400);
  const SparseGrid g = scatter_max(random_tensor({500, 1}, rng), ids, 400);
  CHECK(densify(g, 20, 20).occupied_count() == std::set<std::int64_t>(ids.begin(), ids.end()).size());
}

TEST_CASE("bilinear sample at a cell centre is the cell value") {
  std::mt19937_64 rng(1);
  const Tensor m = random_tensor({2, 4, 5}, rng);
  const std::vector<MapCoord> at{{2.5, 3.5}};
  const Tensor v = bilinear_gather(m, at);
  CHECK(v.at(0, 0) == doctest::Approx(m.at(0, 2, 3)).epsilon(1e-15));
  CHECK(v.at(0, 1) == doctest::Approx(m.at(1, 2, 3)).epsilon(1e-15));
}

TEST_CASE("bilinear sample equidistant from four centres") {
  const Tensor m({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const std::vector<MapCoord> at{{1.0, 1.0}};
  CHECK(bilinear_gather(m, at).at(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("bilinear weights are a partition of unity") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ur(0.0, 7.0), uc(0.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    const BilinearTap tap = bilinear_tap({ur(rng), uc(rng)}, 7, 5);
    double s = 0.0;
    for (double w : tap.weight) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("bilinear gather matches the scalar oracle") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ur(0.0, 6.0), uc(0.0, 9.0);
  const Tensor m = random_tensor({3, 6, 9}, rng);
  std::vector<MapCoord> coords;
  for (int i = 0; i < 300; ++i) coords.push_back({ur(rng), uc(rng)});
  coords.push_back({0.0, 0.0});
  coords.push_back({5.999, 8.999});
  const Tensor a = bilinear_gather(m, coords), b = oracle::bilinear_gather(m, coords);
  CHECK(h23d::test::max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("bilinear backward is the adjoint of gather") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ur(0.0, 8.0), uc(0.0, 6.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = random_tensor({2, 8, 6}, rng);
    std::vector<MapCoord> coords;
    for (int i = 0; i < 50; ++i) coords.push_back({ur(rng), uc(rng)});
    const Tensor y = random_tensor({50, 2}, rng);
    const double lhs = h23d::test::dot(bilinear_gather(m, coords), y);
    const double rhs = h23d::test::dot(m, bilinear_gather_backward(y, coords, m.shape()));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("bilinear gather is linear in the map") {
  std::mt19937_64 rng(14);
  const Tensor a = random_tensor({1, 5, 5}, rng), b = random_tensor({1, 5, 5}, rng);
  Tensor c({1, 5, 5});
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 2.0 * a[i] - 3.0 * b[i];
  const std::vector<MapCoord> coords{{0.2, 4.9}, {2.7, 1.1}, {3.3, 3.3}};
  const Tensor ga = bilinear_gather(a, coords), gb = bilinear_gather(b, coords),
               gc = bilinear_gather(c, coords);
  for (std::size_t i = 0; i < gc.size(); ++i)
    CHECK(gc[i] == doctest::Approx(2.0 * ga[i] - 3.0 * gb[i]).epsilon(1e-13));
}

TEST_CASE("gradient at a cell centre lands on that cell only") {
  const std::vector<MapCoord> at{{1.5, 2.5}};
  const Tensor g = bilinear_gather_backward(Tensor({1, 1}, {1.0}), at, {1, 3, 4});
  CHECK(g.at(0, 1, 2) == doctest::Approx(1.0));
  double s = 0.0;
  for (double v : g.values()) s += std::abs(v);
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("coordinates outside the map are rejected") {
  const Tensor m({1, 2, 2}, 1.0);
  const std::vector<MapCoord> bad{{2.0, 0.5}}, neg{{0.5, -0.1}};
  CHECK_THROWS_AS(bilinear_gather(m, bad), OutOfRangeError);
  CHECK_THROWS_AS(bilinear_gather(m, neg), OutOfRangeError);
}

TEST_CASE("finite-difference gradients") {
  for (const char* op : {"scatter_max", "densify", "bilinear_gather"}) {
    CAPTURE(op);
    const GradcheckReport r = gradcheck(op, 5);
    CHECK(r.passed);
    CHECK(r.max_rel_err < 1e-6);
  }
}

}  // TEST_SUITE
