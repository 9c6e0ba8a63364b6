#include <doctest.h>

#include <random>

#include "h23d/error.hpp"
#include "h23d/fusion.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/oracles.hpp"
#include "support.hpp"

using namespace h23d;
using h23d::test::random_tensor;

namespace {

H3DGrid small_grid() {
  const GridSpec bev{{0.0, 4.0, 0.5}, {-2.0, 2.0, 0.5}};
  const GridSpec pv{{-1.5, 1.5, 0.1}, {-2.0, 1.0, 0.25}};
  return H3DGrid::from_views(bev, pv);
}

ProjectedIndex pi(std::int64_t a, std::int64_t b) {
  ProjectedIndex p;
  p.quantized = {a, b};
  p.continuous = {a + 0.5, b + 0.5};
  return p;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("point encoder and bev input widths") {
  std::mt19937_64 rng(1);
  PointEncoder enc(9, 12, 7, rng);
  const Tensor f = enc.forward(random_tensor({20, 9}, rng), Mode::train);
  CHECK(f.shape() == Shape{20, 7});
  BevInputEncoder bi(7, 5, 6, rng);
  CHECK(bi.forward(f, random_tensor({20, 5}, rng), Mode::train).shape() == Shape{20, 6});
  CHECK_THROWS_AS(bi.forward(f, random_tensor({19, 5}, rng), Mode::train), ShapeError);
}

TEST_CASE("zero inputs give finite deterministic output") {
  auto run = [] {
    std::mt19937_64 rng(2);
    Bgmvf g(4, 5, 6, rng);
    return g.forward(Tensor({10, 4}), Tensor({10, 5}), Mode::train);
  };
  const Tensor a = run(), b = run();
  CHECK(a.all_finite());
  CHECK(a.values() == b.values());
}

TEST_CASE("gates are one half when the gate weights are zero") {
  std::mt19937_64 rng(3);
  Bgmvf g(4, 5, 6, rng);
  g.gate_pv_net().layers()[0].params().trainable[0].value.fill(0.0);
  g.gate_bev_net().layers()[0].params().trainable[0].value.fill(0.0);
  const Tensor out = g.forward(random_tensor({12, 4}, rng), random_tensor({12, 5}, rng), Mode::train);
  CHECK(out.shape() == Shape{12, 6});
  for (double v : g.gate_pv().values()) CHECK(v == 0.5);
  for (double v : g.gate_bev().values()) CHECK(v == 0.5);
}

TEST_CASE("gates lie strictly inside the unit interval") {
  std::mt19937_64 rng(4);
  Bgmvf g(3, 3, 4, rng);
  g.forward(random_tensor({30, 3}, rng, -5, 5), random_tensor({30, 3}, rng, -5, 5), Mode::train);
  for (double v : g.gate_pv().values()) CHECK((v > 0.0 && v < 1.0));
  CHECK(g.gate_pv().shape() == Shape{30, 3});
}

TEST_CASE("a zero bev stream still modulates the pv stream through its gate") {
  std::mt19937_64 rng(5);
  const std::size_t cp = 4, cb = 3;
  Bgmvf g(cp, cb, 6, rng);
  // Cut the additive path of the gated bev stream.
  std::vector<Param*> ps;
  g.collect_params(ps);
  Param* proj_w = nullptr;
  for (Param* p : ps)
    if (p->name.find("bgmvf.proj") != std::string::npos && p->value.rank() == 2 &&
        p->value.dim(1) == cp + cb)
      proj_w = p;
  REQUIRE(proj_w != nullptr);
  for (std::size_t o = 0; o < proj_w->value.dim(0); ++o)
    for (std::size_t c = cp; c < cp + cb; ++c) proj_w->value.at(o, c) = 0.0;

  const Tensor f_pv = random_tensor({8, cp}, rng);
  Tensor f_bev({8, cb});
  const Tensor base = g.forward(f_pv, f_bev, Mode::eval);
  double sensitivity = 0.0;
  for (std::size_t j = 0; j < cb; ++j) {
    Tensor bumped = f_bev;
    bumped.at(0, j) = 1e-6;
    const Tensor y = g.forward(f_pv, bumped, Mode::eval);
    for (std::size_t i = 0; i < y.size(); ++i) sensitivity += std::abs(y[i] - base[i]);
  }
  CHECK(sensitivity > 1e-9);
}

TEST_CASE("points differing only in height land in distinct voxels") {
  const H3DGrid grid = small_grid();
  const std::vector<ProjectedIndex> bev{pi(2, 3), pi(2, 3)}, pv{pi(5, 1), pi(7, 4)};
  const Tensor f({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const H3DVoxels v = h3d_voxelize(f, bev, pv, grid);
  REQUIRE(v.size() == 2);
  CHECK(v.triples[0] == std::array<std::int64_t, 3>{2, 3, 1});
  CHECK(v.triples[1] == std::array<std::int64_t, 3>{2, 3, 4});
  CHECK(v.centers[0] == grid.center(v.triples[0]));
}

TEST_CASE("a single point forms one voxel holding its features") {
  const H3DGrid grid = small_grid();
  const std::vector<ProjectedIndex> bev{pi(0, 0)}, pv{pi(0, 0)};
  const Tensor f({1, 3}, {-1.0, 0.5, 2.0});
  const H3DVoxels v = h3d_voxelize(f, bev, pv, grid);
  REQUIRE(v.size() == 1);
  CHECK(v.features().values() == f.values());
  CHECK(v.centers[0][0] == doctest::Approx(0.25));
}

TEST_CASE("voxelization matches the naive triple grouping") {
  const H3DGrid grid = small_grid();
  const auto d = grid.dims();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 150;
    std::vector<ProjectedIndex> bev, pv;
    for (std::size_t i = 0; i < n; ++i) {
      bev.push_back(pi(rng() % 3, rng() % d[1]));
      pv.push_back(pi(rng() % 30, rng() % d[2]));
    }
    const Tensor f = random_tensor({n, 3}, rng);
    const H3DVoxels a = h3d_voxelize(f, bev, pv, grid);
    const H3DVoxels b = oracle::group_triples(f, bev, pv, grid);
    CHECK(a.triples == b.triples);
    CHECK(a.features().values() == b.features().values());
    CHECK(a.size() <= n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(a.features().at(a.sparse.point_cell[p], c) >= f.at(p, c));
  }
}

TEST_CASE("grid triples round-trip through linear ids") {
  const H3DGrid grid = small_grid();
  for (std::int64_t id = 0; id < grid.cell_count(); id += 7)
    CHECK(grid.linear_id(grid.triple(id)) == id);
  CHECK(grid.cell_of(grid.center({3, 1, 2})) == std::array<std::int64_t, 3>{3, 1, 2});
  CHECK_FALSE(grid.contains({-1, 0, 0}));
}

TEST_CASE("finite-difference gradients") {
  for (const char* op : {"point_encoder", "bev_input", "bgmvf"}) {
    CAPTURE(op);
    CHECK(gradcheck(op, 4).passed);
  }
}

}  // TEST_SUITE
