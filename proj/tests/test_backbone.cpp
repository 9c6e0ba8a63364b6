#include <doctest.h>

#include <cmath>
#include <random>

#include "h23d/backbone.hpp"
#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/losses.hpp"
#include "support.hpp"

using namespace h23d;
using h23d::test::random_tensor;

namespace {

BackboneConfig small() {
  BackboneConfig b;
  b.bev_widths = {4, 6, 8};
  b.blocks = 1;
  b.pv_width = 5;
  b.bev_up_width = 3;
  return b;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("pv backbone keeps the spatial size") {
  std::mt19937_64 rng(1);
  PvBackbone pv(6, small(), rng);
  const Tensor y = pv.forward(random_tensor({6, 12, 10}, rng), Mode::train);
  CHECK(y.shape() == Shape{5, 12, 10});
  CHECK(y.all_finite());
  CHECK(pv.forward(Tensor({6, 12, 10}), Mode::eval).all_finite());
}

TEST_CASE("bev backbone stage sizes and fused output") {
  const auto s = BevBackbone::stage_sizes(64, 64);
  CHECK(s[0] == std::array<std::size_t, 2>{64, 64});
  CHECK(s[1] == std::array<std::size_t, 2>{32, 32});
  CHECK(s[2] == std::array<std::size_t, 2>{16, 16});
  std::mt19937_64 rng(2);
  BevBackbone bev(4, small(), rng);
  const Tensor y = bev.forward(random_tensor({4, 64, 64}, rng), Mode::train);
  CHECK(y.shape() == Shape{9, 64, 64});
  CHECK(y.all_finite());
  CHECK(bev.forward(Tensor({4, 64, 64}), Mode::eval).all_finite());
}

TEST_CASE("bev input sizes must be divisible by four") {
  CHECK_THROWS_AS(BevBackbone::validate_input(62, 64), ConfigError);
  CHECK_THROWS_AS(BevBackbone::validate_input(64, 30), ConfigError);
  CHECK_NOTHROW(BevBackbone::validate_input(352, 400));
}

TEST_CASE("wider channels leave spatial shapes unchanged") {
  std::mt19937_64 rng(3);
  BackboneConfig wide = small();
  wide.bev_widths = {8, 12, 16};
  wide.bev_up_width = 6;
  wide.pv_width = 10;
  BevBackbone a(4, small(), rng), b(4, wide, rng);
  const Tensor x = random_tensor({4, 16, 20}, rng);
  CHECK(a.forward(x, Mode::train).shape()[1] == b.forward(x, Mode::train).shape()[1]);
  CHECK(b.forward(x, Mode::train).shape() == Shape{18, 16, 20});
  PvBackbone pa(4, small(), rng), pb(4, wide, rng);
  CHECK(pb.forward(x, Mode::train).shape() == Shape{10, 16, 20});
}

TEST_CASE("rpn head shapes and prior") {
  std::mt19937_64 rng(4);
  RpnHead head(9, 2, 1, rng);
  const RpnOutput o = head.forward(random_tensor({9, 8, 8}, rng), Mode::train);
  CHECK(o.cls.shape() == Shape{2, 8, 8});
  CHECK(o.reg.shape() == Shape{14, 8, 8});
  CHECK(o.cls.all_finite());
  const RpnOutput z = head.forward(Tensor({9, 8, 8}), Mode::eval);
  CHECK(sigmoid(z.cls[0]) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("invalid backbone configs are rejected") {
  BackboneConfig b = small();
  b.blocks = 0;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  b = small();
  b.pv_width = 0;
  CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("finite-difference gradients") {
  for (const char* op : {"pv_backbone", "bev_backbone", "rpn_head"}) {
    CAPTURE(op);
    CHECK(gradcheck(op, 3).passed);
  }
}

}  // TEST_SUITE
