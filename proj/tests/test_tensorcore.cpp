#include <doctest.h>

#include <cmath>
#include <random>

#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/layers.hpp"
#include "h23d/optim.hpp"
#include "support.hpp"

using namespace h23d;
using h23d::test::random_tensor;

namespace {

Param scalar_param(double v) {
  Param p;
  p.name = "x";
  p.value = Tensor({1}, {v});
  return p;
}

}  // namespace

TEST_SUITE("tensorcore") {

TEST_CASE("relu and sigmoid values") {
  std::mt19937_64 rng(1);
  Layer relu(LayerSpec::relu(), "r", rng);
  CHECK(relu.forward(Tensor({1, 3}, {-1.0, 0.0, 2.0}), Mode::train).values() ==
        std::vector<double>{0.0, 0.0, 2.0});
  const Tensor g = relu.backward(Tensor({1, 3}, {5.0, 5.0, 5.0}));
  CHECK(g[0] == 0.0);
  CHECK(g[2] == 5.0);
  Layer sig(LayerSpec::sigmoid(), "s", rng);
  CHECK(sig.forward(Tensor({1, 1}, {0.0}), Mode::train)[0] == 0.5);
}

TEST_CASE("fully connected with identity weights") {
  std::mt19937_64 rng(1);
  Layer fc(LayerSpec::fc(3, 3), "fc", rng);
  auto& w = fc.params().trainable[0].value;
  w.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  fc.params().trainable[1].value.fill(0.5);
  const Tensor y = fc.forward(Tensor({1, 3}, {1.0, -2.0, 3.0}), Mode::train);
  CHECK(y.values() == std::vector<double>{1.5, -1.5, 3.5});
}

TEST_CASE("1x1 convolution equals the fully connected layer per pixel") {
  std::mt19937_64 rng(2);
  Layer conv(LayerSpec::conv2d(3, 4, 1), "c", rng);
  Layer fc(LayerSpec::fc(3, 4), "f", rng);
  fc.params().trainable[0].value.values() = conv.params().trainable[0].value.values();
  fc.params().trainable[1].value.values() = conv.params().trainable[1].value.values();
  const Tensor map = random_tensor({3, 5, 6}, rng);
  Tensor rows({30, 3});
  for (std::size_t p = 0; p < 30; ++p)
    for (std::size_t c = 0; c < 3; ++c) rows.at(p, c) = map[c * 30 + p];
  const Tensor ym = conv.forward(map, Mode::train), yr = fc.forward(rows, Mode::train);
  for (std::size_t p = 0; p < 30; ++p)
    for (std::size_t o = 0; o < 4; ++o) CHECK(ym[o * 30 + p] == doctest::Approx(yr.at(p, o)).epsilon(1e-14));

  const Tensor gm = random_tensor({4, 5, 6}, rng);
  Tensor gr({30, 4});
  for (std::size_t p = 0; p < 30; ++p)
    for (std::size_t o = 0; o < 4; ++o) gr.at(p, o) = gm[o * 30 + p];
  const Tensor dm = conv.backward(gm), dr = fc.backward(gr);
  for (std::size_t p = 0; p < 30; ++p)
    for (std::size_t c = 0; c < 3; ++c) CHECK(dm[c * 30 + p] == doctest::Approx(dr.at(p, c)).epsilon(1e-13));
  const auto wc = conv.params().trainable[0].value.grad();
  const auto wf = fc.params().trainable[0].value.grad();
  for (std::size_t i = 0; i < wc.size(); ++i) CHECK(wc[i] == doctest::Approx(wf[i]).epsilon(1e-13));
}

TEST_CASE("stride-2 convolution halves the map") {
  std::mt19937_64 rng(3);
  Layer conv(LayerSpec::conv2d(2, 3, 3, 2), "c", rng);
  CHECK(conv.forward(random_tensor({2, 8, 6}, rng), Mode::train).shape() == Shape{3, 4, 3});
  Layer up(LayerSpec::upsample(2), "u", rng);
  CHECK(up.forward(random_tensor({2, 3, 4}, rng), Mode::train).shape() == Shape{2, 6, 8});
  Layer de(LayerSpec::deconv2d(2, 5, 4), "d", rng);
  CHECK(de.forward(random_tensor({2, 3, 4}, rng), Mode::train).shape() == Shape{5, 12, 16});
}

TEST_CASE("batch norm training output is standardised") {
  std::mt19937_64 rng(4);
  Layer bn(LayerSpec::bn(3), "bn", rng);
  const Tensor x = random_tensor({64, 3}, rng, -4.0, 4.0);
  const Tensor y = bn.forward(x, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mean += y.at(i, c);
    mean /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (y.at(i, c) - mean) * (y.at(i, c) - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("batch norm eval uses the running buffers") {
  std::mt19937_64 rng(5);
  Layer bn(LayerSpec::bn(2, 0.5), "bn", rng);
  const Tensor x = random_tensor({32, 2}, rng, 1.0, 3.0);
  bn.forward(x, Mode::train);
  const auto& mean = bn.params().buffers[0].value;
  CHECK(mean[0] > 0.5);
  const Tensor y = bn.forward(Tensor({1, 2}, {mean[0], mean[1]}), Mode::eval);
  CHECK(std::abs(y[0] - bn.params().trainable[1].value[0]) < 1e-12);
}

TEST_CASE("map batch norm normalises over the spatial axes") {
  std::mt19937_64 rng(6);
  Layer bn(LayerSpec::bn(2), "bn", rng);
  const Tensor y = bn.forward(random_tensor({2, 4, 5}, rng, 0.0, 9.0), Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 20; ++i) mean += y[c * 20 + i];
    CHECK(std::abs(mean / 20) < 1e-6);
  }
}

TEST_CASE("backward without a forward is rejected") {
  std::mt19937_64 rng(7);
  Layer fc(LayerSpec::fc(2, 2), "fc", rng);
  CHECK_THROWS_AS(fc.backward(Tensor({1, 2})), ShapeError);
}

TEST_CASE("backward after a parameter update is rejected") {
  std::mt19937_64 rng(7);
  Layer fc(LayerSpec::fc(2, 2), "fc", rng);
  fc.forward(Tensor({1, 2}, {1.0, 1.0}), Mode::train);
  std::vector<Param*> ps;
  fc.collect_params(ps);
  OptimizerState st;
  for (Param* p : ps) p->value.grad()[0] = 1.0;
  sgd_step(ps, {0.1, 0.0}, st);
  CHECK_THROWS_AS(fc.backward(Tensor({1, 2})), ShapeError);
}

TEST_CASE("wrong input widths are rejected") {
  std::mt19937_64 rng(8);
  Layer fc(LayerSpec::fc(3, 2), "fc", rng);
  CHECK_THROWS_AS(fc.forward(Tensor({2, 4}), Mode::train), ShapeError);
  Layer conv(LayerSpec::conv2d(3, 2, 3), "c", rng);
  CHECK_THROWS_AS(conv.forward(Tensor({2, 4, 4}), Mode::train), ShapeError);
}

TEST_CASE("finite check hook rejects non-finite output") {
  std::mt19937_64 rng(9);
  Layer relu(LayerSpec::relu(), "r", rng);
  set_check_finite(true);
  CHECK_THROWS_AS(relu.forward(Tensor({1, 1}, {std::nan("")}), Mode::train), NumericalError);
  set_check_finite(false);
  CHECK_NOTHROW(relu.forward(Tensor({1, 1}, {std::nan("")}), Mode::train));
}

TEST_CASE("concat and its backward split the channels") {
  const Tensor a({2, 1}, {1.0, 2.0}), b({2, 2}, {3.0, 4.0, 5.0, 6.0});
  const Tensor* parts[] = {&a, &b};
  const Tensor c = concat(parts);
  CHECK(c.values() == std::vector<double>{1.0, 3.0, 4.0, 2.0, 5.0, 6.0});
  const std::size_t widths[] = {1, 2};
  const auto back = concat_backward(c, widths);
  CHECK(back[0].values() == a.values());
  CHECK(back[1].values() == b.values());
}

TEST_CASE("sgd step and zero gradient") {
  Param p = scalar_param(1.0);
  Param* ps[] = {&p};
  OptimizerState st;
  p.value.grad()[0] = 2.0;
  sgd_step(ps, {0.1, 0.0}, st);
  CHECK(p.value[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(p.version == 1);

  Param q = scalar_param(3.0);
  Param* qs[] = {&q};
  OptimizerState sq;
  q.value.grad();
  for (int i = 0; i < 5; ++i) sgd_step(qs, {0.1, 0.9}, sq);
  CHECK(q.value[0] == 3.0);
}

TEST_CASE("adam converges on a quadratic bowl") {
  Param p = scalar_param(1.0);
  Param* ps[] = {&p};
  OptimizerState st;
  OneCycleSchedule sched{0.1, 200};
  for (std::size_t s = 0; s < 200; ++s) {
    zero_grads(ps);
    p.value.grad()[0] = 2.0 * p.value[0];
    AdamHyper h;
    h.lr = sched.lr(s);
    adam_step(ps, h, st);
  }
  CHECK(std::abs(p.value[0]) < 1e-3);
}

TEST_CASE("optimizer trajectories are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(10);
    Layer fc(LayerSpec::fc(4, 3), "fc", rng);
    std::vector<Param*> ps;
    fc.collect_params(ps);
    OptimizerState st;
    const Tensor x = random_tensor({8, 4}, rng);
    for (int s = 0; s < 5; ++s) {
      zero_grads(ps);
      fc.backward(fc.forward(x, Mode::train));
      adam_step(ps, AdamHyper{}, st);
    }
    return fc.params().trainable[0].value.values();
  };
  CHECK(run() == run());
}

TEST_CASE("one-cycle schedule endpoints") {
  OneCycleSchedule s{0.01, 100, 0.4, 10.0, 1e4};
  CHECK(s.lr(0) == doctest::Approx(1e-3));
  CHECK(s.lr(40) == doctest::Approx(0.01));
  CHECK(s.lr(100) == doctest::Approx(1e-7));
  for (std::size_t i = 1; i <= 40; ++i) CHECK(s.lr(i) >= s.lr(i - 1));
  for (std::size_t i = 41; i <= 100; ++i) CHECK(s.lr(i) <= s.lr(i - 1));
}

TEST_CASE("finite-difference gradients of every layer kind") {
  for (const char* op : {"fc", "bn_train_rows", "bn_train_map", "bn_eval", "relu", "sigmoid",
                         "conv2d", "conv2d_stride2", "dwconv2d", "deconv2d", "upsample", "concat",
                         "mul"}) {
    CAPTURE(op);
    const GradcheckReport r = gradcheck(op, 2);
    CHECK(r.passed);
    CHECK(r.max_rel_err < 1e-5);
  }
}

}  // TEST_SUITE
