#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixture_io.hpp"
#include "h23d/bench.hpp"
#include "h23d/config.hpp"
#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/kitti_io.hpp"
#include "h23d/layers.hpp"
#include "h23d/model.hpp"
#include "h23d/parallel.hpp"
#include "h23d/toy.hpp"
#include "support.hpp"

using namespace h23d;
namespace fs = std::filesystem;

namespace {

const std::string kSource = H23D_SOURCE_DIR;

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("h23d_test_" + name)).string();
}

std::vector<double> all_grads(Model& m) {
  std::vector<double> g;
  for (Param* p : m.params())
    for (double v : p->value.grad()) g.push_back(v);
  return g;
}

std::vector<Box3D> tiny_gts() { return {{3.2, 0.4, -1.0, 3.9, 1.6, 1.56, 0.3}}; }

PointCloud tiny_scene(const PipelineConfig& cfg) {
  const auto gts = tiny_gts();
  return synthetic_scene(gts, 250, 150, cfg, 8);
}

void check_close(const Tensor& got, const Tensor& want, const char* what) {
  CAPTURE(what);
  REQUIRE(got.shape() == want.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
  CHECK(worst < 1e-9);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("shipped configs load") {
  const PipelineConfig toy = load_config(kSource + "/configs/toy.cfg");
  CHECK(toy.scale == "toy");
  CHECK(toy.backbone.bev_widths == std::array<std::size_t, 3>{8, 16, 32});
  CHECK(toy.backbone.blocks == 1);
  CHECK(toy.train.steps == 300);
  const PipelineConfig paper = load_config(kSource + "/configs/kitti-paper.cfg");
  CHECK(paper.scale == "paper");
  CHECK(paper.bev_grid().rows() == 352);
  CHECK(paper.bev_grid().cols() == 400);
  CHECK(paper.pv_grid().first.cell == doctest::Approx(0.33 * std::numbers::pi / 180));
  CHECK(paper.anchor_yaws()[1] == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("missing keys keep their defaults") {
  const PipelineConfig c = parse_config("schema_version: 1\nhead:\n  theta_h: 0.8\n");
  CHECK(c.head.theta_h == 0.8);
  CHECK(c.head.theta_l == 0.25);
  CHECK(c.roi.fine_grid == 6);
}

TEST_CASE("malformed configs are rejected") {
  CHECK_THROWS_AS(parse_config("schema_version: 1\nbogus: 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version: 1\nhead: {fc3: 3}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version: 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version: 1\nhead: {theta_h: 0.2}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("schema_version: 1\nhead: {fc1: abc}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("- 1\n- 2\n"), ConfigError);
  CHECK_THROWS_AS(load_config(kSource + "/configs/does-not-exist.cfg"), ConfigError);
}

TEST_CASE("config dump round-trips") {
  for (const char* name : {"toy.cfg", "kitti-paper.cfg"}) {
    const PipelineConfig c = load_config(kSource + "/configs/" + name);
    const std::string text = dump_config(c);
    CHECK(dump_config(parse_config(text)) == text);
  }
  const PipelineConfig t = test::tiny_config();
  CHECK(dump_config(parse_config(dump_config(t))) == dump_config(t));
}

TEST_CASE("kitti bin decoding") {
  CHECK(parse_kitti_bin({}).empty());
  std::vector<unsigned char> bytes(32);
  const float vals[8] = {1.0f, 2.0f, -1.5f, 0.25f, 10.0f, -3.0f, 0.5f, 2.0f};
  std::memcpy(bytes.data(), vals, 32);
  const PointCloud c = parse_kitti_bin(bytes);
  REQUIRE(c.size() == 2);
  CHECK(c.points[0].x == 1.0);
  CHECK(c.points[0].z == -1.5);
  CHECK(c.points[0].r == 0.25);
  CHECK(c.points[1].r == 1.0);
  CHECK_THROWS_AS(parse_kitti_bin(std::vector<unsigned char>(17)), FormatError);
}

TEST_CASE("kitti bin round trip is bit exact") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-50.0f, 50.0f), ur(0.0f, 1.0f);
  std::vector<unsigned char> bytes;
  for (int i = 0; i < 500; ++i) {
    const float rec[4] = {u(rng), u(rng), u(rng), ur(rng)};
    const auto* p = reinterpret_cast<const unsigned char*>(rec);
    bytes.insert(bytes.end(), p, p + 16);
  }
  CHECK(encode_kitti_bin(parse_kitti_bin(bytes)) == bytes);
  const std::string path = temp_path("scan.bin");
  write_kitti_bin(path, parse_kitti_bin(bytes));
  CHECK(encode_kitti_bin(load_kitti_bin(path)) == bytes);
  fs::remove(path);
  CHECK_THROWS_AS(load_kitti_bin(temp_path("missing.bin")), FormatError);
}

TEST_CASE("label text round trip") {
  CHECK(write_kitti_labels({}).empty());
  CHECK(parse_kitti_labels("").empty());
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-20.0, 20.0), us(0.5, 5.0), up(0.0, 1.0);
  DetectionSet d;
  for (int i = 0; i < 50; ++i) {
    Box3D b{u(rng), u(rng), u(rng), us(rng), us(rng), us(rng), normalize_angle(u(rng))};
    b.score = up(rng);
    b.label = 1;
    d.boxes.push_back(b);
  }
  const std::string text = write_kitti_labels(d);
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    std::size_t n = 0;
    for (std::string tok; f >> tok;) ++n;
    CHECK(n == kLabelFields);
    CHECK(line.rfind("Car ", 0) == 0);
  }
  const DetectionSet back = parse_kitti_labels(text);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.boxes[i].x == d.boxes[i].x);
    CHECK(back.boxes[i].h == d.boxes[i].h);
    CHECK(back.boxes[i].yaw == d.boxes[i].yaw);
    CHECK(back.boxes[i].score == d.boxes[i].score);
    CHECK(back.boxes[i].label == 1);
  }
  CHECK_THROWS_AS(parse_kitti_labels("Car 0 0\n"), FormatError);
  CHECK_THROWS_AS(parse_kitti_labels("Car 0 0 -10 0 0 0 0 1 1 x 0 0 0 0 0.5\n"), FormatError);
}

TEST_CASE("checkpoint round trip") {
  const PipelineConfig cfg = test::tiny_config();
  Model a(cfg);
  PipelineConfig other = cfg;
  other.seed = 99;
  Model b(other);
  const std::string path = temp_path("model.ckpt");
  save_checkpoint(path, a);
  load_checkpoint(path, b);
  auto pa = a.state_tensors(), pb = b.state_tensors();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.values() == pb[i]->value.values());

  PipelineConfig wider = cfg;
  wider.head.fc1 = 11;
  Model c(wider);
  CHECK_THROWS_AS(load_checkpoint(path, c), FormatError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path, b), FormatError);
  fs::remove(path);
}

TEST_CASE("empty and out-of-range clouds give no detections") {
  Model m(test::tiny_config());
  CHECK(run_forward(PointCloud{}, m).empty());
  PointCloud far;
  far.points = {{50.0, 0.0, -1.0, 0.1, 0.0}, {-5.0, 0.0, -1.0, 0.1, 0.0}};
  CHECK(run_forward(far, m).empty());
}

TEST_CASE("a timed cloud against an untimed config is a config error") {
  Model m(test::tiny_config());
  PointCloud c = test::random_cloud(50, m.config(), 1);
  c.has_time = true;
  CHECK_THROWS_AS(run_forward(c, m), ConfigError);
}

TEST_CASE("forward pass is repeatable") {
  Model m(test::tiny_config());
  const PointCloud c = tiny_scene(m.config());
  const DetectionSet a = run_forward(c, m), b = run_forward(c, m);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.boxes[i].x == b.boxes[i].x);
    CHECK(a.boxes[i].score == b.boxes[i].score);
  }
}

TEST_CASE("loss on a random init is finite and fills gradients") {
  Model m(test::tiny_config());
  const auto gts = tiny_gts();
  const LossBreakdown l = compute_loss(m, tiny_scene(m.config()), gts, nullptr, 1, true);
  CHECK(std::isfinite(l.total));
  CHECK(l.total > 0.0);
  CHECK(l.foreground_anchors >= 1);
  double norm = 0.0;
  for (double g : all_grads(m)) norm += g * g;
  CHECK(norm > 0.0);
  CHECK(std::isfinite(norm));
}

TEST_CASE("an empty training scene names the failing stage") {
  Model m(test::tiny_config());
  const auto gts = tiny_gts();
  try {
    compute_loss(m, PointCloud{}, gts, nullptr, 1, false);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "clip");
  }
}

TEST_CASE("a non-finite parameter is reported with its stage") {
  Model m(test::tiny_config());
  m.params()[0]->value[0] = std::nan("");
  const auto gts = tiny_gts();
  try {
    compute_loss(m, tiny_scene(m.config()), gts, nullptr, 1, false);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("point_encoder") != std::string::npos);
  }
}

TEST_CASE("training steps run and lower the loss") {
  PipelineConfig cfg = test::tiny_config();
  cfg.train.steps = 30;
  cfg.train.lr = 0.02;
  Model m(cfg);
  const PointCloud c = tiny_scene(cfg);
  const auto gts = tiny_gts();
  TrainState st;
  std::vector<double> losses;
  for (int i = 0; i < 30; ++i) {
    const TrainStepResult r = train_step(m, c, gts, st);
    CHECK(std::isfinite(r.loss.total));
    CHECK(r.lr > 0.0);
    losses.push_back(r.loss.total);
  }
  CHECK(st.step == 30);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("results do not depend on the thread count") {
  const PipelineConfig cfg = test::tiny_config();
  const PointCloud c = tiny_scene(cfg);
  const auto gts = tiny_gts();
  auto run = [&](int threads) {
    set_num_threads(threads);
    Model m(cfg);
    ForwardState st;
    m.extract(c, Mode::eval, st);
    const DetectionSet d = run_forward(c, m);
    compute_loss(m, c, gts, nullptr, 3, true);
    set_num_threads(1);
    std::vector<double> out = st.bev_out.values();
    for (const Box3D& b : d.boxes) out.insert(out.end(), {b.x, b.y, b.z, b.yaw, b.score});
    const auto g = all_grads(m);
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  const auto one = run(1);
  CHECK(one == run(4));
  CHECK(one == run(3));
}

TEST_CASE("every stage reproduces its recorded fixture") {
  std::ifstream f(kSource + "/tests/fixtures/stages.json");
  REQUIRE(f.good());
  const nlohmann::json j = nlohmann::json::parse(f);
  const PipelineConfig cfg = parse_config(j.at("config").get<std::string>());
  Model m(cfg);
  const GridSpec bev = cfg.bev_grid(), pv = cfg.pv_grid();

  PointCloud cloud;
  for (const auto& p : j.at("cloud")) cloud.points.push_back({p[0], p[1], p[2], p[3], 0.0});
  const PointCloud clipped = clip_range(cloud, bev, pv);
  const CloudIndices idx = index_cloud(clipped, bev, pv);
  std::vector<std::int64_t> pv_ids, bev_ids;
  std::vector<MapCoord> pv_xy, bev_xy;
  for (const auto& q : idx.pv) {
    pv_ids.push_back(pv.linear_id(q.quantized[0], q.quantized[1]));
    pv_xy.push_back({q.continuous[0], q.continuous[1]});
  }
  for (const auto& q : idx.bev) {
    bev_ids.push_back(bev.linear_id(q.quantized[0], q.quantized[1]));
    bev_xy.push_back({q.continuous[0], q.continuous[1]});
  }
  auto T = [&](const char* key) { return test::tensor_from(j.at(key)); };

  check_close(augment_input(clipped, bev, pv), T("input"), "augment");
  check_close(m.encoder().forward(T("input"), Mode::eval), T("f_raw"), "point_encoder");
  check_close(densify(scatter_max(T("f_raw"), pv_ids, pv.cell_count()), pv).values, T("pv_map"),
              "pv_scatter");
  check_close(m.pv_backbone().forward(T("pv_map"), Mode::eval), T("pv_out"), "pv_backbone");
  check_close(bilinear_gather(T("pv_out"), pv_xy), T("f_pv"), "pv_gather");
  check_close(m.bev_input().forward(T("f_raw"), T("f_pv"), Mode::eval), T("f_bev_input"),
              "bev_input");
  check_close(densify(scatter_max(T("f_bev_input"), bev_ids, bev.cell_count()), bev).values,
              T("bev_map"), "bev_scatter");
  check_close(m.bev_backbone().forward(T("bev_map"), Mode::eval), T("bev_out"), "bev_backbone");
  check_close(bilinear_gather(T("bev_out"), bev_xy), T("f_bev"), "bev_gather");
  const RpnOutput rpn = m.rpn_head().forward(T("bev_out"), Mode::eval);
  check_close(rpn.cls, T("rpn_cls"), "rpn_cls");
  check_close(rpn.reg, T("rpn_reg"), "rpn_reg");
  check_close(m.bgmvf().forward(T("f_pv"), T("f_bev"), Mode::eval), T("f_h3d"), "bgmvf");

  const H3DVoxels vox = h3d_voxelize(T("f_h3d"), idx.bev, idx.pv, m.h3d_grid());
  REQUIRE(vox.size() == j.at("voxel_triples").size());
  for (std::size_t i = 0; i < vox.size(); ++i)
    CHECK(vox.triples[i] == j.at("voxel_triples")[i].get<std::array<std::int64_t, 3>>());
  check_close(vox.features(), T("voxel_features"), "h3d_voxelize");

  const auto rois = test::boxes_from(j.at("rois"));
  const auto proposed = m.propose({T("rpn_cls"), T("rpn_reg")});
  REQUIRE(proposed.size() == rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) {
    CHECK(proposed[i].x == doctest::Approx(rois[i].x).epsilon(1e-9));
    CHECK(proposed[i].yaw == doctest::Approx(rois[i].yaw).epsilon(1e-9));
    CHECK(proposed[i].score == doctest::Approx(rois[i].score).epsilon(1e-9));
  }

  H3DVoxels recorded = vox;
  recorded.sparse.features = T("voxel_features");
  const Tensor pooled = m.roi_pool().forward(rois, recorded, cfg.seed, Mode::eval);
  check_close(pooled, T("pooled"), "hv_roi_pool");
  const Tensor flat = T("pooled").reshaped({rois.size(), pooled.size() / std::max<std::size_t>(rois.size(), 1)});
  const HeadOutput head = m.detect_head().forward(flat, Mode::eval);
  check_close(head.conf, T("head_conf"), "detect_head conf");
  check_close(head.reg, T("head_reg"), "detect_head reg");

  ForwardState st;
  st.rois = rois;
  st.head = {T("head_conf"), T("head_reg")};
  const DetectionSet det = m.detections(st);
  const auto want = test::boxes_from(j.at("detections"));
  REQUIRE(det.size() == want.size());
  for (std::size_t i = 0; i < det.size(); ++i) {
    CHECK(det.boxes[i].x == doctest::Approx(want[i].x).epsilon(1e-9));
    CHECK(det.boxes[i].score == doctest::Approx(want[i].score).epsilon(1e-9));
  }
}

TEST_CASE("gradient check registry covers every op") {
  const auto& ops = gradcheck_ops();
  for (const char* op : {"scatter_max", "bilinear_gather", "fc", "bn_train_rows", "relu",
                         "sigmoid", "conv2d", "upsample", "concat", "bgmvf", "aggregate_grid",
                         "hv_roi_pool", "detect_head", "rpn_loss", "head_loss"})
    CHECK(std::find(ops.begin(), ops.end(), op) != ops.end());
  CHECK(ops.back() == "end_to_end");
  CHECK_THROWS_AS(gradcheck("no_such_op", 1), ConfigError);
}

TEST_CASE("gradient checks are deterministic per seed") {
  for (const char* op : {"bgmvf", "hv_roi_pool"}) {
    GradcheckReport a = gradcheck(op, 11), b = gradcheck(op, 11);
    a.seconds = b.seconds = 0.0;
    CHECK(reports_to_json({a}) == reports_to_json({b}));
  }
}

TEST_CASE("end-to-end composite gradient") {
  const GradcheckReport r = gradcheck("end_to_end", 1);
  CHECK(r.passed);
  CHECK(r.max_rel_err < 1e-3);
  CHECK(r.groups.size() >= 6);
}

TEST_CASE("a perturbed backward is detected") {
  for (LayerKind k : {LayerKind::fc, LayerKind::bn, LayerKind::relu, LayerKind::sigmoid,
                      LayerKind::conv2d, LayerKind::upsample, LayerKind::dwconv2d,
                      LayerKind::deconv2d}) {
    CAPTURE(layer_kind_name(k));
    set_fault_injection(k);
    bool caught = false;
    for (const auto& op : gradcheck_ops()) {
      if (op == "end_to_end") continue;
      if (!gradcheck(op, 1, {4}).passed) {
        caught = true;
        break;
      }
    }
    set_fault_injection(std::nullopt);
    CHECK(caught);
  }
  CHECK(gradcheck("fc", 1).passed);
}

TEST_CASE("gradient check reports round-trip through json") {
  std::vector<GradcheckReport> rs{gradcheck("fc", 2), gradcheck("scatter_max", 2)};
  const std::string text = reports_to_json(rs);
  const auto back = reports_from_json(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].op == "fc");
  CHECK(back[1].max_rel_err == rs[1].max_rel_err);
  CHECK(back[0].groups.size() == rs[0].groups.size());
  CHECK(reports_to_json(back) == text);
}

TEST_CASE("benchmark report") {
  BenchOptions o;
  o.points = 3000;
  o.proposals = 8;
  o.repeats = 1;
  o.warmup = 0;
  o.scatter_points = {20000, 40000};
  const BenchReport r = run_benchmark(load_config(kSource + "/configs/toy.cfg"), o);
  for (const char* name : {"stage/point_encoder", "stage/bev_backbone", "stage/hv_roi_pool",
                           "train/backward", "train/rpn_loss", "scatter/20000", "scatter/40000",
                           "pool/hierarchical", "pool/multi_radius"})
    CHECK(r.find(name) != nullptr);
  CHECK(r.find("pool/hierarchical")->work < r.find("pool/multi_radius")->work);
  const std::string text = bench_to_json(r);
  CHECK(bench_to_json(bench_from_json(text)) == text);
}

TEST_CASE("short toy run") {
  Model m(load_config(kSource + "/configs/toy.cfg"));
  ToyOptions o;
  o.steps = 6;
  o.points_per_box = 150;
  o.clutter = 50;
  std::size_t calls = 0;
  const ToyResult r = train_toy(m, o, [&](std::size_t, const TrainStepResult&) { ++calls; });
  CHECK(calls == 6);
  CHECK(r.losses.size() == 6);
  CHECK(r.planted.size() == 2);
  CHECK(r.best_iou.size() == 2);
  CHECK(std::isfinite(r.final_loss));
}

}  // TEST_SUITE
