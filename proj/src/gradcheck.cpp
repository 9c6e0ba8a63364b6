#include "h23d/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include <json.hpp>

#include "h23d/backbone.hpp"
#include "h23d/error.hpp"
#include "h23d/fusion.hpp"
#include "h23d/layers.hpp"
#include "h23d/losses.hpp"
#include "h23d/model.hpp"
#include "h23d/roi.hpp"
#include "h23d/scatter.hpp"

namespace h23d {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kCompositeTolerance = 1e-3;
constexpr double kKinkMatch = 2e-3;

struct Group {
  std::string name;
  std::vector<Tensor*> tensors;
};

struct Case {
  std::vector<Group> groups;
  std::function<double()> loss;
  std::function<void()> run_backward;  // forward + backward; fills every grad()
  double tol = kOpTolerance;
  std::shared_ptr<void> state;
};

Tensor randn(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "gradcheck projection");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void set_grad(Tensor& t, const Tensor& g) {
  require_same_shape(t, g, "gradcheck input grad");
  auto dst = t.grad();
  std::copy(g.values().begin(), g.values().end(), dst.begin());
}

std::vector<Group> param_groups(const std::vector<Param*>& ps) {
  std::vector<Group> gs;
  for (Param* p : ps) gs.push_back({p->name, {&p->value}});
  return gs;
}

// A module-like object mapping one input tensor to one output tensor.
template <typename Fwd, typename Bwd>
Case unary_case(std::shared_ptr<void> keep, Tensor* input, std::vector<Param*> params,
                std::mt19937_64& rng, Fwd fwd, Bwd bwd) {
  auto w = std::make_shared<Tensor>();
  *w = fwd(Mode::train);
  *w = randn(w->shape(), rng);
  Case c;
  c.state = keep;
  if (input) c.groups.push_back({"input", {input}});
  for (auto& g : param_groups(params)) c.groups.push_back(g);
  c.loss = [=]() mutable { return dot(fwd(Mode::train), *w); };
  c.run_backward = [=]() mutable {
    fwd(Mode::train);
    Tensor gi = bwd(*w);
    if (input) set_grad(*input, gi);
  };
  return c;
}

Case layer_case(const LayerSpec& spec, Shape in_shape, std::mt19937_64& rng,
                Mode mode = Mode::train) {
  struct S {
    Layer layer;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->layer = Layer(spec, "layer", rng);
  s->x = randn(std::move(in_shape), rng);
  for (Param& p : s->layer.params().trainable)
    if (p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with("bias"))
      for (double& v : p.value.values()) v += 0.3 * std::normal_distribution<double>()(rng);
  if (mode == Mode::eval)
    for (Param& b : s->layer.params().buffers)
      for (double& v : b.value.values())
        v = b.name.ends_with("var") ? 0.5 + std::uniform_real_distribution<double>()(rng)
                                    : std::normal_distribution<double>()(rng);
  std::vector<Param*> ps;
  s->layer.collect_params(ps);
  return unary_case(
      s, &s->x, ps, rng, [s, mode](Mode) { return s->layer.forward(s->x, mode); },
      [s](const Tensor& g) { return s->layer.backward(g); });
}

Case concat_case(std::mt19937_64& rng) {
  struct S {
    Tensor a, b;
  };
  auto s = std::make_shared<S>();
  s->a = randn({3, 4, 5}, rng);
  s->b = randn({2, 4, 5}, rng);
  auto w = std::make_shared<Tensor>(randn({5, 4, 5}, rng));
  Case c;
  c.state = s;
  c.groups = {{"a", {&s->a}}, {"b", {&s->b}}};
  c.loss = [s, w] {
    const Tensor* parts[2] = {&s->a, &s->b};
    return dot(concat(parts), *w);
  };
  c.run_backward = [s, w] {
    const std::size_t widths[2] = {3, 2};
    auto g = concat_backward(*w, widths);
    set_grad(s->a, g[0]);
    set_grad(s->b, g[1]);
  };
  return c;
}

Case mul_case(std::mt19937_64& rng) {
  struct S {
    Tensor a, b;
  };
  auto s = std::make_shared<S>();
  s->a = randn({6, 4}, rng);
  s->b = randn({6, 4}, rng);
  auto w = std::make_shared<Tensor>(randn({6, 4}, rng));
  Case c;
  c.state = s;
  c.groups = {{"a", {&s->a}}, {"b", {&s->b}}};
  c.loss = [s, w] { return dot(mul(s->a, s->b), *w); };
  c.run_backward = [s, w] {
    auto [ga, gb] = mul_backward(*w, s->a, s->b);
    set_grad(s->a, ga);
    set_grad(s->b, gb);
  };
  return c;
}

Case scatter_case(std::mt19937_64& rng) {
  struct S {
    Tensor x;
    std::vector<std::int64_t> ids;
  };
  auto s = std::make_shared<S>();
  s->x = randn({40, 5}, rng);
  std::uniform_int_distribution<std::int64_t> cell(0, 11);
  for (int i = 0; i < 40; ++i) s->ids.push_back(cell(rng));
  auto w = std::make_shared<Tensor>(randn(scatter_max(s->x, s->ids, 12).features.shape(), rng));
  Case c;
  c.state = s;
  c.groups = {{"features", {&s->x}}};
  c.loss = [s, w] { return dot(scatter_max(s->x, s->ids, 12).features, *w); };
  c.run_backward = [s, w] {
    const SparseGrid g = scatter_max(s->x, s->ids, 12);
    set_grad(s->x, scatter_max_backward(*w, g));
  };
  return c;
}

Case densify_case(std::mt19937_64& rng) {
  struct S {
    Tensor x;
    std::vector<std::int64_t> ids;
  };
  auto s = std::make_shared<S>();
  s->x = randn({30, 3}, rng);
  std::uniform_int_distribution<std::int64_t> cell(0, 19);
  for (int i = 0; i < 30; ++i) s->ids.push_back(cell(rng));
  auto w = std::make_shared<Tensor>(randn({3, 4, 5}, rng));
  Case c;
  c.state = s;
  c.groups = {{"features", {&s->x}}};
  c.loss = [s, w] { return dot(densify(scatter_max(s->x, s->ids, 20), 4, 5).values, *w); };
  c.run_backward = [s, w] {
    const SparseGrid g = scatter_max(s->x, s->ids, 20);
    set_grad(s->x, scatter_max_backward(densify_backward(*w, g), g));
  };
  return c;
}

Case gather_case(std::mt19937_64& rng) {
  struct S {
    Tensor map;
    std::vector<MapCoord> coords;
  };
  auto s = std::make_shared<S>();
  s->map = randn({3, 6, 7}, rng);
  std::uniform_real_distribution<double> r(0.0, 6.0), q(0.0, 7.0);
  for (int i = 0; i < 25; ++i) s->coords.push_back({r(rng), q(rng)});
  auto w = std::make_shared<Tensor>(randn({25, 3}, rng));
  Case c;
  c.state = s;
  c.groups = {{"map", {&s->map}}};
  c.loss = [s, w] { return dot(bilinear_gather(s->map, s->coords), *w); };
  c.run_backward = [s, w] {
    set_grad(s->map, bilinear_gather_backward(*w, s->coords, s->map.shape()));
  };
  return c;
}

BackboneConfig tiny_backbone() {
  BackboneConfig b;
  b.bev_widths = {4, 5, 6};
  b.blocks = 1;
  b.pv_width = 4;
  b.pv_expand = 2;
  b.bev_up_width = 3;
  return b;
}

Case pv_backbone_case(std::mt19937_64& rng) {
  struct S {
    PvBackbone net;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->net = PvBackbone(3, tiny_backbone(), rng);
  s->x = randn({3, 7, 5}, rng);
  std::vector<Param*> ps;
  s->net.collect_params(ps);
  return unary_case(
      s, &s->x, ps, rng, [s](Mode m) { return s->net.forward(s->x, m); },
      [s](const Tensor& g) { return s->net.backward(g); });
}

Case bev_backbone_case(std::mt19937_64& rng) {
  struct S {
    BevBackbone net;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->net = BevBackbone(3, tiny_backbone(), rng);
  s->x = randn({3, 8, 8}, rng);
  std::vector<Param*> ps;
  s->net.collect_params(ps);
  return unary_case(
      s, &s->x, ps, rng, [s](Mode m) { return s->net.forward(s->x, m); },
      [s](const Tensor& g) { return s->net.backward(g); });
}

Case rpn_head_case(std::mt19937_64& rng) {
  struct S {
    RpnHead head;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->head = RpnHead(5, 2, 1, rng);
  s->x = randn({5, 4, 4}, rng);
  auto wc = std::make_shared<Tensor>(randn({2, 4, 4}, rng));
  auto wr = std::make_shared<Tensor>(randn({14, 4, 4}, rng));
  Case c;
  c.state = s;
  c.groups.push_back({"input", {&s->x}});
  std::vector<Param*> ps;
  s->head.collect_params(ps);
  for (auto& g : param_groups(ps)) c.groups.push_back(g);
  c.loss = [s, wc, wr] {
    auto o = s->head.forward(s->x, Mode::train);
    return dot(o.cls, *wc) + dot(o.reg, *wr);
  };
  c.run_backward = [s, wc, wr] {
    s->head.forward(s->x, Mode::train);
    set_grad(s->x, s->head.backward(*wc, *wr));
  };
  return c;
}

Case point_encoder_case(std::mt19937_64& rng) {
  struct S {
    PointEncoder enc;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->enc = PointEncoder(9, 6, 5, rng);
  s->x = randn({12, 9}, rng);
  std::vector<Param*> ps;
  s->enc.collect_params(ps);
  return unary_case(
      s, &s->x, ps, rng, [s](Mode m) { return s->enc.forward(s->x, m); },
      [s](const Tensor& g) { return s->enc.backward(g); });
}

Case bev_input_case(std::mt19937_64& rng) {
  struct S {
    BevInputEncoder enc;
    Tensor a, b;
  };
  auto s = std::make_shared<S>();
  s->enc = BevInputEncoder(4, 3, 5, rng);
  s->a = randn({10, 4}, rng);
  s->b = randn({10, 3}, rng);
  auto w = std::make_shared<Tensor>(randn({10, 5}, rng));
  Case c;
  c.state = s;
  c.groups = {{"f_raw", {&s->a}}, {"f_pv", {&s->b}}};
  std::vector<Param*> ps;
  s->enc.collect_params(ps);
  for (auto& g : param_groups(ps)) c.groups.push_back(g);
  c.loss = [s, w] { return dot(s->enc.forward(s->a, s->b, Mode::train), *w); };
  c.run_backward = [s, w] {
    s->enc.forward(s->a, s->b, Mode::train);
    auto [ga, gb] = s->enc.backward(*w);
    set_grad(s->a, ga);
    set_grad(s->b, gb);
  };
  return c;
}

Case bgmvf_case(std::mt19937_64& rng) {
  struct S {
    Bgmvf block;
    Tensor pv, bev;
  };
  auto s = std::make_shared<S>();
  s->block = Bgmvf(4, 5, 6, rng);
  s->pv = randn({10, 4}, rng);
  s->bev = randn({10, 5}, rng);
  auto w = std::make_shared<Tensor>(randn({10, 6}, rng));
  Case c;
  c.state = s;
  c.groups = {{"f_pv", {&s->pv}}, {"f_bev", {&s->bev}}};
  std::vector<Param*> ps;
  s->block.collect_params(ps);
  for (auto& g : param_groups(ps)) c.groups.push_back(g);
  c.loss = [s, w] { return dot(s->block.forward(s->pv, s->bev, Mode::train), *w); };
  c.run_backward = [s, w] {
    s->block.forward(s->pv, s->bev, Mode::train);
    auto [gp, gb] = s->block.backward(*w);
    set_grad(s->pv, gp);
    set_grad(s->bev, gb);
  };
  return c;
}

// Random sparse voxels on a small grid.
H3DVoxels random_voxels(std::size_t channels, std::size_t count, std::mt19937_64& rng) {
  H3DGrid grid{{0.0, 3.2, 0.2}, {-1.6, 1.6, 0.2}, {-1.0, 1.0, 0.1}};
  std::uniform_real_distribution<double> ux(0.0, 3.2), uy(-1.6, 1.6), uz(-1.0, 1.0);
  std::vector<ProjectedIndex> bev(count), pv(count);
  for (std::size_t n = 0; n < count; ++n) {
    bev[n] = project(ux(rng), uy(rng), {grid.x, grid.y});
    pv[n] = project(0.0, uz(rng), {{-1.0, 1.0, 1.0}, grid.z});
  }
  return h3d_voxelize(randn({count, channels}, rng), bev, pv, grid);
}

Case aggregate_case(std::mt19937_64& rng) {
  struct S {
    H3DVoxels vox;
    std::vector<QueryResult> queries;
    GridAggregator agg;
  };
  auto s = std::make_shared<S>();
  s->vox = random_voxels(5, 60, rng);
  const VoxelLookup lookup(s->vox);
  std::uniform_real_distribution<double> ux(0.4, 2.8), uy(-1.2, 1.2), uz(-0.6, 0.6);
  for (int q = 0; q < 5; ++q)
    s->queries.push_back(voxel_query({ux(rng), uy(rng), uz(rng)}, lookup, 4, 16, 100 + q));
  s->agg = GridAggregator(5, 6, "agg", rng);
  std::vector<Param*> ps;
  s->agg.collect_params(ps);
  return unary_case(
      s, &s->vox.sparse.features, ps, rng,
      [s](Mode m) { return s->agg.forward(s->queries, s->vox.sparse.features, m); },
      [s](const Tensor& g) { return s->agg.backward(g); });
}

Case hv_pool_case(std::mt19937_64& rng) {
  struct S {
    H3DVoxels vox;
    std::vector<Box3D> rois;
    HvRoiPool pool;
  };
  auto s = std::make_shared<S>();
  s->vox = random_voxels(4, 80, rng);
  Box3D a;
  a.x = 1.6;
  a.y = 0.0;
  a.z = 0.0;
  a.l = 1.8;
  a.w = 1.2;
  a.h = 0.9;
  a.yaw = 0.4;
  Box3D b = a;
  b.x = 2.1;
  b.yaw = -1.0;
  s->rois = {a, b};
  RoiPoolConfig rc;
  rc.coarse_channels = 3;
  rc.fine_channels = 2;
  s->pool = HvRoiPool(4, rc, rng);
  std::vector<Param*> ps;
  s->pool.collect_params(ps);
  return unary_case(
      s, &s->vox.sparse.features, ps, rng,
      [s](Mode m) { return s->pool.forward(s->rois, s->vox, 5, m); },
      [s](const Tensor& g) { return s->pool.backward(g); });
}

Case detect_head_case(std::mt19937_64& rng) {
  struct S {
    DetectHead head;
    Tensor x;
  };
  auto s = std::make_shared<S>();
  s->head = DetectHead(20, 8, 6, rng);
  s->x = randn({6, 20}, rng);
  auto wc = std::make_shared<Tensor>(randn({6, 1}, rng));
  auto wr = std::make_shared<Tensor>(randn({6, 7}, rng));
  Case c;
  c.state = s;
  c.groups.push_back({"input", {&s->x}});
  std::vector<Param*> ps;
  s->head.collect_params(ps);
  for (auto& g : param_groups(ps)) c.groups.push_back(g);
  c.loss = [s, wc, wr] {
    auto o = s->head.forward(s->x, Mode::train);
    return dot(o.conf, *wc) + dot(o.reg, *wr);
  };
  c.run_backward = [s, wc, wr] {
    s->head.forward(s->x, Mode::train);
    set_grad(s->x, s->head.backward(*wc, *wr));
  };
  return c;
}

std::vector<BoxResidual> to_residuals(const Tensor& t) {
  std::vector<BoxResidual> r(t.dim(0));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < 7; ++j) r[i][j] = t.at(i, j);
  return r;
}

Tensor from_residuals(const std::vector<BoxResidual>& r) {
  Tensor t({r.size(), 7});
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < 7; ++j) t.at(i, j) = r[i][j];
  return t;
}

Case rpn_loss_case(std::mt19937_64& rng) {
  struct S {
    Tensor logits, reg;
    TargetAssignment ta;
  };
  auto s = std::make_shared<S>();
  const std::size_t n = 24, k = 2;
  s->logits = randn({n * k}, rng, 2.0);
  s->reg = randn({n, 7}, rng, 1.5);
  std::uniform_int_distribution<int> lab(-1, 2);
  s->ta.labels.resize(n);
  s->ta.targets.resize(n);
  s->ta.matched_gt.assign(n, -1);
  for (std::size_t a = 0; a < n; ++a) {
    s->ta.labels[a] = lab(rng);
    for (double& v : s->ta.targets[a]) v = std::normal_distribution<double>(0.0, 1.5)(rng);
    if (s->ta.labels[a] >= 1) ++s->ta.num_foreground;
  }
  Case c;
  c.state = s;
  c.groups = {{"cls_logits", {&s->logits}}, {"box_residuals", {&s->reg}}};
  c.loss = [s, k] {
    return rpn_loss(s->logits.values(), k, to_residuals(s->reg), s->ta, {}).total;
  };
  c.run_backward = [s, k] {
    const RpnLoss l = rpn_loss(s->logits.values(), k, to_residuals(s->reg), s->ta, {});
    set_grad(s->logits, Tensor({l.grad_cls.size()}, l.grad_cls));
    set_grad(s->reg, from_residuals(l.grad_reg));
  };
  return c;
}

Case head_loss_case(std::mt19937_64& rng) {
  struct S {
    Tensor conf, reg;
    HeadTargets t;
  };
  auto s = std::make_shared<S>();
  const std::size_t n = 16;
  s->conf = randn({n}, rng, 2.0);
  s->reg = randn({n, 7}, rng, 1.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double iou = u(rng);
    s->t.iou.push_back(iou);
    s->t.conf.push_back(confidence_target(iou, 0.25, 0.75));
    BoxResidual r;
    for (double& v : r) v = std::normal_distribution<double>(0.0, 1.5)(rng);
    s->t.reg.push_back(r);
    s->t.reg_mask.push_back(iou >= 0.55 ? 1 : 0);
  }
  Case c;
  c.state = s;
  c.groups = {{"conf_logits", {&s->conf}}, {"box_residuals", {&s->reg}}};
  c.loss = [s] { return head_loss(s->conf.values(), to_residuals(s->reg), s->t).total; };
  c.run_backward = [s] {
    const HeadLoss l = head_loss(s->conf.values(), to_residuals(s->reg), s->t);
    set_grad(s->conf, Tensor({l.grad_conf.size()}, l.grad_conf));
    set_grad(s->reg, from_residuals(l.grad_reg));
  };
  return c;
}

PipelineConfig composite_config() {
  PipelineConfig c;
  c.scale = "gradcheck";
  c.seed = 3;
  c.bev_x = {0.0, 6.4, 0.2};
  c.bev_y = {-3.2, 3.2, 0.2};
  c.pv_phi_deg = {-90.0, 90.0, 3.0};
  c.pv_z = {-2.6, 0.6, 0.1};
  c.fusion = {6, 6, 6, 6};
  c.backbone = tiny_backbone();
  c.roi.coarse_channels = 3;
  c.roi.fine_channels = 3;
  c.head.fc1 = 10;
  c.head.fc2 = 8;
  c.rpn.pre_nms_top_k = 256;
  c.rpn.max_proposals = 16;
  c.train.roi_samples = 4;
  return c;
}

Case end_to_end_case(std::mt19937_64& rng) {
  struct S {
    std::unique_ptr<Model> model;
    PointCloud cloud;
    std::vector<Box3D> gts;
    std::vector<Box3D> rois;
  };
  auto s = std::make_shared<S>();
  const PipelineConfig cfg = composite_config();
  s->model = std::make_unique<Model>(cfg);
  Box3D g;
  g.x = 3.2;
  g.y = 0.4;
  g.z = -1.0;
  g.l = 3.9;
  g.w = 1.6;
  g.h = 1.56;
  g.yaw = 0.3;
  s->gts = {g};
  s->cloud = synthetic_scene(s->gts, 250, 150, cfg, rng());
  Box3D j = g;
  j.x += 0.3;
  j.y -= 0.2;
  j.yaw += 0.15;
  Box3D far = g;
  far.x = 1.5;
  far.y = -2.0;
  far.yaw = 1.4;
  s->rois = {g, j, far};
  Case c;
  c.state = s;
  c.tol = kCompositeTolerance;
  Model& m = *s->model;
  auto add = [&](const char* name, auto& module) {
    std::vector<Param*> ps;
    module.collect_params(ps);
    Group grp{name, {}};
    for (Param* p : ps) grp.tensors.push_back(&p->value);
    c.groups.push_back(grp);
  };
  add("point_encoder", m.encoder());
  add("pv_backbone", m.pv_backbone());
  add("bev_input", m.bev_input());
  add("bev_backbone", m.bev_backbone());
  add("rpn_head", m.rpn_head());
  add("bgmvf", m.bgmvf());
  add("hv_roi_pool", m.roi_pool());
  add("detect_head", m.detect_head());
  c.loss = [s] {
    return compute_loss(*s->model, s->cloud, s->gts, &s->rois, 9, false).total;
  };
  c.run_backward = [s] { compute_loss(*s->model, s->cloud, s->gts, &s->rois, 9, true); };
  return c;
}

Case make_case(const std::string& op, std::mt19937_64& rng) {
  if (op == "scatter_max") return scatter_case(rng);
  if (op == "densify") return densify_case(rng);
  if (op == "bilinear_gather") return gather_case(rng);
  if (op == "fc") return layer_case(LayerSpec::fc(5, 4), {6, 5}, rng);
  if (op == "bn_train_rows") return layer_case(LayerSpec::bn(4), {8, 4}, rng);
  if (op == "bn_train_map") return layer_case(LayerSpec::bn(3), {3, 4, 5}, rng);
  if (op == "bn_eval") return layer_case(LayerSpec::bn(4), {8, 4}, rng, Mode::eval);
  if (op == "relu") return layer_case(LayerSpec::relu(), {6, 5}, rng);
  if (op == "sigmoid") return layer_case(LayerSpec::sigmoid(), {6, 5}, rng);
  if (op == "conv2d") return layer_case(LayerSpec::conv2d(3, 4, 3, 1), {3, 6, 5}, rng);
  if (op == "conv2d_stride2") return layer_case(LayerSpec::conv2d(3, 2, 3, 2), {3, 6, 7}, rng);
  if (op == "dwconv2d") return layer_case(LayerSpec::dwconv2d(3, 3), {3, 5, 6}, rng);
  if (op == "deconv2d") return layer_case(LayerSpec::deconv2d(3, 2, 2), {3, 3, 4}, rng);
  if (op == "upsample") return layer_case(LayerSpec::upsample(2), {2, 3, 4}, rng);
  if (op == "concat") return concat_case(rng);
  if (op == "mul") return mul_case(rng);
  if (op == "point_encoder") return point_encoder_case(rng);
  if (op == "pv_backbone") return pv_backbone_case(rng);
  if (op == "bev_input") return bev_input_case(rng);
  if (op == "bev_backbone") return bev_backbone_case(rng);
  if (op == "rpn_head") return rpn_head_case(rng);
  if (op == "bgmvf") return bgmvf_case(rng);
  if (op == "aggregate_grid") return aggregate_case(rng);
  if (op == "hv_roi_pool") return hv_pool_case(rng);
  if (op == "detect_head") return detect_head_case(rng);
  if (op == "rpn_loss") return rpn_loss_case(rng);
  if (op == "head_loss") return head_loss_case(rng);
  if (op == "end_to_end") return end_to_end_case(rng);
  throw ConfigError("gradcheck: unknown op '" + op + "'");
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
  return h;
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> ops = {
      "scatter_max",   "densify",       "bilinear_gather", "fc",           "bn_train_rows",
      "bn_train_map",  "bn_eval",       "relu",            "sigmoid",      "conv2d",
      "conv2d_stride2", "dwconv2d",     "deconv2d",        "upsample",     "concat",
      "mul",           "point_encoder", "pv_backbone",     "bev_input",    "bev_backbone",
      "rpn_head",      "bgmvf",         "aggregate_grid",  "hv_roi_pool",  "detect_head",
      "rpn_loss",      "head_loss",     "end_to_end"};
  return ops;
}

GradcheckReport gradcheck(const std::string& op, std::uint64_t seed,
                          const GradcheckOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed ^ name_hash(op));
  Case c = make_case(op, rng);

  for (Group& g : c.groups)
    for (Tensor* t : g.tensors) t->zero_grad();
  c.run_backward();
  const double l0 = c.loss();

  GradcheckReport rep;
  rep.op = op;
  rep.seed = seed;
  rep.step = opts.step;
  rep.tolerance = c.tol;
  const double h = opts.step;
  for (Group& g : c.groups) {
    GradGroup gr;
    gr.name = g.name;
    std::size_t total = 0;
    for (Tensor* t : g.tensors) total += t->size();
    if (total == 0) continue;
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t p = 0; p < opts.probes_per_group; ++p) {
      std::size_t flat = pick(rng);
      Tensor* t = nullptr;
      for (Tensor* cand : g.tensors) {
        if (flat < cand->size()) {
          t = cand;
          break;
        }
        flat -= cand->size();
      }
      const double analytic = t->grad()[flat];
      const double v = (*t)[flat];
      (*t)[flat] = v + h;
      const double lp = c.loss();
      (*t)[flat] = v - h;
      const double lm = c.loss();
      (*t)[flat] = v;
      const double numeric = (lp - lm) / (2 * h);
      const double err = rel_err(analytic, numeric, opts.floor);
      ++gr.probes;
      if (err > c.tol) {
        const double fwd = (lp - l0) / h, bwd = (l0 - lm) / h;
        bool kink =
            std::min(rel_err(analytic, fwd, opts.floor), rel_err(analytic, bwd, opts.floor)) <
            kKinkMatch;
        // Several kinks inside the step: shrink it and see whether agreement returns.
        for (double hs = h / 10; !kink && hs >= h / 100; hs /= 10) {
          (*t)[flat] = v + hs;
          const double sp = c.loss();
          (*t)[flat] = v - hs;
          const double sm = c.loss();
          (*t)[flat] = v;
          kink = rel_err(analytic, (sp - sm) / (2 * hs), opts.floor) < c.tol;
        }
        if (kink) {
          ++gr.kinks;
          continue;
        }
      }
      gr.max_rel_err = std::max(gr.max_rel_err, err);
    }
    rep.probes += gr.probes;
    rep.kinks += gr.kinks;
    rep.max_rel_err = std::max(rep.max_rel_err, gr.max_rel_err);
    rep.groups.push_back(gr);
  }
  rep.passed = rep.probes > 0 && rep.max_rel_err < c.tol && 4 * rep.kinks <= rep.probes;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::string reports_to_json(const std::vector<GradcheckReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j{{"op", r.op},
                     {"seed", r.seed},
                     {"step", r.step},
                     {"tolerance", r.tolerance},
                     {"max_rel_err", r.max_rel_err},
                     {"probes", r.probes},
                     {"kinks", r.kinks},
                     {"passed", r.passed},
                     {"seconds", r.seconds}};
    for (const auto& g : r.groups)
      j["groups"].push_back({{"name", g.name},
                             {"max_rel_err", g.max_rel_err},
                             {"probes", g.probes},
                             {"kinks", g.kinks}});
    arr.push_back(j);
  }
  return arr.dump(2);
}

std::vector<GradcheckReport> reports_from_json(const std::string& text) {
  std::vector<GradcheckReport> out;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      GradcheckReport r;
      r.op = j.at("op").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.step = j.at("step").get<double>();
      r.tolerance = j.at("tolerance").get<double>();
      r.max_rel_err = j.at("max_rel_err").get<double>();
      r.probes = j.at("probes").get<std::size_t>();
      r.kinks = j.at("kinks").get<std::size_t>();
      r.passed = j.at("passed").get<bool>();
      r.seconds = j.at("seconds").get<double>();
      if (j.contains("groups"))
        for (const auto& g : j["groups"])
          r.groups.push_back({g.at("name").get<std::string>(), g.at("max_rel_err").get<double>(),
                              g.at("probes").get<std::size_t>(), g.at("kinks").get<std::size_t>()});
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("gradcheck report: ") + e.what());
  }
  return out;
}

}  // namespace h23d
