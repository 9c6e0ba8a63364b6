#include "h23d/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "h23d/error.hpp"
#include "h23d/nms.hpp"

namespace h23d {

namespace {

thread_local StageTimer* active_timer = nullptr;

template <typename F>
auto stage(const char* name, F&& fn) {
  try {
    if (!active_timer) return fn();
    const auto t0 = std::chrono::steady_clock::now();
    auto out = fn();
    active_timer->add(name, std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0).count());
    return out;
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[") + name + "] " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("[") + name + "] " + e.what());
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::int64_t> view_ids(std::span<const ProjectedIndex> idx, const GridSpec& g) {
  std::vector<std::int64_t> ids(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n)
    ids[n] = g.linear_id(idx[n].quantized[0], idx[n].quantized[1]);
  return ids;
}

std::vector<MapCoord> view_coords(std::span<const ProjectedIndex> idx) {
  std::vector<MapCoord> c(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) c[n] = idx[n].continuous;
  return c;
}

const char* first_non_finite(const ForwardState& st) {
  const std::pair<const char*, const Tensor*> named[] = {
      {"point_encoder", &st.f_raw},     {"pv_backbone", &st.pv_out},
      {"pv_gather", &st.f_pv},          {"bev_input", &st.f_bev_input},
      {"bev_backbone", &st.bev_out},    {"bev_gather", &st.f_bev},
      {"rpn_cls", &st.rpn.cls},         {"rpn_reg", &st.rpn.reg},
      {"bgmvf", &st.f_h3d},             {"hv_roi_pool", &st.pooled},
      {"detect_head_conf", &st.head.conf}, {"detect_head_reg", &st.head.reg}};
  for (const auto& [name, t] : named)
    if (!t->all_finite()) return name;
  return "loss";
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_le(std::ifstream& f, int bytes, const std::string& path) {
  unsigned char b[8] = {};
  if (!f.read(reinterpret_cast<char*>(b), bytes))
    throw FormatError("checkpoint " + path + ": truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

constexpr char kCkptMagic[8] = {'H', '2', '3', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

StageTimer::StageTimer() : previous_(active_timer) { active_timer = this; }
StageTimer::~StageTimer() { active_timer = previous_; }

void StageTimer::add(const std::string& stage, double ms) {
  for (auto& e : entries_)
    if (e.first == stage) {
      e.second += ms;
      return;
    }
  entries_.emplace_back(stage, ms);
}

Model::Model(const PipelineConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  bev_grid_ = cfg_.bev_grid();
  pv_grid_ = cfg_.pv_grid();
  h3d_grid_ = H3DGrid::from_views(bev_grid_, pv_grid_);
  const auto yaws = cfg_.anchor_yaws();
  anchors_ = gen_anchors(bev_grid_, cfg_.rpn.anchor_sizes, yaws);

  std::mt19937_64 rng(cfg_.seed);
  const double mom = cfg_.backbone.bn_momentum;
  const FusionConfig& fu = cfg_.fusion;
  encoder_ = PointEncoder(augmented_width(cfg_.has_time), fu.encoder_hidden, fu.raw_width, rng,
                          mom);
  pv_ = PvBackbone(fu.raw_width, cfg_.backbone, rng);
  bev_in_ = BevInputEncoder(fu.raw_width, pv_.out_channels(), fu.bev_input_width, rng, mom);
  bev_ = BevBackbone(fu.bev_input_width, cfg_.backbone, rng);
  rpn_ = RpnHead(bev_.out_channels(), cfg_.anchors_per_loc(), cfg_.rpn.num_classes, rng);
  bgmvf_ = Bgmvf(pv_.out_channels(), bev_.out_channels(), fu.h3d_width, rng, mom);
  RoiPoolConfig rc = cfg_.roi;
  rc.bn_momentum = mom;
  pool_ = HvRoiPool(fu.h3d_width, rc, rng);
  head_ = DetectHead(pool_.cells() * pool_.out_channels(), cfg_.head.fc1, cfg_.head.fc2, rng,
                     mom);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  encoder_.collect_params(out);
  pv_.collect_params(out);
  bev_in_.collect_params(out);
  bev_.collect_params(out);
  rpn_.collect_params(out);
  bgmvf_.collect_params(out);
  pool_.collect_params(out);
  head_.collect_params(out);
  return out;
}

std::vector<Param*> Model::buffers() {
  std::vector<Param*> out;
  encoder_.collect_buffers(out);
  pv_.collect_buffers(out);
  bev_in_.collect_buffers(out);
  bev_.collect_buffers(out);
  bgmvf_.collect_buffers(out);
  pool_.collect_buffers(out);
  head_.collect_buffers(out);
  return out;
}

std::vector<Param*> Model::state_tensors() {
  auto out = params();
  auto b = buffers();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void Model::extract(const PointCloud& cloud, Mode mode, ForwardState& st) {
  st = ForwardState{};
  st.cloud = stage("clip", [&] { return clip_range(cloud, bev_grid_, pv_grid_); });
  if (st.cloud.empty()) return;
  if (cloud.has_time != cfg_.has_time)
    throw ConfigError("input: cloud time channel does not match config input.has_time");
  st.empty = false;
  stage("augment", [&] {
    st.idx = index_cloud(st.cloud, bev_grid_, pv_grid_);
    st.input = augment_input(st.cloud, bev_grid_, pv_grid_);
    return 0;
  });
  st.f_raw = stage("point_encoder", [&] { return encoder_.forward(st.input, mode); });
  stage("pv_scatter", [&] {
    const auto ids = view_ids(st.idx.pv, pv_grid_);
    st.pv_sparse = scatter_max(st.f_raw, ids, pv_grid_.cell_count());
    st.pv_map = densify(st.pv_sparse, pv_grid_);
    return 0;
  });
  st.pv_out = stage("pv_backbone", [&] { return pv_.forward(st.pv_map.values, mode); });
  st.f_pv = stage("pv_gather", [&] {
    st.pv_coords = view_coords(st.idx.pv);
    return bilinear_gather(st.pv_out, st.pv_coords);
  });
  st.f_bev_input = stage("bev_input", [&] { return bev_in_.forward(st.f_raw, st.f_pv, mode); });
  stage("bev_scatter", [&] {
    const auto ids = view_ids(st.idx.bev, bev_grid_);
    st.bev_sparse = scatter_max(st.f_bev_input, ids, bev_grid_.cell_count());
    st.bev_map = densify(st.bev_sparse, bev_grid_);
    return 0;
  });
  st.bev_out = stage("bev_backbone", [&] { return bev_.forward(st.bev_map.values, mode); });
  st.f_bev = stage("bev_gather", [&] {
    st.bev_coords = view_coords(st.idx.bev);
    return bilinear_gather(st.bev_out, st.bev_coords);
  });
  st.rpn = stage("rpn_head", [&] { return rpn_.forward(st.bev_out, mode); });
  st.f_h3d = stage("bgmvf", [&] { return bgmvf_.forward(st.f_pv, st.f_bev, mode); });
  st.voxels = stage("h3d_voxelize",
                    [&] { return h3d_voxelize(st.f_h3d, st.idx.bev, st.idx.pv, h3d_grid_); });
}

std::vector<double> Model::anchor_logits(const RpnOutput& rpn) const {
  const std::size_t rows = rpn.cls.dim(1), cols = rpn.cls.dim(2);
  const std::size_t A = cfg_.anchors_per_loc(), K = cfg_.rpn.num_classes;
  std::vector<double> out(rows * cols * A * K);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t k = 0; k < K; ++k)
          out[((r * cols + c) * A + a) * K + k] = rpn.cls.at(a * K + k, r, c);
  return out;
}

std::vector<BoxResidual> Model::anchor_residuals(const RpnOutput& rpn) const {
  const std::size_t rows = rpn.reg.dim(1), cols = rpn.reg.dim(2);
  const std::size_t A = cfg_.anchors_per_loc();
  std::vector<BoxResidual> out(rows * cols * A);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t j = 0; j < 7; ++j)
          out[(r * cols + c) * A + a][j] = rpn.reg.at(7 * a + j, r, c);
  return out;
}

std::vector<Box3D> Model::propose(const RpnOutput& rpn) const {
  const auto logits = anchor_logits(rpn);
  const auto resid = anchor_residuals(rpn);
  const std::size_t K = cfg_.rpn.num_classes;
  std::vector<double> score(anchors_.size());
  std::vector<int> label(anchors_.size(), 1);
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    double best = -1.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = sigmoid(logits[a * K + k]);
      if (p > best) {
        best = p;
        label[a] = static_cast<int>(k) + 1;
      }
    }
    score[a] = best;
  }
  auto order = score_order(score);
  if (order.size() > cfg_.rpn.pre_nms_top_k) order.resize(cfg_.rpn.pre_nms_top_k);
  std::vector<Box3D> cand;
  std::vector<double> cand_score;
  for (std::size_t a : order) {
    Box3D b = decode_box(resid[a], anchors_[a]);
    if (!b.valid()) continue;
    b.score = score[a];
    b.label = label[a];
    cand.push_back(b);
    cand_score.push_back(score[a]);
  }
  std::vector<Box3D> out;
  for (std::size_t i :
       fast_nms(cand, cand_score, cfg_.rpn.nms_threshold, cfg_.rpn.max_proposals))
    out.push_back(cand[i]);
  return out;
}

void Model::refine(ForwardState& st, Mode mode, std::uint64_t seed) {
  const std::size_t R = st.rois.size();
  const std::size_t width = pool_.cells() * pool_.out_channels();
  if (R == 0) {
    st.pooled = Tensor({0, pool_.cells(), pool_.out_channels()});
    st.head = {Tensor({0, 1}), Tensor({0, 7})};
    return;
  }
  st.pooled = stage("hv_roi_pool", [&] { return pool_.forward(st.rois, st.voxels, seed, mode); });
  st.head = stage("detect_head",
                  [&] { return head_.forward(st.pooled.reshaped({R, width}), mode); });
}

DetectionSet Model::detections(const ForwardState& st) const {
  std::vector<Box3D> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < st.rois.size(); ++i) {
    BoxResidual r;
    for (std::size_t j = 0; j < 7; ++j) r[j] = st.head.reg.at(i, j);
    Box3D b = decode_box(r, st.rois[i]);
    b.score = sigmoid(st.head.conf.at(i, 0));
    b.label = st.rois[i].label;
    if (!b.valid() || b.score < cfg_.head.score_threshold) continue;
    boxes.push_back(b);
    scores.push_back(b.score);
  }
  DetectionSet d;
  for (std::size_t i : classic_nms(boxes, scores, cfg_.head.final_nms_threshold))
    d.boxes.push_back(boxes[i]);
  return d;
}

void Model::backward(ForwardState& st, const RpnLoss& rl, const HeadLoss* hl) {
  if (st.empty) return;
  Tensor d_fpv, d_fbev;
  if (hl && !st.rois.empty()) {
    const std::size_t R = st.rois.size();
    Tensor gconf({R, 1}), greg({R, 7});
    for (std::size_t i = 0; i < R; ++i) {
      gconf.at(i, 0) = hl->grad_conf[i];
      for (std::size_t j = 0; j < 7; ++j) greg.at(i, j) = hl->grad_reg[i][j];
    }
    const Tensor d_flat = head_.backward(gconf, greg);
    const Tensor d_vox = pool_.backward(d_flat.reshaped(st.pooled.shape()));
    const Tensor d_fh3d = scatter_max_backward(d_vox, st.voxels.sparse);
    std::tie(d_fpv, d_fbev) = bgmvf_.backward(d_fh3d);
  }

  const std::size_t rows = st.rpn.cls.dim(1), cols = st.rpn.cls.dim(2);
  const std::size_t A = cfg_.anchors_per_loc(), K = cfg_.rpn.num_classes;
  Tensor gcls(st.rpn.cls.shape()), greg(st.rpn.reg.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t anchor = (r * cols + c) * A + a;
        for (std::size_t k = 0; k < K; ++k)
          gcls.at(a * K + k, r, c) = rl.grad_cls[anchor * K + k];
        for (std::size_t j = 0; j < 7; ++j) greg.at(7 * a + j, r, c) = rl.grad_reg[anchor][j];
      }
  Tensor d_bev_out = rpn_.backward(gcls, greg);
  if (!d_fbev.empty())
    d_bev_out = add(d_bev_out, bilinear_gather_backward(d_fbev, st.bev_coords, st.bev_out.shape()));
  const Tensor d_bev_map = bev_.backward(d_bev_out);
  const Tensor d_bev_in =
      scatter_max_backward(densify_backward(d_bev_map, st.bev_sparse), st.bev_sparse);
  auto [d_fraw, d_fpv_b] = bev_in_.backward(d_bev_in);
  if (!d_fpv.empty()) d_fpv_b = add(d_fpv_b, d_fpv);
  const Tensor d_pv_out = bilinear_gather_backward(d_fpv_b, st.pv_coords, st.pv_out.shape());
  const Tensor d_pv_map = pv_.backward(d_pv_out);
  d_fraw = add(d_fraw,
               scatter_max_backward(densify_backward(d_pv_map, st.pv_sparse), st.pv_sparse));
  encoder_.backward(d_fraw);
}

DetectionSet run_forward(const PointCloud& cloud, Model& model) {
  ForwardState st;
  model.extract(cloud, Mode::eval, st);
  if (st.empty) return {};
  st.rois = stage("proposals", [&] { return model.propose(st.rpn); });
  model.refine(st, Mode::eval, model.config().seed);
  return stage("postprocess", [&] { return model.detections(st); });
}

std::vector<Box3D> sample_rois(std::span<const Box3D> proposals, std::span<const Box3D> gts,
                               std::size_t n, double positive_fraction, double theta_reg,
                               bool iou_3d, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    for (const Box3D& g : gts)
      best = std::max(best, iou_3d ? iou3d(proposals[i], g) : bev_rotated_iou(proposals[i], g));
    (best > theta_reg ? pos : neg).push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto want_pos = static_cast<std::size_t>(std::llround(positive_fraction * n));
  std::size_t n_pos = std::min(pos.size(), want_pos);
  const std::size_t n_neg = std::min(neg.size(), n - n_pos);
  n_pos = std::min(pos.size(), n - n_neg);
  std::vector<Box3D> out;
  for (std::size_t i = 0; i < n_pos; ++i) out.push_back(proposals[pos[i]]);
  for (std::size_t i = 0; i < n_neg; ++i) out.push_back(proposals[neg[i]]);
  return out;
}

LossBreakdown compute_loss(Model& model, const PointCloud& cloud, std::span<const Box3D> gts,
                           const std::vector<Box3D>* fixed_rois, std::uint64_t seed,
                           bool backward, ForwardState* state) {
  const PipelineConfig& cfg = model.config();
  ForwardState local;
  ForwardState& st = state ? *state : local;
  model.extract(cloud, Mode::train, st);
  if (st.empty) throw StageError("clip", "no points inside the configured range");

  const auto ta = stage("rpn_targets", [&] {
    return assign_rpn_targets(model.anchors(), gts, cfg.rpn.match_threshold,
                              cfg.rpn.unmatch_threshold);
  });
  RpnLossConfig rc;
  rc.focal = {cfg.rpn.focal_alpha, cfg.rpn.focal_gamma};
  rc.beta = cfg.rpn.smooth_l1_beta;
  const RpnLoss rl = stage("rpn_loss", [&] {
    return rpn_loss(model.anchor_logits(st.rpn), cfg.rpn.num_classes,
                    model.anchor_residuals(st.rpn), ta, rc);
  });

  if (fixed_rois) {
    st.rois = *fixed_rois;
  } else {
    std::vector<Box3D> cand = stage("proposals", [&] { return model.propose(st.rpn); });
    if (cfg.train.gt_as_rois) cand.insert(cand.end(), gts.begin(), gts.end());
    st.rois = sample_rois(cand, gts, cfg.train.roi_samples, cfg.train.positive_fraction,
                          cfg.head.theta_reg, cfg.head.iou_3d, seed);
  }

  LossBreakdown lb;
  lb.rpn_cls = rl.cls;
  lb.rpn_loc = rl.loc;
  lb.foreground_anchors = rl.num_foreground;
  lb.rois = st.rois.size();
  HeadLoss hl;
  const bool has_head = st.rois.size() >= 2;
  if (has_head) {
    model.refine(st, Mode::train, seed);
    const HeadTargets t = make_head_targets(st.rois, gts, cfg.head.theta_l, cfg.head.theta_h,
                                            cfg.head.theta_reg, cfg.head.iou_3d);
    std::vector<double> conf(st.rois.size());
    std::vector<BoxResidual> reg(st.rois.size());
    for (std::size_t i = 0; i < st.rois.size(); ++i) {
      conf[i] = st.head.conf.at(i, 0);
      for (std::size_t j = 0; j < 7; ++j) reg[i][j] = st.head.reg.at(i, j);
      lb.positive_rois += t.reg_mask[i];
    }
    hl = stage("head_loss", [&] { return head_loss(conf, reg, t, cfg.rpn.smooth_l1_beta); });
    lb.head_bce = hl.bce;
    lb.head_reg = hl.reg;
  }
  lb.total = rl.total + hl.total;
  if (!std::isfinite(lb.total))
    throw NumericalError(std::string("non-finite L_Total; first non-finite stage: ") +
                         first_non_finite(st));
  if (backward) stage("backward", [&] {
    model.backward(st, rl, has_head ? &hl : nullptr);
    return 0;
  });
  return lb;
}

TrainStepResult train_step(Model& model, const PointCloud& cloud, std::span<const Box3D> gts,
                           TrainState& state) {
  const PipelineConfig& cfg = model.config();
  auto params = model.params();
  zero_grads(params);
  TrainStepResult res;
  res.loss = compute_loss(model, cloud, gts, nullptr, query_seed(cfg.seed, state.step, 2, 0),
                          true);
  double sq = 0.0;
  for (Param* p : params)
    for (double g : p->value.grad()) sq += g * g;
  res.grad_norm = std::sqrt(sq);
  if (!std::isfinite(res.grad_norm)) {
    for (Param* p : params)
      for (double g : p->value.grad())
        if (!std::isfinite(g)) throw NumericalError("[backward] non-finite gradient in " + p->name);
  }
  if (cfg.train.grad_clip > 0 && res.grad_norm > cfg.train.grad_clip) {
    const double s = cfg.train.grad_clip / res.grad_norm;
    for (Param* p : params)
      for (double& g : p->value.grad()) g *= s;
  }
  const OneCycleSchedule sched{cfg.train.lr, cfg.train.steps, cfg.train.pct_start,
                               cfg.train.div_factor, cfg.train.final_div_factor};
  res.lr = sched.lr(state.step);
  AdamHyper hyper;
  hyper.lr = res.lr;
  hyper.beta2 = 0.99;
  hyper.weight_decay = cfg.train.weight_decay;
  adam_step(params, hyper, state.opt);
  ++state.step;
  return res;
}

std::vector<Box3D> toy_planted_boxes() {
  Box3D a;
  a.x = 4.5;
  a.y = -2.5;
  a.z = -1.0;
  a.l = 3.9;
  a.w = 1.6;
  a.h = 1.56;
  a.yaw = 0.25;
  Box3D b;
  b.x = 9.0;
  b.y = 2.2;
  b.z = -0.9;
  b.l = 4.2;
  b.w = 1.75;
  b.h = 1.6;
  b.yaw = -1.3;
  return {a, b};
}

PointCloud synthetic_scene(std::span<const Box3D> boxes, std::size_t points_per_box,
                           std::size_t clutter, const PipelineConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud cloud;
  cloud.has_time = cfg.has_time;
  for (const Box3D& b : boxes) {
    b.validate();
    const double areas[3] = {b.w * b.h, b.l * b.h, b.l * b.w};  // faces normal to l, w, h
    const double total = 2 * (areas[0] + areas[1] + areas[2]);
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    for (std::size_t i = 0; i < points_per_box; ++i) {
      double pick = u(rng) * total;
      int axis = 0;
      while (axis < 2 && pick >= 2 * areas[axis]) pick -= 2 * areas[axis++];
      double local[3] = {(u(rng) - 0.5) * b.l, (u(rng) - 0.5) * b.w, (u(rng) - 0.5) * b.h};
      const double half[3] = {b.l / 2, b.w / 2, b.h / 2};
      local[axis] = u(rng) < 0.5 ? -half[axis] : half[axis];
      Point p;
      p.x = b.x + c * local[0] - s * local[1];
      p.y = b.y + s * local[0] + c * local[1];
      p.z = b.z + local[2];
      p.r = 0.6;
      cloud.points.push_back(p);
    }
  }
  for (std::size_t i = 0; i < clutter; ++i) {
    Point p;
    p.x = cfg.bev_x.min + u(rng) * (cfg.bev_x.max - cfg.bev_x.min);
    p.y = cfg.bev_y.min + u(rng) * (cfg.bev_y.max - cfg.bev_y.min);
    p.z = cfg.pv_z.min + u(rng) * (cfg.pv_z.max - cfg.pv_z.min);
    p.r = u(rng);
    cloud.points.push_back(p);
  }
  return cloud;
}

void save_checkpoint(const std::string& path, Model& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot write " + path);
  const auto tensors = model.state_tensors();
  f.write(kCkptMagic, 8);
  put_u32(f, kCkptVersion);
  put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const Param* p : tensors) {
    put_u32(f, static_cast<std::uint32_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(f, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) put_u64(f, d);
    for (double v : p->value.data()) put_u64(f, std::bit_cast<std::uint64_t>(v));
  }
  if (!f) throw FormatError("checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, Model& model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw FormatError("checkpoint " + path + ": bad magic");
  if (get_le(f, 4, path) != kCkptVersion)
    throw FormatError("checkpoint " + path + ": unsupported version");
  auto tensors = model.state_tensors();
  if (get_le(f, 4, path) != tensors.size())
    throw FormatError("checkpoint " + path + ": tensor count does not match the model");
  for (Param* p : tensors) {
    const auto len = get_le(f, 4, path);
    std::string name(len, '\0');
    if (!f.read(name.data(), static_cast<std::streamsize>(len)))
      throw FormatError("checkpoint " + path + ": truncated");
    if (name != p->name)
      throw FormatError("checkpoint " + path + ": expected tensor " + p->name + ", found " + name);
    Shape shape(get_le(f, 4, path));
    for (auto& d : shape) d = get_le(f, 8, path);
    if (shape != p->value.shape())
      throw FormatError("checkpoint " + path + ": shape mismatch for " + name);
    for (double& v : p->value.data()) v = std::bit_cast<double>(get_le(f, 8, path));
    ++p->version;
  }
}

}  // namespace h23d
