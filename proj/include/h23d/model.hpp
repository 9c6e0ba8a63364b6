#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h23d/anchors.hpp"
#include "h23d/backbone.hpp"
#include "h23d/config.hpp"
#include "h23d/fusion.hpp"
#include "h23d/kitti_io.hpp"
#include "h23d/losses.hpp"
#include "h23d/optim.hpp"
#include "h23d/roi.hpp"
#include "h23d/scatter.hpp"

namespace h23d {

// Intermediates of one forward pass, kept for the reverse pass and for
// stage fixtures.
struct ForwardState {
  bool empty = true;
  PointCloud cloud;  // clipped
  CloudIndices idx;
  Tensor input;      // augmented {N, 9|10}
  Tensor f_raw;
  SparseGrid pv_sparse;
  DenseMap pv_map;
  Tensor pv_out;
  std::vector<MapCoord> pv_coords;
  Tensor f_pv;
  Tensor f_bev_input;
  SparseGrid bev_sparse;
  DenseMap bev_map;
  Tensor bev_out;
  std::vector<MapCoord> bev_coords;
  Tensor f_bev;
  Tensor f_h3d;
  H3DVoxels voxels;
  RpnOutput rpn;
  std::vector<Box3D> rois;
  Tensor pooled;  // {R, cells, C_c + C_f}
  HeadOutput head;
};

struct LossBreakdown {
  double total = 0.0;
  double rpn_cls = 0.0;
  double rpn_loc = 0.0;
  double head_bce = 0.0;
  double head_reg = 0.0;
  std::size_t foreground_anchors = 0;
  std::size_t rois = 0;
  std::size_t positive_rois = 0;
};

// While alive, accumulates wall-clock milliseconds per pipeline stage run on
// the constructing thread, in first-seen order.
class StageTimer {
 public:
  StageTimer();
  ~StageTimer();
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

  void add(const std::string& stage, double ms);
  const std::vector<std::pair<std::string, double>>& entries() const noexcept { return entries_; }

 private:
  StageTimer* previous_;
  std::vector<std::pair<std::string, double>> entries_;
};

class Model {
 public:
  explicit Model(const PipelineConfig& cfg);

  const PipelineConfig& config() const noexcept { return cfg_; }
  const std::vector<Box3D>& anchors() const noexcept { return anchors_; }
  const H3DGrid& h3d_grid() const noexcept { return h3d_grid_; }

  std::vector<Param*> params();
  std::vector<Param*> buffers();
  // params() followed by buffers(), the checkpoint order.
  std::vector<Param*> state_tensors();

  // Clip, augment, both views, RPN maps and H3D voxels.
  void extract(const PointCloud& cloud, Mode mode, ForwardState& st);
  // Per-anchor logits (anchor-major, K per anchor) and residuals.
  std::vector<double> anchor_logits(const RpnOutput& rpn) const;
  std::vector<BoxResidual> anchor_residuals(const RpnOutput& rpn) const;
  // Decoded, Fast-NMS filtered proposals; no gradient flows through them.
  std::vector<Box3D> propose(const RpnOutput& rpn) const;
  // HV RoI pooling and the detect head over st.rois.
  void refine(ForwardState& st, Mode mode, std::uint64_t seed);
  // Decoded boxes after classic NMS and the score threshold.
  DetectionSet detections(const ForwardState& st) const;

  // Reverse pass. Parameter gradients accumulate into params().
  void backward(ForwardState& st, const RpnLoss& rpn_grad, const HeadLoss* head_grad);

  PointEncoder& encoder() noexcept { return encoder_; }
  PvBackbone& pv_backbone() noexcept { return pv_; }
  BevInputEncoder& bev_input() noexcept { return bev_in_; }
  BevBackbone& bev_backbone() noexcept { return bev_; }
  RpnHead& rpn_head() noexcept { return rpn_; }
  Bgmvf& bgmvf() noexcept { return bgmvf_; }
  HvRoiPool& roi_pool() noexcept { return pool_; }
  DetectHead& detect_head() noexcept { return head_; }

 private:
  PipelineConfig cfg_;
  GridSpec bev_grid_, pv_grid_;
  H3DGrid h3d_grid_;
  std::vector<Box3D> anchors_;
  PointEncoder encoder_;
  PvBackbone pv_;
  BevInputEncoder bev_in_;
  BevBackbone bev_;
  RpnHead rpn_;
  Bgmvf bgmvf_;
  HvRoiPool pool_;
  DetectHead head_;
};

DetectionSet run_forward(const PointCloud& cloud, Model& model);

// 128-style RoI sampling: up to positive_fraction positives (IoU > theta_reg
// with some gt), negatives for the rest, topped up with positives when
// negatives run out. Seeded.
std::vector<Box3D> sample_rois(std::span<const Box3D> proposals, std::span<const Box3D> gts,
                               std::size_t n, double positive_fraction, double theta_reg,
                               bool iou_3d, std::uint64_t seed);

// Full training-mode forward and both losses. With `fixed_rois` the head
// runs on those RoIs instead of sampling from fresh proposals. When
// `backward` is set the gradients of L_Total land in model.params().
LossBreakdown compute_loss(Model& model, const PointCloud& cloud, std::span<const Box3D> gts,
                           const std::vector<Box3D>* fixed_rois, std::uint64_t seed,
                           bool backward, ForwardState* state = nullptr);

struct TrainState {
  OptimizerState opt;
  std::size_t step = 0;
};

struct TrainStepResult {
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// One Adam step on one scene under the one-cycle schedule from the config.
TrainStepResult train_step(Model& model, const PointCloud& cloud, std::span<const Box3D> gts,
                           TrainState& state);

// Points on the surfaces of the given boxes plus uniform clutter inside the
// BEV range; deterministic per seed.
PointCloud synthetic_scene(std::span<const Box3D> boxes, std::size_t points_per_box,
                           std::size_t clutter, const PipelineConfig& cfg, std::uint64_t seed);
// The two planted boxes of the toy overfit scene.
std::vector<Box3D> toy_planted_boxes();

void save_checkpoint(const std::string& path, Model& model);
void load_checkpoint(const std::string& path, Model& model);

}  // namespace h23d
