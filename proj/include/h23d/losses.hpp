#pragma once

#include <span>
#include <vector>

#include "h23d/anchors.hpp"
#include "h23d/boxes.hpp"

namespace h23d {

double sigmoid(double x);
double softplus(double x);

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

// Sigmoid focal loss of one logit against a {0, 1} target; writes dL/dlogit.
double focal_loss(double logit, int target, const FocalParams& fp, double* grad);
// Smooth-L1 with transition beta; writes dL/ddiff.
double smooth_l1(double diff, double beta, double* grad);

// Smooth-L1 over the residual 7-vector; the yaw term is applied to
// sin(pred - target). Writes d/dpred into `grad` when non-null.
double box_regression_loss(const BoxResidual& pred, const BoxResidual& target, double beta,
                           BoxResidual* grad);

struct RpnLossConfig {
  FocalParams focal;
  double beta = 1.0;
  double cls_weight = 1.0;
  double loc_weight = 1.0;
};

struct RpnLoss {
  double total = 0.0;
  double cls = 0.0;
  double loc = 0.0;
  std::size_t num_foreground = 0;
  std::vector<double> grad_cls;       // per anchor x class, same layout as input
  std::vector<BoxResidual> grad_reg;  // per anchor
};

// cls_logits: anchor-major, num_classes per anchor. Both terms are divided
// by max(N_a, 1).
RpnLoss rpn_loss(std::span<const double> cls_logits, std::size_t num_classes,
                 std::span<const BoxResidual> reg, const TargetAssignment& ta,
                 const RpnLossConfig& cfg);

// Piecewise-linear IoU-soft confidence label.
double confidence_target(double iou, double theta_l, double theta_h);

struct HeadTargets {
  std::vector<double> iou;
  std::vector<double> conf;           // gamma*
  std::vector<BoxResidual> reg;       // upsilon*, valid where reg_mask
  std::vector<unsigned char> reg_mask;
  std::size_t num_samples() const noexcept { return iou.size(); }
};

// Per-RoI targets from proposals and gts: IoU with the best gt (3D IoU by
// default), gamma* from confidence_target, upsilon* where IoU >= theta_reg.
HeadTargets make_head_targets(std::span<const Box3D> rois, std::span<const Box3D> gts,
                              double theta_l, double theta_h, double theta_reg,
                              bool use_3d_iou = true);

struct HeadLoss {
  double total = 0.0;
  double bce = 0.0;
  double reg = 0.0;
  std::vector<double> grad_conf;
  std::vector<BoxResidual> grad_reg;
};

// Binary cross-entropy on the confidence logits plus masked smooth-L1,
// both divided by N_s.
HeadLoss head_loss(std::span<const double> conf_logits, std::span<const BoxResidual> reg,
                   const HeadTargets& t, double beta = 1.0);

}  // namespace h23d
