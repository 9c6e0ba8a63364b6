#include "h23d/losses.hpp"

#include <algorithm>
#include <cmath>

#include "h23d/error.hpp"

namespace h23d {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double focal_loss(double logit, int target, const FocalParams& fp, double* grad) {
  const double p = sigmoid(logit);
  double loss = 0.0, g = 0.0;
  if (target == 1) {
    const double log_p = -softplus(-logit);
    const double q = std::pow(1.0 - p, fp.gamma);
    loss = -fp.alpha * q * log_p;
    g = fp.alpha * q * (fp.gamma * p * log_p - (1.0 - p));
  } else {
    const double log_q = -softplus(logit);
    const double pg = std::pow(p, fp.gamma);
    loss = -(1.0 - fp.alpha) * pg * log_q;
    g = (1.0 - fp.alpha) * pg * (p - fp.gamma * (1.0 - p) * log_q);
  }
  if (grad) *grad = g;
  return loss;
}

double smooth_l1(double diff, double beta, double* grad) {
  const double a = std::abs(diff);
  if (a < beta) {
    if (grad) *grad = diff / beta;
    return 0.5 * diff * diff / beta;
  }
  if (grad) *grad = diff > 0 ? 1.0 : -1.0;
  return a - 0.5 * beta;
}

double box_regression_loss(const BoxResidual& pred, const BoxResidual& target, double beta,
                           BoxResidual* grad) {
  double loss = 0.0;
  for (std::size_t r = 0; r < 7; ++r) {
    double g = 0.0;
    if (r == 6) {
      const double d = pred[6] - target[6];
      loss += smooth_l1(std::sin(d), beta, &g);
      g *= std::cos(d);
    } else {
      loss += smooth_l1(pred[r] - target[r], beta, &g);
    }
    if (grad) (*grad)[r] = g;
  }
  return loss;
}

RpnLoss rpn_loss(std::span<const double> cls_logits, std::size_t num_classes,
                 std::span<const BoxResidual> reg, const TargetAssignment& ta,
                 const RpnLossConfig& cfg) {
  const std::size_t na = ta.labels.size();
  if (num_classes == 0 || cls_logits.size() != na * num_classes || reg.size() != na)
    throw ShapeError("rpn_loss: logits/regressions do not match the anchor count");
  RpnLoss out;
  out.num_foreground = ta.num_foreground;
  out.grad_cls.assign(cls_logits.size(), 0.0);
  out.grad_reg.assign(na, BoxResidual{});
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(ta.num_foreground, 1));
  for (std::size_t a = 0; a < na; ++a) {
    const int label = ta.labels[a];
    if (label < 0) continue;
    for (std::size_t k = 0; k < num_classes; ++k) {
      const int y = label == static_cast<int>(k) + 1 ? 1 : 0;
      double g = 0.0;
      out.cls += focal_loss(cls_logits[a * num_classes + k], y, cfg.focal, &g);
      out.grad_cls[a * num_classes + k] = g * norm * cfg.cls_weight;
    }
    if (label >= 1) {
      BoxResidual g{};
      out.loc += box_regression_loss(reg[a], ta.targets[a], cfg.beta, &g);
      for (std::size_t r = 0; r < 7; ++r) out.grad_reg[a][r] = g[r] * norm * cfg.loc_weight;
    }
  }
  out.cls *= norm;
  out.loc *= norm;
  out.total = cfg.cls_weight * out.cls + cfg.loc_weight * out.loc;
  return out;
}

double confidence_target(double iou, double theta_l, double theta_h) {
  if (!(theta_h > theta_l))
    throw ConfigError("confidence_target: theta_h must exceed theta_l");
  if (iou < theta_l) return 0.0;
  if (iou >= theta_h) return 1.0;
  return (iou - theta_l) / (theta_h - theta_l);
}

HeadTargets make_head_targets(std::span<const Box3D> rois, std::span<const Box3D> gts,
                              double theta_l, double theta_h, double theta_reg,
                              bool use_3d_iou) {
  HeadTargets t;
  t.iou.assign(rois.size(), 0.0);
  t.conf.assign(rois.size(), 0.0);
  t.reg.assign(rois.size(), BoxResidual{});
  t.reg_mask.assign(rois.size(), 0);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    double best = 0.0;
    std::size_t arg = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = use_3d_iou ? iou3d(rois[i], gts[g]) : bev_rotated_iou(rois[i], gts[g]);
      if (v > best) {
        best = v;
        arg = g;
      }
    }
    t.iou[i] = best;
    t.conf[i] = confidence_target(best, theta_l, theta_h);
    if (arg < gts.size() && best >= theta_reg) {
      t.reg[i] = encode_box(gts[arg], rois[i]);
      t.reg_mask[i] = 1;
    }
  }
  return t;
}

HeadLoss head_loss(std::span<const double> conf_logits, std::span<const BoxResidual> reg,
                   const HeadTargets& t, double beta) {
  const std::size_t n = t.num_samples();
  if (conf_logits.size() != n || reg.size() != n || t.conf.size() != n ||
      t.reg.size() != n || t.reg_mask.size() != n)
    throw ShapeError("head_loss: outputs do not match the sample count");
  HeadLoss out;
  out.grad_conf.assign(n, 0.0);
  out.grad_reg.assign(n, BoxResidual{});
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    const double x = conf_logits[i], y = t.conf[i];
    out.bce += softplus(x) - y * x;
    out.grad_conf[i] = (sigmoid(x) - y) * norm;
    if (t.reg_mask[i]) {
      BoxResidual g{};
      out.reg += box_regression_loss(reg[i], t.reg[i], beta, &g);
      for (std::size_t r = 0; r < 7; ++r) out.grad_reg[i][r] = g[r] * norm;
    }
  }
  out.bce *= norm;
  out.reg *= norm;
  out.total = out.bce + out.reg;
  return out;
}

}  // namespace h23d
