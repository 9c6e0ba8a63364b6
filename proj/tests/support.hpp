#pragma once

#include <cmath>
#include <random>

#include "h23d/config.hpp"
#include "h23d/geometry.hpp"
#include "h23d/tensor.hpp"

namespace h23d::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// 32 x 32 BEV, 60 x 32 PV, narrow layers.
inline PipelineConfig tiny_config() {
  PipelineConfig c;
  c.scale = "tiny";
  c.seed = 3;
  c.bev_x = {0.0, 6.4, 0.2};
  c.bev_y = {-3.2, 3.2, 0.2};
  c.pv_phi_deg = {-90.0, 90.0, 3.0};
  c.pv_z = {-2.6, 0.6, 0.1};
  c.fusion = {6, 6, 6, 6};
  c.backbone.bev_widths = {4, 5, 6};
  c.backbone.blocks = 1;
  c.backbone.pv_width = 4;
  c.backbone.pv_expand = 2;
  c.backbone.bev_up_width = 3;
  c.rpn.anchor_sizes = {AnchorSize{3.9, 1.6, 1.56, -1.0, 1}};
  c.rpn.pre_nms_top_k = 256;
  c.rpn.max_proposals = 16;
  c.roi.coarse_channels = 3;
  c.roi.fine_channels = 3;
  c.head.fc1 = 10;
  c.head.fc2 = 8;
  c.head.score_threshold = 0.0;
  c.train.roi_samples = 4;
  c.train.steps = 10;
  return c;
}

inline PointCloud random_cloud(std::size_t n, const PipelineConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(cfg.bev_x.min + 0.3, cfg.bev_x.max - 0.01);
  std::uniform_real_distribution<double> uy(cfg.bev_y.min + 0.01, cfg.bev_y.max - 0.01);
  std::uniform_real_distribution<double> uz(cfg.pv_z.min + 0.01, cfg.pv_z.max - 0.01);
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({ux(rng), uy(rng), uz(rng), ur(rng), 0.0});
  return c;
}

}  // namespace h23d::test
