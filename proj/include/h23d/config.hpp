#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "h23d/anchors.hpp"
#include "h23d/backbone.hpp"
#include "h23d/geometry.hpp"
#include "h23d/roi.hpp"

namespace h23d {

inline constexpr int kConfigSchemaVersion = 1;

struct FusionConfig {
  std::size_t encoder_hidden = 32;
  std::size_t raw_width = 32;        // C_raw
  std::size_t bev_input_width = 32;  // C of f'
  std::size_t h3d_width = 32;        // C_h
};

struct RpnConfig {
  std::vector<AnchorSize> anchor_sizes{AnchorSize{}};
  std::vector<double> anchor_yaws_deg{0.0, 90.0};
  double match_threshold = 0.6;
  double unmatch_threshold = 0.45;
  std::size_t num_classes = 1;
  std::size_t pre_nms_top_k = 4096;
  double nms_threshold = 0.7;
  std::size_t max_proposals = 128;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0;
};

struct HeadConfig {
  std::size_t fc1 = 256;
  std::size_t fc2 = 256;
  double theta_h = 0.75;
  double theta_l = 0.25;
  double theta_reg = 0.55;
  bool iou_3d = true;
  double final_nms_threshold = 0.1;
  double score_threshold = 0.1;
};

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 0.01;
  std::size_t steps = 300;
  double pct_start = 0.4;
  double div_factor = 10.0;
  double final_div_factor = 1e4;
  double grad_clip = 10.0;
  std::size_t roi_samples = 128;
  double positive_fraction = 0.5;
  bool gt_as_rois = false;
};

struct PipelineConfig {
  int schema_version = kConfigSchemaVersion;
  std::string scale = "paper";
  std::uint64_t seed = 0;
  bool has_time = false;

  AxisSpec bev_x{0.0, 70.4, 0.2};
  AxisSpec bev_y{-40.0, 40.0, 0.2};
  AxisSpec pv_phi_deg{-90.0, 90.0, 0.33};
  AxisSpec pv_z{-3.0, 1.0, 0.1};

  FusionConfig fusion;
  BackboneConfig backbone;
  RpnConfig rpn;
  RoiPoolConfig roi;
  HeadConfig head;
  TrainConfig train;

  GridSpec bev_grid() const { return {bev_x, bev_y}; }
  GridSpec pv_grid() const;  // azimuth in radians
  std::vector<double> anchor_yaws() const;  // radians
  std::size_t anchors_per_loc() const {
    return rpn.anchor_sizes.size() * rpn.anchor_yaws_deg.size();
  }

  void validate() const;  // throws ConfigError
};

// Nested key-value text (YAML syntax). Unknown keys are rejected; missing
// keys keep their defaults. Throws ConfigError.
PipelineConfig load_config(const std::string& path);
PipelineConfig parse_config(const std::string& text);
std::string dump_config(const PipelineConfig& cfg);

}  // namespace h23d
