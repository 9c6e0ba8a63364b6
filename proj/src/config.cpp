#include "h23d/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "h23d/error.hpp"

namespace h23d {

namespace {

void allow_keys(const YAML::Node& node, const std::string& where,
                std::initializer_list<const char*> keys) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (!node || !node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_axis(const YAML::Node& node, const char* key, AxisSpec& axis,
               const std::string& where) {
  if (!node || !node[key]) return;
  const YAML::Node a = node[key];
  const std::string w = where + "." + key;
  allow_keys(a, w, {"min", "max", "cell"});
  read(a, "min", axis.min, w);
  read(a, "max", axis.max, w);
  read(a, "cell", axis.cell, w);
}

YAML::Node axis_node(const AxisSpec& a) {
  YAML::Node n;
  n["min"] = a.min;
  n["max"] = a.max;
  n["cell"] = a.cell;
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

PipelineConfig from_node(const YAML::Node& root) {
  PipelineConfig c;
  if (!root || !root.IsMap()) throw ConfigError("config: top level must be a mapping");
  allow_keys(root, "config",
             {"schema_version", "scale", "seed", "input", "grid", "fusion", "backbone", "rpn",
              "roi_pool", "head", "train"});
  read(root, "schema_version", c.schema_version, "config");
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version " +
                      std::to_string(c.schema_version));
  read(root, "scale", c.scale, "config");
  read(root, "seed", c.seed, "config");

  const YAML::Node in = root["input"];
  allow_keys(in, "input", {"has_time"});
  read(in, "has_time", c.has_time, "input");

  const YAML::Node grid = root["grid"];
  allow_keys(grid, "grid", {"bev", "pv"});
  if (grid) {
    allow_keys(grid["bev"], "grid.bev", {"x", "y"});
    read_axis(grid["bev"], "x", c.bev_x, "grid.bev");
    read_axis(grid["bev"], "y", c.bev_y, "grid.bev");
    allow_keys(grid["pv"], "grid.pv", {"phi_deg", "z"});
    read_axis(grid["pv"], "phi_deg", c.pv_phi_deg, "grid.pv");
    read_axis(grid["pv"], "z", c.pv_z, "grid.pv");
  }

  const YAML::Node fu = root["fusion"];
  allow_keys(fu, "fusion", {"encoder_hidden", "raw_width", "bev_input_width", "h3d_width"});
  read(fu, "encoder_hidden", c.fusion.encoder_hidden, "fusion");
  read(fu, "raw_width", c.fusion.raw_width, "fusion");
  read(fu, "bev_input_width", c.fusion.bev_input_width, "fusion");
  read(fu, "h3d_width", c.fusion.h3d_width, "fusion");

  const YAML::Node bb = root["backbone"];
  allow_keys(bb, "backbone",
             {"bev_widths", "blocks", "pv_width", "pv_expand", "bev_up_width", "bn_momentum"});
  if (bb && bb["bev_widths"]) {
    std::vector<std::size_t> w;
    read(bb, "bev_widths", w, "backbone");
    if (w.size() != 3) throw ConfigError("backbone.bev_widths: need exactly 3 stage widths");
    std::copy(w.begin(), w.end(), c.backbone.bev_widths.begin());
  }
  read(bb, "blocks", c.backbone.blocks, "backbone");
  read(bb, "pv_width", c.backbone.pv_width, "backbone");
  read(bb, "pv_expand", c.backbone.pv_expand, "backbone");
  read(bb, "bev_up_width", c.backbone.bev_up_width, "backbone");
  read(bb, "bn_momentum", c.backbone.bn_momentum, "backbone");

  const YAML::Node rpn = root["rpn"];
  allow_keys(rpn, "rpn",
             {"anchor_sizes", "anchor_yaws_deg", "match_threshold", "unmatch_threshold",
              "num_classes", "pre_nms_top_k", "nms_threshold", "max_proposals", "focal_alpha",
              "focal_gamma", "smooth_l1_beta"});
  if (rpn && rpn["anchor_sizes"]) {
    const YAML::Node sizes = rpn["anchor_sizes"];
    if (!sizes.IsSequence() || sizes.size() == 0)
      throw ConfigError("rpn.anchor_sizes: expected a non-empty list");
    c.rpn.anchor_sizes.clear();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const std::string w = "rpn.anchor_sizes[" + std::to_string(i) + "]";
      allow_keys(sizes[i], w, {"l", "w", "h", "z", "label"});
      AnchorSize s;
      read(sizes[i], "l", s.l, w);
      read(sizes[i], "w", s.w, w);
      read(sizes[i], "h", s.h, w);
      read(sizes[i], "z", s.z, w);
      read(sizes[i], "label", s.label, w);
      c.rpn.anchor_sizes.push_back(s);
    }
  }
  read(rpn, "anchor_yaws_deg", c.rpn.anchor_yaws_deg, "rpn");
  read(rpn, "match_threshold", c.rpn.match_threshold, "rpn");
  read(rpn, "unmatch_threshold", c.rpn.unmatch_threshold, "rpn");
  read(rpn, "num_classes", c.rpn.num_classes, "rpn");
  read(rpn, "pre_nms_top_k", c.rpn.pre_nms_top_k, "rpn");
  read(rpn, "nms_threshold", c.rpn.nms_threshold, "rpn");
  read(rpn, "max_proposals", c.rpn.max_proposals, "rpn");
  read(rpn, "focal_alpha", c.rpn.focal_alpha, "rpn");
  read(rpn, "focal_gamma", c.rpn.focal_gamma, "rpn");
  read(rpn, "smooth_l1_beta", c.rpn.smooth_l1_beta, "rpn");

  const YAML::Node rp = root["roi_pool"];
  allow_keys(rp, "roi_pool",
             {"coarse_grid", "fine_grid", "coarse_radius", "fine_radius", "max_neighbors",
              "coarse_channels", "fine_channels"});
  read(rp, "coarse_grid", c.roi.coarse_grid, "roi_pool");
  read(rp, "fine_grid", c.roi.fine_grid, "roi_pool");
  read(rp, "coarse_radius", c.roi.coarse_radius, "roi_pool");
  read(rp, "fine_radius", c.roi.fine_radius, "roi_pool");
  read(rp, "max_neighbors", c.roi.max_neighbors, "roi_pool");
  read(rp, "coarse_channels", c.roi.coarse_channels, "roi_pool");
  read(rp, "fine_channels", c.roi.fine_channels, "roi_pool");

  const YAML::Node hd = root["head"];
  allow_keys(hd, "head",
             {"fc1", "fc2", "theta_h", "theta_l", "theta_reg", "iou_3d", "final_nms_threshold",
              "score_threshold"});
  read(hd, "fc1", c.head.fc1, "head");
  read(hd, "fc2", c.head.fc2, "head");
  read(hd, "theta_h", c.head.theta_h, "head");
  read(hd, "theta_l", c.head.theta_l, "head");
  read(hd, "theta_reg", c.head.theta_reg, "head");
  read(hd, "iou_3d", c.head.iou_3d, "head");
  read(hd, "final_nms_threshold", c.head.final_nms_threshold, "head");
  read(hd, "score_threshold", c.head.score_threshold, "head");

  const YAML::Node tr = root["train"];
  allow_keys(tr, "train",
             {"lr", "weight_decay", "steps", "pct_start", "div_factor", "final_div_factor",
              "grad_clip", "roi_samples", "positive_fraction", "gt_as_rois"});
  read(tr, "lr", c.train.lr, "train");
  read(tr, "weight_decay", c.train.weight_decay, "train");
  read(tr, "steps", c.train.steps, "train");
  read(tr, "pct_start", c.train.pct_start, "train");
  read(tr, "div_factor", c.train.div_factor, "train");
  read(tr, "final_div_factor", c.train.final_div_factor, "train");
  read(tr, "grad_clip", c.train.grad_clip, "train");
  read(tr, "roi_samples", c.train.roi_samples, "train");
  read(tr, "positive_fraction", c.train.positive_fraction, "train");
  read(tr, "gt_as_rois", c.train.gt_as_rois, "train");

  c.roi.bn_momentum = c.backbone.bn_momentum;
  c.validate();
  return c;
}

}  // namespace

GridSpec PipelineConfig::pv_grid() const {
  return {{deg2rad(pv_phi_deg.min), deg2rad(pv_phi_deg.max), deg2rad(pv_phi_deg.cell)}, pv_z};
}

std::vector<double> PipelineConfig::anchor_yaws() const {
  std::vector<double> out;
  for (double d : rpn.anchor_yaws_deg) out.push_back(normalize_angle(deg2rad(d)));
  return out;
}

void PipelineConfig::validate() const {
  try {
    bev_grid().validate();
    pv_grid().validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  if (pv_phi_deg.min < -180.0 || pv_phi_deg.max > 180.0)
    throw ConfigError("grid.pv.phi_deg: range must lie within [-180, 180]");
  BevBackbone::validate_input(static_cast<std::size_t>(bev_grid().rows()),
                              static_cast<std::size_t>(bev_grid().cols()));
  backbone.validate();
  roi.validate();
  if (fusion.encoder_hidden == 0 || fusion.raw_width == 0 || fusion.bev_input_width == 0 ||
      fusion.h3d_width == 0)
    throw ConfigError("fusion: widths must be positive");
  if (rpn.anchor_sizes.empty() || rpn.anchor_yaws_deg.empty())
    throw ConfigError("rpn: need at least one anchor size and yaw");
  for (const AnchorSize& s : rpn.anchor_sizes) {
    if (!(s.l > 0 && s.w > 0 && s.h > 0)) throw ConfigError("rpn: anchor sizes must be positive");
    if (s.label < 1 || s.label > static_cast<int>(rpn.num_classes))
      throw ConfigError("rpn: anchor label outside 1..num_classes");
  }
  if (!(rpn.match_threshold > rpn.unmatch_threshold))
    throw ConfigError("rpn: match_threshold must exceed unmatch_threshold");
  if (rpn.num_classes == 0 || rpn.max_proposals == 0 || rpn.pre_nms_top_k == 0)
    throw ConfigError("rpn: counts must be positive");
  if (!(head.theta_h > head.theta_l)) throw ConfigError("head: theta_h must exceed theta_l");
  if (head.fc1 == 0 || head.fc2 == 0) throw ConfigError("head: widths must be positive");
  if (!(train.lr > 0)) throw ConfigError("train: lr must be positive");
  if (!(train.positive_fraction >= 0 && train.positive_fraction <= 1))
    throw ConfigError("train: positive_fraction must lie in [0, 1]");
  if (train.roi_samples < 2) throw ConfigError("train: roi_samples must be at least 2");
  if (!(train.pct_start > 0 && train.pct_start < 1))
    throw ConfigError("train: pct_start must lie in (0, 1)");
}

PipelineConfig parse_config(const std::string& text) {
  try {
    return from_node(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const PipelineConfig& c) {
  YAML::Node r;
  r["schema_version"] = c.schema_version;
  r["scale"] = c.scale;
  r["seed"] = c.seed;
  r["input"]["has_time"] = c.has_time;
  r["grid"]["bev"]["x"] = axis_node(c.bev_x);
  r["grid"]["bev"]["y"] = axis_node(c.bev_y);
  r["grid"]["pv"]["phi_deg"] = axis_node(c.pv_phi_deg);
  r["grid"]["pv"]["z"] = axis_node(c.pv_z);
  r["fusion"]["encoder_hidden"] = c.fusion.encoder_hidden;
  r["fusion"]["raw_width"] = c.fusion.raw_width;
  r["fusion"]["bev_input_width"] = c.fusion.bev_input_width;
  r["fusion"]["h3d_width"] = c.fusion.h3d_width;
  r["backbone"]["bev_widths"] = std::vector<std::size_t>(c.backbone.bev_widths.begin(),
                                                         c.backbone.bev_widths.end());
  r["backbone"]["blocks"] = c.backbone.blocks;
  r["backbone"]["pv_width"] = c.backbone.pv_width;
  r["backbone"]["pv_expand"] = c.backbone.pv_expand;
  r["backbone"]["bev_up_width"] = c.backbone.bev_up_width;
  r["backbone"]["bn_momentum"] = c.backbone.bn_momentum;
  for (const AnchorSize& s : c.rpn.anchor_sizes) {
    YAML::Node n;
    n["l"] = s.l;
    n["w"] = s.w;
    n["h"] = s.h;
    n["z"] = s.z;
    n["label"] = s.label;
    n.SetStyle(YAML::EmitterStyle::Flow);
    r["rpn"]["anchor_sizes"].push_back(n);
  }
  r["rpn"]["anchor_yaws_deg"] = c.rpn.anchor_yaws_deg;
  r["rpn"]["match_threshold"] = c.rpn.match_threshold;
  r["rpn"]["unmatch_threshold"] = c.rpn.unmatch_threshold;
  r["rpn"]["num_classes"] = c.rpn.num_classes;
  r["rpn"]["pre_nms_top_k"] = c.rpn.pre_nms_top_k;
  r["rpn"]["nms_threshold"] = c.rpn.nms_threshold;
  r["rpn"]["max_proposals"] = c.rpn.max_proposals;
  r["rpn"]["focal_alpha"] = c.rpn.focal_alpha;
  r["rpn"]["focal_gamma"] = c.rpn.focal_gamma;
  r["rpn"]["smooth_l1_beta"] = c.rpn.smooth_l1_beta;
  r["roi_pool"]["coarse_grid"] = c.roi.coarse_grid;
  r["roi_pool"]["fine_grid"] = c.roi.fine_grid;
  r["roi_pool"]["coarse_radius"] = c.roi.coarse_radius;
  r["roi_pool"]["fine_radius"] = c.roi.fine_radius;
  r["roi_pool"]["max_neighbors"] = c.roi.max_neighbors;
  r["roi_pool"]["coarse_channels"] = c.roi.coarse_channels;
  r["roi_pool"]["fine_channels"] = c.roi.fine_channels;
  r["head"]["fc1"] = c.head.fc1;
  r["head"]["fc2"] = c.head.fc2;
  r["head"]["theta_h"] = c.head.theta_h;
  r["head"]["theta_l"] = c.head.theta_l;
  r["head"]["theta_reg"] = c.head.theta_reg;
  r["head"]["iou_3d"] = c.head.iou_3d;
  r["head"]["final_nms_threshold"] = c.head.final_nms_threshold;
  r["head"]["score_threshold"] = c.head.score_threshold;
  r["train"]["lr"] = c.train.lr;
  r["train"]["weight_decay"] = c.train.weight_decay;
  r["train"]["steps"] = c.train.steps;
  r["train"]["pct_start"] = c.train.pct_start;
  r["train"]["div_factor"] = c.train.div_factor;
  r["train"]["final_div_factor"] = c.train.final_div_factor;
  r["train"]["grad_clip"] = c.train.grad_clip;
  r["train"]["roi_samples"] = c.train.roi_samples;
  r["train"]["positive_fraction"] = c.train.positive_fraction;
  r["train"]["gt_as_rois"] = c.train.gt_as_rois;
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << r;
  return std::string(out.c_str()) + "\n";
}

}  // namespace h23d
