#pragma once

#include <array>
#include <random>
#include <vector>

#include "h23d/layers.hpp"

namespace h23d {

struct BackboneConfig {
  std::array<std::size_t, 3> bev_widths{32, 64, 128};
  std::size_t blocks = 4;       // N_B, per stage
  std::size_t pv_width = 32;
  std::size_t pv_expand = 2;    // inverted-residual expansion ratio
  std::size_t bev_up_width = 64;  // channels per upsampled branch
  double bn_momentum = 0.1;

  void validate() const;  // throws ConfigError
  std::size_t bev_out_channels() const { return 3 * bev_up_width; }
};

// PV map -> PV map of the same spatial size. A stem conv followed by N_B
// inverted residual blocks: 1x1 expand + BN (no activation), 3x3 depthwise
// + BN + ReLU, 1x1 project + BN, identity skip.
class PvBackbone {
 public:
  PvBackbone() = default;
  PvBackbone(std::size_t in_channels, const BackboneConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& map, Mode mode);
  Tensor backward(const Tensor& grad);

  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);
  std::size_t out_channels() const noexcept { return width_; }

 private:
  std::size_t in_channels_ = 0;
  std::size_t width_ = 0;
  Sequential stem_;
  std::vector<Sequential> blocks_;
};

// Three stages at 1, 1/2 and 1/4 resolution. Each stage output passes a
// transposed conv (+BN+ReLU) back to full resolution; the three are
// concatenated.
class BevBackbone {
 public:
  BevBackbone() = default;
  BevBackbone(std::size_t in_channels, const BackboneConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& map, Mode mode);
  Tensor backward(const Tensor& grad);

  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);
  std::size_t out_channels() const noexcept { return 3 * up_width_; }

  // Spatial sizes of the three stage outputs for an H x W input.
  static std::array<std::array<std::size_t, 2>, 3> stage_sizes(std::size_t h, std::size_t w);
  static void validate_input(std::size_t h, std::size_t w);

 private:
  std::size_t in_channels_ = 0;
  std::size_t up_width_ = 0;
  std::array<Sequential, 3> stages_;
  std::array<Sequential, 3> ups_;
};

struct RpnOutput {
  Tensor cls;  // {A * K, H, W}; channel a * K + k
  Tensor reg;  // {7 * A, H, W}; channel 7 * a + r
};

class RpnHead {
 public:
  RpnHead() = default;
  RpnHead(std::size_t in_channels, std::size_t anchors_per_loc, std::size_t num_classes,
          std::mt19937_64& rng);

  RpnOutput forward(const Tensor& features, Mode mode);
  Tensor backward(const Tensor& grad_cls, const Tensor& grad_reg);

  void collect_params(std::vector<Param*>& out);
  std::size_t anchors_per_loc() const noexcept { return anchors_; }
  std::size_t num_classes() const noexcept { return classes_; }

 private:
  std::size_t anchors_ = 0;
  std::size_t classes_ = 1;
  Layer cls_;
  Layer reg_;
};

}  // namespace h23d
