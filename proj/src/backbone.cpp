#include "h23d/backbone.hpp"

#include <cmath>
#include <string>

#include "h23d/error.hpp"

namespace h23d {

namespace {
// Prior probability 0.01 for the objectness logits.
constexpr double kClsPriorBias = -4.59511985013459;

Layer bn_layer(std::size_t c, const std::string& name, std::mt19937_64& rng, double mom) {
  return Layer(LayerSpec::bn(c, mom), name, rng);
}
}  // namespace

void BackboneConfig::validate() const {
  for (std::size_t w : bev_widths)
    if (w == 0) throw ConfigError("backbone: stage widths must be positive");
  if (blocks < 1) throw ConfigError("backbone: blocks per stage must be >= 1");
  if (pv_width == 0 || pv_expand == 0 || bev_up_width == 0)
    throw ConfigError("backbone: widths must be positive");
  if (!(bn_momentum > 0 && bn_momentum <= 1))
    throw ConfigError("backbone: bn momentum out of range");
}

PvBackbone::PvBackbone(std::size_t in_channels, const BackboneConfig& cfg,
                       std::mt19937_64& rng)
    : in_channels_(in_channels), width_(cfg.pv_width) {
  cfg.validate();
  const double mom = cfg.bn_momentum;
  stem_ = conv_bn(in_channels, width_, 3, 1, true, "pv.stem", rng, mom);
  const std::size_t hidden = width_ * cfg.pv_expand;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string n = "pv.block" + std::to_string(b);
    std::vector<Layer> ls;
    ls.emplace_back(LayerSpec::conv2d(width_, hidden, 1, 1, false), n + ".expand", rng);
    ls.push_back(bn_layer(hidden, n + ".expand_bn", rng, mom));
    ls.emplace_back(LayerSpec::dwconv2d(hidden, 3, false), n + ".dw", rng);
    ls.push_back(bn_layer(hidden, n + ".dw_bn", rng, mom));
    ls.emplace_back(LayerSpec::relu(), n + ".relu", rng);
    ls.emplace_back(LayerSpec::conv2d(hidden, width_, 1, 1, false), n + ".project", rng);
    ls.push_back(bn_layer(width_, n + ".project_bn", rng, mom));
    blocks_.emplace_back(std::move(ls));
  }
}

Tensor PvBackbone::forward(const Tensor& map, Mode mode) {
  if (map.rank() != 3 || map.dim(0) != in_channels_)
    throw ShapeError("pv_backbone: expected {" + std::to_string(in_channels_) +
                     ", H, W}, got " + shape_str(map.shape()));
  Tensor x = stem_.forward(map, mode);
  for (Sequential& b : blocks_) x = add(x, b.forward(x, mode));
  return x;
}

Tensor PvBackbone::backward(const Tensor& grad) {
  Tensor g = grad;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = add(g, it->backward(g));
  return stem_.backward(g);
}

void PvBackbone::collect_params(std::vector<Param*>& out) {
  stem_.collect_params(out);
  for (Sequential& b : blocks_) b.collect_params(out);
}

void PvBackbone::collect_buffers(std::vector<Param*>& out) {
  stem_.collect_buffers(out);
  for (Sequential& b : blocks_) b.collect_buffers(out);
}

BevBackbone::BevBackbone(std::size_t in_channels, const BackboneConfig& cfg,
                         std::mt19937_64& rng)
    : in_channels_(in_channels), up_width_(cfg.bev_up_width) {
  cfg.validate();
  const double mom = cfg.bn_momentum;
  std::size_t prev = in_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string n = "bev.stage" + std::to_string(s);
    const std::size_t w = cfg.bev_widths[s];
    Sequential seq = conv_bn(prev, w, 3, s == 0 ? 1 : 2, true, n + ".down", rng, mom);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      Sequential blk = conv_bn(w, w, 3, 1, true, n + ".conv" + std::to_string(b), rng, mom);
      for (Layer& l : blk.layers()) seq.layers().push_back(std::move(l));
    }
    stages_[s] = std::move(seq);

    const std::string u = "bev.up" + std::to_string(s);
    std::vector<Layer> ls;
    const std::size_t scale = std::size_t{1} << s;
    if (scale == 1)
      ls.emplace_back(LayerSpec::conv2d(w, up_width_, 1, 1, false), u + ".conv", rng);
    else
      ls.emplace_back(LayerSpec::deconv2d(w, up_width_, scale, false), u + ".deconv", rng);
    ls.push_back(bn_layer(up_width_, u + ".bn", rng, mom));
    ls.emplace_back(LayerSpec::relu(), u + ".relu", rng);
    ups_[s] = Sequential(std::move(ls));
    prev = w;
  }
}

std::array<std::array<std::size_t, 2>, 3> BevBackbone::stage_sizes(std::size_t h,
                                                                   std::size_t w) {
  validate_input(h, w);
  return {{{h, w}, {h / 2, w / 2}, {h / 4, w / 4}}};
}

void BevBackbone::validate_input(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0)
    throw ConfigError("bev_backbone: map size " + std::to_string(h) + "x" +
                      std::to_string(w) + " must be positive multiples of 4");
}

Tensor BevBackbone::forward(const Tensor& map, Mode mode) {
  if (map.rank() != 3 || map.dim(0) != in_channels_)
    throw ShapeError("bev_backbone: expected {" + std::to_string(in_channels_) +
                     ", H, W}, got " + shape_str(map.shape()));
  validate_input(map.dim(1), map.dim(2));
  std::array<Tensor, 3> ups;
  Tensor x = map;
  for (std::size_t s = 0; s < 3; ++s) {
    x = stages_[s].forward(x, mode);
    ups[s] = ups_[s].forward(x, mode);
  }
  const Tensor* parts[3] = {&ups[0], &ups[1], &ups[2]};
  return concat(parts);
}

Tensor BevBackbone::backward(const Tensor& grad) {
  const std::size_t widths[3] = {up_width_, up_width_, up_width_};
  std::vector<Tensor> g = concat_backward(grad, widths);
  Tensor carry;
  for (std::size_t s = 3; s-- > 0;) {
    Tensor gs = ups_[s].backward(g[s]);
    if (!carry.empty()) gs = add(gs, carry);
    carry = stages_[s].backward(gs);
  }
  return carry;
}

void BevBackbone::collect_params(std::vector<Param*>& out) {
  for (std::size_t s = 0; s < 3; ++s) {
    stages_[s].collect_params(out);
    ups_[s].collect_params(out);
  }
}

void BevBackbone::collect_buffers(std::vector<Param*>& out) {
  for (std::size_t s = 0; s < 3; ++s) {
    stages_[s].collect_buffers(out);
    ups_[s].collect_buffers(out);
  }
}

RpnHead::RpnHead(std::size_t in_channels, std::size_t anchors_per_loc,
                 std::size_t num_classes, std::mt19937_64& rng)
    : anchors_(anchors_per_loc), classes_(num_classes) {
  if (anchors_per_loc == 0 || num_classes == 0)
    throw ConfigError("rpn_head: anchors per location and classes must be positive");
  cls_ = Layer(LayerSpec::conv2d(in_channels, anchors_ * classes_, 1), "rpn.cls", rng);
  reg_ = Layer(LayerSpec::conv2d(in_channels, 7 * anchors_, 1), "rpn.reg", rng);
  cls_.params().trainable[1].value.fill(kClsPriorBias);
}

RpnOutput RpnHead::forward(const Tensor& features, Mode mode) {
  return {cls_.forward(features, mode), reg_.forward(features, mode)};
}

Tensor RpnHead::backward(const Tensor& grad_cls, const Tensor& grad_reg) {
  return add(cls_.backward(grad_cls), reg_.backward(grad_reg));
}

void RpnHead::collect_params(std::vector<Param*>& out) {
  cls_.collect_params(out);
  reg_.collect_params(out);
}

}  // namespace h23d
