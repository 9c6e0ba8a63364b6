#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "h23d/tensor.hpp"

namespace h23d {

enum class LayerKind { fc, bn, relu, sigmoid, conv2d, upsample, dwconv2d,
                       deconv2d, concat };
enum class Mode { train, eval };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t scale = 2;  // upsample factor
  bool bias = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  static LayerSpec fc(std::size_t in, std::size_t out, bool bias = true);
  static LayerSpec bn(std::size_t channels, double momentum = 0.1);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride = 1, bool bias = true);
  static LayerSpec upsample(std::size_t scale);
  // Depthwise convolution, stride 1, same padding.
  static LayerSpec dwconv2d(std::size_t channels, std::size_t kernel, bool bias = true);
  // Transposed convolution, kernel = stride = scale.
  static LayerSpec deconv2d(std::size_t in, std::size_t out, std::size_t scale,
                            bool bias = true);

  void validate() const;
};

// A trainable (or buffered) tensor. The gradient lives in value.grad().
// `version` is bumped by every optimizer update.
struct Param {
  std::string name;
  Tensor value;
  std::uint64_t version = 0;
};

struct LayerParams {
  std::vector<Param> trainable;  // fc/conv: weight[, bias]; bn: gamma, beta
  std::vector<Param> buffers;    // bn: running_mean, running_var
};

struct LayerCache {
  bool valid = false;
  LayerKind kind = LayerKind::relu;
  Mode mode = Mode::train;
  std::vector<std::uint64_t> versions;
  Shape in_shape;
  Tensor input;   // fc, conv2d, relu
  Tensor output;  // sigmoid
  Tensor xhat;    // bn
  std::vector<double> inv_std;  // bn
};

LayerParams init_layer_params(const LayerSpec& spec, const std::string& name,
                              std::mt19937_64& rng);

// Standard forward definitions. BN normalises per channel over all other
// axes: {N, C} over N, {C, H, W} over H*W. Train mode uses batch statistics
// and refreshes the running buffers; eval mode uses the buffers.
Tensor layer_forward(const LayerSpec& spec, LayerParams& params,
                     const Tensor& input, Mode mode, LayerCache* cache);

// Exact reverse-mode derivative. Parameter gradients are accumulated into
// params.trainable[*].value.grad(); the input gradient is returned.
// Throws ShapeError on a stale or mismatched cache.
Tensor layer_backward(const LayerSpec& spec, LayerParams& params,
                      const LayerCache& cache, const Tensor& grad_out);

// Channel-axis concatenation ({N, C} along C, {C, H, W} along C).
Tensor concat(std::span<const Tensor* const> parts);
std::vector<Tensor> concat_backward(const Tensor& grad,
                                    std::span<const std::size_t> widths);
std::size_t channel_axis(const Tensor& t);
std::size_t channel_count(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Gradients of mul: {g * b, g * a}.
std::pair<Tensor, Tensor> mul_backward(const Tensor& grad, const Tensor& a,
                                       const Tensor& b);

// Layer with its parameters and the cache of the latest forward.
class Layer {
 public:
  Layer() = default;
  Layer(LayerSpec spec, std::string name, std::mt19937_64& rng);

  Tensor forward(const Tensor& input, Mode mode);
  Tensor backward(const Tensor& grad_out);

  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);

  const LayerSpec& spec() const noexcept { return spec_; }
  const std::string& name() const noexcept { return name_; }
  LayerParams& params() noexcept { return params_; }
  const LayerCache& cache() const noexcept { return cache_; }

 private:
  LayerSpec spec_;
  std::string name_;
  LayerParams params_;
  LayerCache cache_;
};

// A chain of layers run in order; backward runs in reverse.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  Tensor forward(const Tensor& input, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Param*>& out);

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

 private:
  std::vector<Layer> layers_;
};

// FC -> BN -> ReLU, the recurring point-wise block. The FC drops its bias
// since BN removes it.
Sequential fc_bn_relu(std::size_t in, std::size_t out, const std::string& name,
                      std::mt19937_64& rng, double bn_momentum = 0.1);
// conv -> BN -> ReLU (ReLU omitted when relu == false).
Sequential conv_bn(std::size_t in, std::size_t out, std::size_t kernel,
                   std::size_t stride, bool relu, const std::string& name,
                   std::mt19937_64& rng, double bn_momentum = 0.1);

// Test-mode hook: when enabled every layer_forward rejects non-finite output.
void set_check_finite(bool on);
bool check_finite_enabled();

// Mutation hook for gradient-check self tests: the named kind's backward
// returns a deliberately wrong input gradient.
void set_fault_injection(std::optional<LayerKind> kind);

}  // namespace h23d
