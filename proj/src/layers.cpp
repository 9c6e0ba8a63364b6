#include "h23d/layers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "h23d/error.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

namespace {

std::atomic<bool> g_check_finite{false};
std::atomic<int> g_fault_kind{-1};

bool fault_for(LayerKind kind) {
  return g_fault_kind.load() == static_cast<int>(kind);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

std::vector<std::uint64_t> param_versions(const LayerParams& p) {
  std::vector<std::uint64_t> v;
  v.reserve(p.trainable.size());
  for (const Param& q : p.trainable) v.push_back(q.version);
  return v;
}

// Per-channel view description for BN: `channels` groups, each of `count`
// elements; element e of channel c sits at offset(c, e).
struct ChannelLayout {
  std::size_t channels = 0;
  std::size_t count = 0;
  bool channel_last = false;  // {N, C}
  std::size_t index(std::size_t c, std::size_t e) const {
    return channel_last ? e * channels + c : c * count + e;
  }
};

ChannelLayout bn_layout(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(1), t.dim(0), true};
  if (t.rank() == 3) return {t.dim(0), t.dim(1) * t.dim(2), false};
  throw ShapeError("bn: input must be {N, C} or {C, H, W}, got " +
                   shape_str(t.shape()));
}

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor fc_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& in) {
  if (in.rank() != 2 || in.dim(1) != spec.in_channels)
    throw ShapeError("fc: expected {N, " + std::to_string(spec.in_channels) +
                     "}, got " + shape_str(in.shape()));
  const std::size_t n = in.dim(0), ci = spec.in_channels, co = spec.out_channels;
  const Tensor& w = p.trainable[0].value;
  Tensor out({n, co});
  parallel_for(0, n, [&](std::size_t r) {
    const double* x = in.data().data() + r * ci;
    double* y = out.data().data() + r * co;
    for (std::size_t o = 0; o < co; ++o) {
      const double* wr = w.data().data() + o * ci;
      double acc = spec.bias ? p.trainable[1].value[o] : 0.0;
      for (std::size_t i = 0; i < ci; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }, 64);
  return out;
}

Tensor fc_backward(const LayerSpec& spec, LayerParams& p, const LayerCache& cache,
                   const Tensor& g) {
  const Tensor& in = cache.input;
  const std::size_t n = in.dim(0), ci = spec.in_channels, co = spec.out_channels;
  require_shape(g, {n, co}, "fc backward");
  Tensor& w = p.trainable[0].value;
  Tensor grad_in({n, ci});
  parallel_for(0, n, [&](std::size_t r) {
    double* gx = grad_in.data().data() + r * ci;
    const double* gy = g.data().data() + r * co;
    for (std::size_t o = 0; o < co; ++o) {
      const double* wr = w.data().data() + o * ci;
      for (std::size_t i = 0; i < ci; ++i) gx[i] += gy[o] * wr[i];
    }
  }, 64);
  auto gw = w.grad();
  std::span<double> gb;
  if (spec.bias) gb = p.trainable[1].value.grad();
  parallel_for(0, co, [&](std::size_t o) {
    double* gwr = gw.data() + o * ci;
    double bsum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double gy = g.at(r, o);
      if (gy == 0.0) continue;
      const double* x = in.data().data() + r * ci;
      for (std::size_t i = 0; i < ci; ++i) gwr[i] += gy * x[i];
      bsum += gy;
    }
    if (spec.bias) gb[o] += bsum;
  });
  return grad_in;
}

Tensor conv_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& in) {
  if (in.rank() != 3 || in.dim(0) != spec.in_channels)
    throw ShapeError("conv2d: expected {" + std::to_string(spec.in_channels) +
                     ", H, W}, got " + shape_str(in.shape()));
  const std::size_t ci = spec.in_channels, co = spec.out_channels;
  const std::size_t h = in.dim(1), wdt = in.dim(2);
  const std::size_t k = spec.kernel, s = spec.stride;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t ho = conv_out(h, k, s), wo = conv_out(wdt, k, s);
  const Tensor& w = p.trainable[0].value;
  Tensor out({co, ho, wo});
  parallel_for(0, co, [&](std::size_t o) {
    double* y = out.data().data() + o * ho * wo;
    if (spec.bias) std::fill(y, y + ho * wo, p.trainable[1].value[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const double* x = in.data().data() + c * h * wdt;
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
          const double wv = w[((o * ci + c) * k + kh) * k + kw];
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * s + kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* xr = x + ih * wdt;
            double* yr = y + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * s + kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wdt)) continue;
              yr[ow] += wv * xr[iw];
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor conv_backward(const LayerSpec& spec, LayerParams& p, const LayerCache& cache,
                     const Tensor& g) {
  const Tensor& in = cache.input;
  const std::size_t ci = spec.in_channels, co = spec.out_channels;
  const std::size_t h = in.dim(1), wdt = in.dim(2);
  const std::size_t k = spec.kernel, s = spec.stride;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t ho = conv_out(h, k, s), wo = conv_out(wdt, k, s);
  require_shape(g, {co, ho, wo}, "conv2d backward");
  Tensor& w = p.trainable[0].value;

  Tensor grad_in(in.shape());
  parallel_for(0, ci, [&](std::size_t c) {
    double* gx = grad_in.data().data() + c * h * wdt;
    for (std::size_t o = 0; o < co; ++o) {
      const double* gy = g.data().data() + o * ho * wo;
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
          const double wv = w[((o * ci + c) * k + kh) * k + kw];
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * s + kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            double* gxr = gx + ih * wdt;
            const double* gyr = gy + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * s + kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wdt)) continue;
              gxr[iw] += wv * gyr[ow];
            }
          }
        }
      }
    }
  });

  auto gw = w.grad();
  std::span<double> gb;
  if (spec.bias) gb = p.trainable[1].value.grad();
  parallel_for(0, co, [&](std::size_t o) {
    const double* gy = g.data().data() + o * ho * wo;
    if (spec.bias) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ho * wo; ++i) acc += gy[i];
      gb[o] += acc;
    }
    for (std::size_t c = 0; c < ci; ++c) {
      const double* x = in.data().data() + c * h * wdt;
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
          double acc = 0.0;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * s + kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* xr = x + ih * wdt;
            const double* gyr = gy + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * s + kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wdt)) continue;
              acc += gyr[ow] * xr[iw];
            }
          }
          gw[((o * ci + c) * k + kh) * k + kw] += acc;
        }
      }
    }
  });
  return grad_in;
}

Tensor bn_forward(const LayerSpec& spec, LayerParams& p, const Tensor& in, Mode mode,
                  LayerCache* cache) {
  const ChannelLayout L = bn_layout(in);
  if (L.channels != spec.in_channels)
    throw ShapeError("bn: expected " + std::to_string(spec.in_channels) +
                     " channels, got " + shape_str(in.shape()));
  if (mode == Mode::train && L.count < 2)
    throw ShapeError("bn: batch statistics need at least 2 samples per channel");
  const Tensor& gamma = p.trainable[0].value;
  const Tensor& beta = p.trainable[1].value;
  Tensor& rmean = p.buffers[0].value;
  Tensor& rvar = p.buffers[1].value;
  Tensor out(in.shape());
  Tensor xhat(in.shape());
  std::vector<double> inv_std(L.channels);
  parallel_for(0, L.channels, [&](std::size_t c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t e = 0; e < L.count; ++e) sum += in[L.index(c, e)];
      mean = sum / static_cast<double>(L.count);
      double sq = 0.0;
      for (std::size_t e = 0; e < L.count; ++e) {
        const double d = in[L.index(c, e)] - mean;
        sq += d * d;
      }
      var = sq / static_cast<double>(L.count);
      const double m = spec.bn_momentum;
      rmean[c] = (1 - m) * rmean[c] + m * mean;
      rvar[c] = (1 - m) * rvar[c] +
                m * var * static_cast<double>(L.count) / static_cast<double>(L.count - 1);
    } else {
      mean = rmean[c];
      var = rvar[c];
    }
    const double is = 1.0 / std::sqrt(var + spec.bn_eps);
    inv_std[c] = is;
    for (std::size_t e = 0; e < L.count; ++e) {
      const std::size_t i = L.index(c, e);
      xhat[i] = (in[i] - mean) * is;
      out[i] = gamma[c] * xhat[i] + beta[c];
    }
  });
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor bn_backward(LayerParams& p, const LayerCache& cache, const Tensor& g) {
  require_same_shape(g, cache.xhat, "bn backward");
  const ChannelLayout L = bn_layout(g);
  const Tensor& gamma = p.trainable[0].value;
  auto ggamma = p.trainable[0].value.grad();
  auto gbeta = p.trainable[1].value.grad();
  const bool faulty = fault_for(LayerKind::bn);
  Tensor grad_in(g.shape());
  parallel_for(0, L.channels, [&](std::size_t c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t e = 0; e < L.count; ++e) {
      const std::size_t i = L.index(c, e);
      sum_g += g[i];
      sum_gx += g[i] * cache.xhat[i];
    }
    ggamma[c] += sum_gx;
    gbeta[c] += sum_g;
    const double is = cache.inv_std[c];
    if (cache.mode == Mode::eval) {
      for (std::size_t e = 0; e < L.count; ++e) {
        const std::size_t i = L.index(c, e);
        grad_in[i] = g[i] * gamma[c] * is;
      }
      return;
    }
    const double m = static_cast<double>(L.count);
    const double mean_g = sum_g / m;
    // The injected fault drops the projection onto xhat.
    const double mean_gx = faulty ? 0.0 : sum_gx / m;
    for (std::size_t e = 0; e < L.count; ++e) {
      const std::size_t i = L.index(c, e);
      grad_in[i] = gamma[c] * is * (g[i] - mean_g - cache.xhat[i] * mean_gx);
    }
  });
  return grad_in;
}

Tensor upsample_forward(const LayerSpec& spec, const Tensor& in) {
  if (in.rank() != 3) throw ShapeError("upsample: input must be {C, H, W}");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2), s = spec.scale;
  Tensor out({c, h * s, w * s});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * s; ++y)
      for (std::size_t x = 0; x < w * s; ++x)
        out.at(ch, y, x) = in.at(ch, y / s, x / s);
  return out;
}

Tensor upsample_backward(const LayerSpec& spec, const LayerCache& cache, const Tensor& g) {
  const Shape& in = cache.in_shape;
  const std::size_t s = spec.scale;
  require_shape(g, {in[0], in[1] * s, in[2] * s}, "upsample backward");
  Tensor grad_in(in);
  for (std::size_t ch = 0; ch < in[0]; ++ch)
    for (std::size_t y = 0; y < in[1] * s; ++y)
      for (std::size_t x = 0; x < in[2] * s; ++x)
        grad_in.at(ch, y / s, x / s) += g.at(ch, y, x);
  return grad_in;
}

Tensor dwconv_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& in) {
  if (in.rank() != 3 || in.dim(0) != spec.in_channels)
    throw ShapeError("dwconv2d: expected {" + std::to_string(spec.in_channels) +
                     ", H, W}, got " + shape_str(in.shape()));
  const std::size_t ch = spec.in_channels, h = in.dim(1), wdt = in.dim(2);
  const std::size_t k = spec.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const Tensor& w = p.trainable[0].value;
  Tensor out({ch, h, wdt});
  parallel_for(0, ch, [&](std::size_t c) {
    const double b = spec.bias ? p.trainable[1].value[c] : 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < wdt; ++x) {
        double acc = b;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const auto iy = static_cast<std::ptrdiff_t>(y + kh) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const auto ix = static_cast<std::ptrdiff_t>(x + kw) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wdt)) continue;
            acc += w[(c * k + kh) * k + kw] * in.at(c, iy, ix);
          }
        }
        out.at(c, y, x) = acc;
      }
  });
  return out;
}

Tensor dwconv_backward(const LayerSpec& spec, LayerParams& p, const LayerCache& cache,
                       const Tensor& g) {
  const Tensor& in = cache.input;
  require_same_shape(g, in, "dwconv2d backward");
  const std::size_t ch = spec.in_channels, h = in.dim(1), wdt = in.dim(2);
  const std::size_t k = spec.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const Tensor& w = p.trainable[0].value;
  auto gw = p.trainable[0].value.grad();
  std::span<double> gb;
  if (spec.bias) gb = p.trainable[1].value.grad();
  Tensor grad_in(in.shape());
  parallel_for(0, ch, [&](std::size_t c) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < wdt; ++x) {
        const double go = g.at(c, y, x);
        if (spec.bias) gb[c] += go;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const auto iy = static_cast<std::ptrdiff_t>(y + kh) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const auto ix = static_cast<std::ptrdiff_t>(x + kw) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wdt)) continue;
            gw[(c * k + kh) * k + kw] += go * in.at(c, iy, ix);
            grad_in.at(c, iy, ix) += go * w[(c * k + kh) * k + kw];
          }
        }
      }
  });
  return grad_in;
}

// Transposed convolution with kernel == stride == scale: every input pixel
// writes its own scale x scale output block.
Tensor deconv_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& in) {
  if (in.rank() != 3 || in.dim(0) != spec.in_channels)
    throw ShapeError("deconv2d: expected {" + std::to_string(spec.in_channels) +
                     ", H, W}, got " + shape_str(in.shape()));
  const std::size_t ci = spec.in_channels, co = spec.out_channels, s = spec.scale;
  const std::size_t h = in.dim(1), wdt = in.dim(2);
  const Tensor& w = p.trainable[0].value;
  Tensor out({co, h * s, wdt * s});
  parallel_for(0, co, [&](std::size_t o) {
    const double b = spec.bias ? p.trainable[1].value[o] : 0.0;
    for (std::size_t y = 0; y < h * s; ++y)
      for (std::size_t x = 0; x < wdt * s; ++x) {
        double acc = b;
        for (std::size_t c = 0; c < ci; ++c)
          acc += w[((c * co + o) * s + y % s) * s + x % s] * in.at(c, y / s, x / s);
        out.at(o, y, x) = acc;
      }
  });
  return out;
}

Tensor deconv_backward(const LayerSpec& spec, LayerParams& p, const LayerCache& cache,
                       const Tensor& g) {
  const Tensor& in = cache.input;
  const std::size_t ci = spec.in_channels, co = spec.out_channels, s = spec.scale;
  const std::size_t h = in.dim(1), wdt = in.dim(2);
  require_shape(g, {co, h * s, wdt * s}, "deconv2d backward");
  const Tensor& w = p.trainable[0].value;
  auto gw = p.trainable[0].value.grad();
  parallel_for(0, ci, [&](std::size_t c) {
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < h * s; ++y)
        for (std::size_t x = 0; x < wdt * s; ++x)
          gw[((c * co + o) * s + y % s) * s + x % s] += g.at(o, y, x) * in.at(c, y / s, x / s);
  });
  if (spec.bias) {
    auto gb = p.trainable[1].value.grad();
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < h * s * wdt * s; ++i) gb[o] += g[o * h * s * wdt * s + i];
  }
  Tensor grad_in(in.shape());
  parallel_for(0, ci, [&](std::size_t c) {
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < h * s; ++y)
        for (std::size_t x = 0; x < wdt * s; ++x)
          grad_in.at(c, y / s, x / s) += w[((c * co + o) * s + y % s) * s + x % s] * g.at(o, y, x);
  });
  return grad_in;
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::fc: return "fc";
    case LayerKind::bn: return "bn";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::upsample: return "upsample";
    case LayerKind::deconv2d: return "deconv2d";
    case LayerKind::dwconv2d: return "dwconv2d";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

LayerSpec LayerSpec::fc(std::size_t in, std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::fc;
  s.in_channels = in;
  s.out_channels = out;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::bn(std::size_t channels, double momentum) {
  LayerSpec s;
  s.kind = LayerKind::bn;
  s.in_channels = s.out_channels = channels;
  s.bn_momentum = momentum;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::sigmoid;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::dwconv2d(std::size_t channels, std::size_t kernel, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::dwconv2d;
  s.in_channels = s.out_channels = channels;
  s.kernel = kernel;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::deconv2d(std::size_t in, std::size_t out, std::size_t scale,
                              bool bias) {
  LayerSpec s;
  s.kind = LayerKind::deconv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = s.stride = s.scale = scale;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::upsample(std::size_t scale) {
  LayerSpec s;
  s.kind = LayerKind::upsample;
  s.scale = scale;
  return s;
}

void LayerSpec::validate() const {
  auto need = [&](bool ok, const char* what) {
    if (!ok)
      throw ConfigError(std::string(layer_kind_name(kind)) + ": " + what);
  };
  switch (kind) {
    case LayerKind::fc:
      need(in_channels > 0 && out_channels > 0, "channels must be positive");
      break;
    case LayerKind::bn:
      need(in_channels > 0, "channels must be positive");
      need(bn_eps > 0 && bn_momentum > 0 && bn_momentum <= 1,
           "epsilon/momentum out of range");
      break;
    case LayerKind::conv2d:
      need(in_channels > 0 && out_channels > 0, "channels must be positive");
      need(kernel > 0 && kernel % 2 == 1, "kernel must be odd and positive");
      need(stride > 0, "stride must be positive");
      break;
    case LayerKind::upsample:
      need(scale > 0, "scale must be positive");
      break;
    case LayerKind::dwconv2d:
      need(in_channels > 0 && in_channels == out_channels, "channels must be positive and equal");
      need(kernel > 0 && kernel % 2 == 1, "kernel must be odd and positive");
      break;
    case LayerKind::deconv2d:
      need(in_channels > 0 && out_channels > 0, "channels must be positive");
      need(scale > 0, "scale must be positive");
      break;
    default:
      break;
  }
}

LayerParams init_layer_params(const LayerSpec& spec, const std::string& name,
                              std::mt19937_64& rng) {
  spec.validate();
  LayerParams p;
  switch (spec.kind) {
    case LayerKind::fc:
      p.trainable.push_back({name + ".weight",
                             kaiming_uniform({spec.out_channels, spec.in_channels},
                                             spec.in_channels, rng)});
      if (spec.bias) p.trainable.push_back({name + ".bias", Tensor({spec.out_channels})});
      break;
    case LayerKind::conv2d: {
      const std::size_t fan_in = spec.in_channels * spec.kernel * spec.kernel;
      p.trainable.push_back(
          {name + ".weight",
           kaiming_uniform({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                           fan_in, rng)});
      if (spec.bias) p.trainable.push_back({name + ".bias", Tensor({spec.out_channels})});
      break;
    }
    case LayerKind::dwconv2d:
      p.trainable.push_back({name + ".weight",
                             kaiming_uniform({spec.in_channels, spec.kernel, spec.kernel},
                                             spec.kernel * spec.kernel, rng)});
      if (spec.bias) p.trainable.push_back({name + ".bias", Tensor({spec.out_channels})});
      break;
    case LayerKind::deconv2d:
      p.trainable.push_back(
          {name + ".weight",
           kaiming_uniform({spec.in_channels, spec.out_channels, spec.scale, spec.scale},
                           spec.in_channels, rng)});
      if (spec.bias) p.trainable.push_back({name + ".bias", Tensor({spec.out_channels})});
      break;
    case LayerKind::bn:
      p.trainable.push_back({name + ".gamma", Tensor({spec.in_channels}, 1.0)});
      p.trainable.push_back({name + ".beta", Tensor({spec.in_channels}, 0.0)});
      p.buffers.push_back({name + ".running_mean", Tensor({spec.in_channels}, 0.0)});
      p.buffers.push_back({name + ".running_var", Tensor({spec.in_channels}, 1.0)});
      break;
    default:
      break;
  }
  return p;
}

Tensor layer_forward(const LayerSpec& spec, LayerParams& params, const Tensor& input,
                     Mode mode, LayerCache* cache) {
  Tensor out;
  if (cache) {
    cache->valid = false;
    cache->input = Tensor();
    cache->output = Tensor();
  }
  switch (spec.kind) {
    case LayerKind::fc:
      out = fc_forward(spec, params, input);
      if (cache) cache->input = input;
      break;
    case LayerKind::conv2d:
      out = conv_forward(spec, params, input);
      if (cache) cache->input = input;
      break;
    case LayerKind::bn:
      out = bn_forward(spec, params, input, mode, cache);
      break;
    case LayerKind::relu:
      out = input;
      for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
      if (cache) cache->input = input;
      break;
    case LayerKind::sigmoid:
      out = input;
      for (double& v : out.values()) v = sigmoid(v);
      if (cache) cache->output = out;
      break;
    case LayerKind::upsample:
      out = upsample_forward(spec, input);
      break;
    case LayerKind::dwconv2d:
      out = dwconv_forward(spec, params, input);
      if (cache) cache->input = input;
      break;
    case LayerKind::deconv2d:
      out = deconv_forward(spec, params, input);
      if (cache) cache->input = input;
      break;
    case LayerKind::concat:
      throw ShapeError("concat takes several inputs; use concat()");
  }
  if (g_check_finite.load() && !out.all_finite())
    throw NumericalError(std::string("non-finite output from ") +
                         layer_kind_name(spec.kind));
  if (cache) {
    cache->valid = true;
    cache->kind = spec.kind;
    cache->mode = mode;
    cache->in_shape = input.shape();
    cache->versions = param_versions(params);
  }
  return out;
}

Tensor layer_backward(const LayerSpec& spec, LayerParams& params,
                      const LayerCache& cache, const Tensor& grad_out) {
  if (!cache.valid || cache.kind != spec.kind)
    throw ShapeError(std::string(layer_kind_name(spec.kind)) +
                     " backward: no matching forward cache");
  if (cache.versions != param_versions(params))
    throw ShapeError(std::string(layer_kind_name(spec.kind)) +
                     " backward: parameters changed since forward (stale cache)");
  Tensor grad;
  switch (spec.kind) {
    case LayerKind::fc:
      grad = fc_backward(spec, params, cache, grad_out);
      break;
    case LayerKind::conv2d:
      grad = conv_backward(spec, params, cache, grad_out);
      break;
    case LayerKind::bn:
      grad = bn_backward(params, cache, grad_out);
      break;
    case LayerKind::relu:
      require_same_shape(grad_out, cache.input, "relu backward");
      grad = grad_out;
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(cache.input[i] > 0.0)) grad[i] = 0.0;
      break;
    case LayerKind::sigmoid:
      require_same_shape(grad_out, cache.output, "sigmoid backward");
      grad = grad_out;
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] *= cache.output[i] * (1.0 - cache.output[i]);
      break;
    case LayerKind::upsample:
      grad = upsample_backward(spec, cache, grad_out);
      break;
    case LayerKind::dwconv2d:
      grad = dwconv_backward(spec, params, cache, grad_out);
      break;
    case LayerKind::deconv2d:
      grad = deconv_backward(spec, params, cache, grad_out);
      break;
    case LayerKind::concat:
      throw ShapeError("concat takes several inputs; use concat_backward()");
  }
  if (fault_for(spec.kind) && spec.kind != LayerKind::bn)
    for (double& v : grad.values()) v *= 1.01;
  return grad;
}

std::size_t channel_axis(const Tensor& t) {
  if (t.rank() == 2) return 1;
  if (t.rank() == 3) return 0;
  throw ShapeError("channel axis defined for {N, C} and {C, H, W} only");
}

std::size_t channel_count(const Tensor& t) { return t.dim(channel_axis(t)); }

Tensor concat(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = *parts.front();
  const std::size_t axis = channel_axis(first);
  std::size_t total = 0;
  for (const Tensor* t : parts) {
    if (t->rank() != first.rank())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.rank(); ++d)
      if (d != axis && t->dim(d) != first.dim(d))
        throw ShapeError("concat: shape mismatch " + shape_str(t->shape()) +
                         " vs " + shape_str(first.shape()));
    total += t->dim(axis);
  }
  Shape shape = first.shape();
  shape[axis] = total;
  Tensor out(shape);
  if (axis == 0) {
    std::size_t off = 0;
    for (const Tensor* t : parts) {
      std::copy(t->values().begin(), t->values().end(), out.values().begin() + off);
      off += t->size();
    }
  } else {
    const std::size_t n = first.dim(0);
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t off = 0;
      for (const Tensor* t : parts) {
        auto src = t->row(r);
        std::copy(src.begin(), src.end(), out.row(r).begin() + off);
        off += src.size();
      }
    }
  }
  return out;
}

std::vector<Tensor> concat_backward(const Tensor& grad,
                                    std::span<const std::size_t> widths) {
  const std::size_t axis = channel_axis(grad);
  std::size_t total = 0;
  for (std::size_t w : widths) total += w;
  if (total != grad.dim(axis))
    throw ShapeError("concat_backward: widths do not sum to channel count");
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (std::size_t w : widths) {
    Shape shape = grad.shape();
    shape[axis] = w;
    Tensor part(shape);
    if (axis == 0) {
      const std::size_t plane = grad.dim(1) * grad.dim(2);
      std::copy_n(grad.values().begin() + off * plane, w * plane, part.values().begin());
    } else {
      for (std::size_t r = 0; r < grad.dim(0); ++r) {
        auto src = grad.row(r).subspan(off, w);
        std::copy(src.begin(), src.end(), part.row(r).begin());
      }
    }
    out.push_back(std::move(part));
    off += w;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

std::pair<Tensor, Tensor> mul_backward(const Tensor& grad, const Tensor& a,
                                       const Tensor& b) {
  require_same_shape(grad, a, "mul backward");
  require_same_shape(grad, b, "mul backward");
  return {mul(grad, b), mul(grad, a)};
}

Layer::Layer(LayerSpec spec, std::string name, std::mt19937_64& rng)
    : spec_(spec), name_(std::move(name)), params_(init_layer_params(spec_, name_, rng)) {}

Tensor Layer::forward(const Tensor& input, Mode mode) {
  try {
    return layer_forward(spec_, params_, input, mode, &cache_);
  } catch (const ShapeError& e) {
    throw ShapeError(name_ + ": " + e.what());
  }
}

Tensor Layer::backward(const Tensor& grad_out) {
  try {
    return layer_backward(spec_, params_, cache_, grad_out);
  } catch (const ShapeError& e) {
    throw ShapeError(name_ + ": " + e.what());
  }
}

void Layer::collect_params(std::vector<Param*>& out) {
  for (Param& p : params_.trainable) out.push_back(&p);
}

void Layer::collect_buffers(std::vector<Param*>& out) {
  for (Param& p : params_.buffers) out.push_back(&p);
}

Tensor Sequential::forward(const Tensor& input, Mode mode) {
  Tensor x = input;
  for (Layer& l : layers_) x = l.forward(x, mode);
  return x;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->backward(g);
  return g;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (Layer& l : layers_) l.collect_params(out);
}

void Sequential::collect_buffers(std::vector<Param*>& out) {
  for (Layer& l : layers_) l.collect_buffers(out);
}

Sequential fc_bn_relu(std::size_t in, std::size_t out, const std::string& name,
                      std::mt19937_64& rng, double bn_momentum) {
  std::vector<Layer> layers;
  layers.emplace_back(LayerSpec::fc(in, out, false), name + ".fc", rng);
  layers.emplace_back(LayerSpec::bn(out, bn_momentum), name + ".bn", rng);
  layers.emplace_back(LayerSpec::relu(), name + ".relu", rng);
  return Sequential(std::move(layers));
}

Sequential conv_bn(std::size_t in, std::size_t out, std::size_t kernel,
                   std::size_t stride, bool relu, const std::string& name,
                   std::mt19937_64& rng, double bn_momentum) {
  std::vector<Layer> layers;
  layers.emplace_back(LayerSpec::conv2d(in, out, kernel, stride, false), name + ".conv", rng);
  layers.emplace_back(LayerSpec::bn(out, bn_momentum), name + ".bn", rng);
  if (relu) layers.emplace_back(LayerSpec::relu(), name + ".relu", rng);
  return Sequential(std::move(layers));
}

void set_check_finite(bool on) { g_check_finite.store(on); }
bool check_finite_enabled() { return g_check_finite.load(); }

void set_fault_injection(std::optional<LayerKind> kind) {
  g_fault_kind.store(kind ? static_cast<int>(*kind) : -1);
}

}  // namespace h23d
