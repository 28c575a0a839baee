#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rsknet/batchnorm.hpp"
#include "rsknet/conv.hpp"
#include "rsknet/kernels.hpp"
#include "rsknet/params.hpp"

namespace rsknet {

/// How the 3x3 convolutions inside residual blocks are realised.
enum class ConvKind { standard, depthwise_separable, grouped };

struct ConvKindSpec {
  ConvKind kind = ConvKind::standard;
  int groups = 4;  // used by ConvKind::grouped
};

/// Convolution layer bound to a weight tensor in a ParamStore.
template <typename T>
class Conv {
 public:
  struct Cache {
    Batch<T> x;
  };

  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& path, const ConvSpec& spec, Rng& rng)
      : spec_(spec) {
    spec.validate();
    weight_ = store.add(path, {spec.kernel_h, spec.kernel_w, spec.in_per_group(), spec.out_ch},
                        ParamKind::conv);
    const double fan_in = double(spec.kernel_h) * spec.kernel_w * spec.in_per_group();
    fill_normal(store.value(weight_), std::sqrt(2.0 / fan_in), rng);
  }

  const ConvSpec& spec() const { return spec_; }
  int weight_id() const { return weight_; }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    const auto w = ctx.params->value(weight_);
    Batch<T> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(conv2d<T>(x, spec_, w));
    if (cache) cache->x = xs;
    return out;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& gy,
                    GradStore<T>& grads) const {
    const auto w = ctx.params->value(weight_);
    Batch<T> gx(cache.x.size());
    for (std::size_t n = 0; n < gy.size(); ++n)
      conv2d_backward<T>(cache.x[n], spec_, w, gy[n], gx[n], grads[weight_]);
    return gx;
  }

 private:
  ConvSpec spec_;
  int weight_ = -1;
};

/// A k x k convolution realised per ConvKindSpec: one standard conv, one
/// grouped conv, or a depthwise conv followed by a pointwise conv. 1x1
/// convolutions are always standard.
template <typename T>
class ConvUnit {
 public:
  struct Cache {
    std::vector<typename Conv<T>::Cache> parts;
  };

  ConvUnit() = default;
  ConvUnit(ParamStore<T>& store, const std::string& path, int in, int out, int kernel, int stride,
           int dilation, ConvKindSpec kind, Rng& rng) {
    const bool spatial = kernel > 1;
    if (!spatial || kind.kind == ConvKind::standard) {
      parts_.emplace_back(store, path + ".weight", ConvSpec{kernel, kernel, in, out, stride, dilation, 1},
                          rng);
    } else if (kind.kind == ConvKind::grouped) {
      parts_.emplace_back(store, path + ".weight",
                          ConvSpec{kernel, kernel, in, out, stride, dilation, kind.groups}, rng);
    } else {
      parts_.emplace_back(store, path + ".dw.weight",
                          ConvSpec{kernel, kernel, in, in, stride, dilation, in}, rng);
      parts_.emplace_back(store, path + ".pw.weight", ConvSpec{1, 1, in, out, 1, 1, 1}, rng);
    }
  }

  const std::vector<Conv<T>>& parts() const { return parts_; }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    if (cache) cache->parts.resize(parts_.size());
    Batch<T> h = parts_[0].forward(ctx, xs, cache ? &cache->parts[0] : nullptr);
    for (std::size_t i = 1; i < parts_.size(); ++i)
      h = parts_[i].forward(ctx, h, cache ? &cache->parts[i] : nullptr);
    return h;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, Batch<T> gy, GradStore<T>& grads) const {
    for (std::size_t i = parts_.size(); i-- > 0;)
      gy = parts_[i].backward(ctx, cache.parts[i], gy, grads);
    return gy;
  }

 private:
  std::vector<Conv<T>> parts_;
};

/// Batch normalization bound to gamma/beta and running statistics in a
/// ParamStore. eps = 1e-5, momentum = 0.1.
template <typename T>
class BatchNorm {
 public:
  using Cache = BatchNormCache<T>;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& path, int channels) : channels_(channels) {
    gamma_ = store.add(path + ".gamma", {channels}, ParamKind::bn, T(1));
    beta_ = store.add(path + ".beta", {channels}, ParamKind::bn, T(0));
    mean_ = store.add(path + ".running_mean", {channels}, ParamKind::buffer, T(0));
    var_ = store.add(path + ".running_var", {channels}, ParamKind::buffer, T(1));
  }

  int channels() const { return channels_; }
  int gamma_id() const { return gamma_; }
  int beta_id() const { return beta_; }
  int mean_id() const { return mean_; }
  int var_id() const { return var_; }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    const ParamStore<T>& p = *ctx.params;
    BatchNormRefs<T> refs{p.value(gamma_), p.value(beta_), p.value(mean_), p.value(var_), {}, {},
                          eps, momentum};
    if (ctx.mode == Mode::train && ctx.stats) {
      refs.update_mean = ctx.stats->value(mean_);
      refs.update_var = ctx.stats->value(var_);
    }
    return batch_norm_forward(xs, refs, ctx.mode, cache);
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& gy,
                    GradStore<T>& grads) const {
    return batch_norm_backward(gy, ctx.params->value(gamma_), cache, grads[gamma_], grads[beta_]);
  }

  static constexpr double eps = 1e-5;
  static constexpr double momentum = 0.1;

 private:
  int channels_ = 0;
  int gamma_ = -1, beta_ = -1, mean_ = -1, var_ = -1;
};

/// conv -> BN -> ReLU, the stem and the SK branch building block.
template <typename T>
class ConvBnRelu {
 public:
  struct Cache {
    typename ConvUnit<T>::Cache conv;
    typename BatchNorm<T>::Cache bn;
    Batch<T> y;
  };

  ConvBnRelu() = default;
  ConvBnRelu(ParamStore<T>& store, const std::string& path, int in, int out, int kernel,
             int stride, int dilation, ConvKindSpec kind, Rng& rng)
      : conv_(store, path + ".conv", in, out, kernel, stride, dilation, kind, rng),
        bn_(store, path + ".bn", out) {}

  const ConvUnit<T>& conv() const { return conv_; }
  const BatchNorm<T>& bn() const { return bn_; }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    Batch<T> h = conv_.forward(ctx, xs, cache ? &cache->conv : nullptr);
    h = bn_.forward(ctx, h, cache ? &cache->bn : nullptr);
    relu_inplace(h);
    if (cache) cache->y = h;
    return h;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, Batch<T> gy, GradStore<T>& grads) const {
    relu_backward_inplace(gy, cache.y);
    gy = bn_.backward(ctx, cache.bn, gy, grads);
    return conv_.backward(ctx, cache.conv, std::move(gy), grads);
  }

 private:
  ConvUnit<T> conv_;
  BatchNorm<T> bn_;
};

}  // namespace rsknet
