#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rsknet/kernels.hpp"
#include "rsknet/layers.hpp"
#include "rsknet/params.hpp"

namespace rsknet {

/// Width of the squeezed attention descriptor: max(C / r, L), floor division.
constexpr int sk_hidden_dim(int channels, int reduction = 16, int min_dim = 32) {
  return std::max(channels / reduction, min_dim);
}

template <typename T>
struct BranchWeights {
  std::vector<std::vector<T>> a, b;  // per item, per channel; a + b = 1
};

/// Selective-kernel convolution: a standard 3x3 branch and a dilation-2 3x3
/// branch (each conv -> BN -> ReLU), fused by per-channel softmax attention
/// computed from the GAP of their sum.
template <typename T>
class SKConv {
 public:
  struct AttentionCache {
    Batch<T> s, zpre, z;
    BatchNormCache<T> bn_z;
    BranchWeights<T> weights;
  };
  struct Cache {
    typename ConvBnRelu<T>::Cache std_branch, dil_branch;
    AttentionCache att;
  };

  SKConv() = default;
  SKConv(ParamStore<T>& store, const std::string& path, int in, int channels, int stride,
         ConvKindSpec kind, Rng& rng)
      : channels_(channels),
        hidden_(sk_hidden_dim(channels)),
        std_(store, path + ".std", in, channels, 3, stride, 1, kind, rng),
        dil_(store, path + ".dil", in, channels, 3, stride, 2, kind, rng) {
    squeeze_ = store.add(path + ".squeeze", {hidden_, channels_}, ParamKind::attention);
    fill_uniform(store.value(squeeze_), 1.0 / std::sqrt(double(channels_)), rng);
    bn_z_ = BatchNorm<T>(store, path + ".bn_z", hidden_);
    att_a_ = store.add(path + ".att_a", {channels_, hidden_}, ParamKind::attention);
    att_b_ = store.add(path + ".att_b", {channels_, hidden_}, ParamKind::attention);
    fill_uniform(store.value(att_a_), 1.0 / std::sqrt(double(hidden_)), rng);
    fill_uniform(store.value(att_b_), 1.0 / std::sqrt(double(hidden_)), rng);
  }

  int channels() const { return channels_; }
  int hidden() const { return hidden_; }
  const ConvBnRelu<T>& std_branch() const { return std_; }
  const ConvBnRelu<T>& dil_branch() const { return dil_; }
  int squeeze_id() const { return squeeze_; }
  int att_a_id() const { return att_a_; }
  int att_b_id() const { return att_b_; }
  const BatchNorm<T>& bn_z() const { return bn_z_; }

  /// a_c, b_c from the fused map U: z = relu(BN(W * GAP(U))), then a pairwise
  /// softmax of A_c z and B_c z.
  BranchWeights<T> attention(const Ctx<T>& ctx, const Batch<T>& us, AttentionCache* cache) const {
    const ParamStore<T>& p = *ctx.params;
    Batch<T> s;
    s.reserve(us.size());
    for (const auto& u : us) {
      if (u.c != channels_)
        throw ShapeError("sk_attention: U has " + std::to_string(u.c) + " channels, W expects " +
                         std::to_string(channels_));
      s.push_back(Tensor3<T>::vector(global_avg_pool(u)));
    }
    Batch<T> zpre = linear_forward<T>(s, p.value(squeeze_), {}, hidden_);
    Batch<T> z = bn_z_.forward(ctx, zpre, cache ? &cache->bn_z : nullptr);
    relu_inplace(z);

    const auto A = p.value(att_a_), B = p.value(att_b_);
    BranchWeights<T> w;
    w.a.resize(us.size());
    w.b.resize(us.size());
    for (std::size_t n = 0; n < us.size(); ++n) {
      w.a[n].resize(channels_);
      w.b[n].resize(channels_);
      const T* zn = z[n].data.data();
      for (int c = 0; c < channels_; ++c) {
        double la = 0, lb = 0;
        for (int k = 0; k < hidden_; ++k) {
          la += static_cast<double>(A[c * hidden_ + k]) * zn[k];
          lb += static_cast<double>(B[c * hidden_ + k]) * zn[k];
        }
        const double mx = std::max(la, lb);
        const double ea = std::exp(la - mx), eb = std::exp(lb - mx);
        w.a[n][c] = static_cast<T>(ea / (ea + eb));
        w.b[n][c] = static_cast<T>(eb / (ea + eb));
      }
    }
    if (cache) {
      cache->s = std::move(s);
      cache->zpre = std::move(zpre);
      cache->z = std::move(z);
      cache->weights = w;
    }
    return w;
  }

  /// Given dL/da and dL/db per item, accumulates attention gradients and
  /// returns dL/ds (the GAP descriptor).
  Batch<T> attention_backward(const Ctx<T>& ctx, const AttentionCache& cache,
                              const std::vector<std::vector<double>>& ga,
                              const std::vector<std::vector<double>>& gb,
                              GradStore<T>& grads) const {
    const ParamStore<T>& p = *ctx.params;
    const auto A = p.value(att_a_), B = p.value(att_b_);
    auto gA = grads[att_a_], gB = grads[att_b_];
    Batch<T> gz;
    gz.reserve(ga.size());
    for (std::size_t n = 0; n < ga.size(); ++n) {
      Tensor3<T> g(1, 1, hidden_);
      std::vector<double> acc(hidden_, 0.0);
      const T* zn = cache.z[n].data.data();
      for (int c = 0; c < channels_; ++c) {
        const double a = cache.weights.a[n][c], b = cache.weights.b[n][c];
        const double gla = a * b * (ga[n][c] - gb[n][c]);
        const double glb = -gla;
        for (int k = 0; k < hidden_; ++k) {
          gA[c * hidden_ + k] += static_cast<T>(gla * zn[k]);
          gB[c * hidden_ + k] += static_cast<T>(glb * zn[k]);
          acc[k] += gla * A[c * hidden_ + k] + glb * B[c * hidden_ + k];
        }
      }
      for (int k = 0; k < hidden_; ++k) g.data[k] = static_cast<T>(acc[k]);
      gz.push_back(std::move(g));
    }
    relu_backward_inplace(gz, cache.z);
    Batch<T> gzpre = bn_z_.backward(ctx, cache.bn_z, gz, grads);
    return linear_backward<T>(cache.s, p.value(squeeze_), gzpre, grads[squeeze_], {});
  }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    Batch<T> u_std = std_.forward(ctx, xs, cache ? &cache->std_branch : nullptr);
    Batch<T> u_dil = dil_.forward(ctx, xs, cache ? &cache->dil_branch : nullptr);
    Batch<T> u = u_std;
    add_inplace(u, u_dil);
    const BranchWeights<T> w = attention(ctx, u, cache ? &cache->att : nullptr);
    Batch<T> v = std::move(u);
    for (std::size_t n = 0; n < v.size(); ++n) {
      const std::size_t rows = v[n].size() / channels_;
      for (std::size_t r = 0; r < rows; ++r) {
        T* o = v[n].data.data() + r * channels_;
        const T* us = u_std[n].data.data() + r * channels_;
        const T* ud = u_dil[n].data.data() + r * channels_;
        for (int c = 0; c < channels_; ++c) o[c] = w.a[n][c] * us[c] + w.b[n][c] * ud[c];
      }
    }
    return v;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& gv,
                    GradStore<T>& grads) const {
    const Batch<T>& u_std = cache.std_branch.y;
    const Batch<T>& u_dil = cache.dil_branch.y;
    const auto& w = cache.att.weights;
    const std::size_t N = gv.size();
    std::vector<std::vector<double>> ga(N, std::vector<double>(channels_, 0.0)), gb = ga;
    Batch<T> g_std = zeros_like(gv), g_dil = zeros_like(gv);
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t rows = gv[n].size() / channels_;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t off = r * channels_;
        for (int c = 0; c < channels_; ++c) {
          const T g = gv[n].data[off + c];
          ga[n][c] += static_cast<double>(g) * u_std[n].data[off + c];
          gb[n][c] += static_cast<double>(g) * u_dil[n].data[off + c];
          g_std[n].data[off + c] = w.a[n][c] * g;
          g_dil[n].data[off + c] = w.b[n][c] * g;
        }
      }
    }
    const Batch<T> gs = attention_backward(ctx, cache.att, ga, gb, grads);
    for (std::size_t n = 0; n < N; ++n) {
      const Tensor3<T> gu = global_avg_pool_backward<T>(gv[n], gs[n].data);
      add_inplace(g_std[n], gu);
      add_inplace(g_dil[n], gu);
    }
    Batch<T> gx = std_.backward(ctx, cache.std_branch, std::move(g_std), grads);
    add_inplace(gx, dil_.backward(ctx, cache.dil_branch, std::move(g_dil), grads));
    return gx;
  }

 private:
  int channels_ = 0;
  int hidden_ = 0;
  ConvBnRelu<T> std_, dil_;
  int squeeze_ = -1, att_a_ = -1, att_b_ = -1;
  BatchNorm<T> bn_z_;
};

/// 1x1 projection shortcut (conv + BN) used when a block changes channel
/// count or stride.
template <typename T>
class Projection {
 public:
  struct Cache {
    typename Conv<T>::Cache conv;
    typename BatchNorm<T>::Cache bn;
  };

  Projection() = default;
  Projection(ParamStore<T>& store, const std::string& path, int in, int out, int stride, Rng& rng)
      : conv_(store, path + ".conv.weight", ConvSpec{1, 1, in, out, stride, 1, 1}, rng),
        bn_(store, path + ".bn", out) {}

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    Batch<T> h = conv_.forward(ctx, xs, cache ? &cache->conv : nullptr);
    return bn_.forward(ctx, h, cache ? &cache->bn : nullptr);
  }
  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& gy,
                    GradStore<T>& grads) const {
    return conv_.backward(ctx, cache.conv, bn_.backward(ctx, cache.bn, gy, grads), grads);
  }

 private:
  Conv<T> conv_;
  BatchNorm<T> bn_;
};

/// Residual SK block: y = relu(BN(conv1x1(sk2(sk1(x)))) + shortcut(x)).
/// Downsampling happens in sk1's branches and the projection shortcut.
template <typename T>
class RSKBlock {
 public:
  struct Cache {
    typename SKConv<T>::Cache sk1, sk2;
    typename Conv<T>::Cache conv1x1;
    typename BatchNorm<T>::Cache bn_out;
    typename Projection<T>::Cache shortcut;
    Batch<T> y;
  };

  RSKBlock() = default;
  RSKBlock(ParamStore<T>& store, const std::string& path, int in, int channels, int stride,
           ConvKindSpec kind, Rng& rng)
      : sk1_(store, path + ".sk1", in, channels, stride, kind, rng),
        sk2_(store, path + ".sk2", channels, channels, 1, kind, rng),
        conv1x1_(store, path + ".conv1x1.weight", ConvSpec{1, 1, channels, channels, 1, 1, 1}, rng),
        bn_out_(store, path + ".bn_out", channels) {
    if (in != channels || stride > 1)
      shortcut_.emplace(store, path + ".shortcut", in, channels, stride, rng);
  }

  const SKConv<T>& sk1() const { return sk1_; }
  const SKConv<T>& sk2() const { return sk2_; }
  bool has_projection() const { return shortcut_.has_value(); }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    Batch<T> h = sk1_.forward(ctx, xs, cache ? &cache->sk1 : nullptr);
    h = sk2_.forward(ctx, h, cache ? &cache->sk2 : nullptr);
    h = conv1x1_.forward(ctx, h, cache ? &cache->conv1x1 : nullptr);
    h = bn_out_.forward(ctx, h, cache ? &cache->bn_out : nullptr);
    if (shortcut_) {
      add_inplace(h, shortcut_->forward(ctx, xs, cache ? &cache->shortcut : nullptr));
    } else {
      for (std::size_t n = 0; n < h.size(); ++n)
        if (!h[n].same_shape(xs[n]))
          throw ShapeError("rskblock: residual shape mismatch " +
                           shape_str(h[n].t, h[n].f, h[n].c) + " vs " +
                           shape_str(xs[n].t, xs[n].f, xs[n].c));
      add_inplace(h, xs);
    }
    relu_inplace(h);
    if (cache) cache->y = h;
    return h;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, Batch<T> gy, GradStore<T>& grads) const {
    relu_backward_inplace(gy, cache.y);
    Batch<T> g_short = shortcut_ ? shortcut_->backward(ctx, cache.shortcut, gy, grads) : gy;
    Batch<T> g = bn_out_.backward(ctx, cache.bn_out, gy, grads);
    g = conv1x1_.backward(ctx, cache.conv1x1, g, grads);
    g = sk2_.backward(ctx, cache.sk2, g, grads);
    g = sk1_.backward(ctx, cache.sk1, g, grads);
    add_inplace(g, g_short);
    return g;
  }

 private:
  SKConv<T> sk1_, sk2_;
  Conv<T> conv1x1_;
  BatchNorm<T> bn_out_;
  std::optional<Projection<T>> shortcut_;
};

}  // namespace rsknet
