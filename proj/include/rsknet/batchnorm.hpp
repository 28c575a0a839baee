#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rsknet/tensor.hpp"

namespace rsknet {

/// Per-channel batch normalization statistics and affine parameters.
template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  Mode mode = Mode::train;

  BatchNormParams() = default;
  explicit BatchNormParams(int channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}
  int channels() const { return static_cast<int>(gamma.size()); }
};

/// Non-owning view used by layers whose parameters live in a ParamStore.
/// running_* may be empty spans when no running-stat update is wanted.
template <typename T>
struct BatchNormRefs {
  std::span<const T> gamma, beta;
  std::span<const T> running_mean, running_var;
  std::span<T> update_mean, update_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
struct BatchNormCache {
  Batch<T> xhat;
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};

namespace detail {

template <typename T>
using ChannelRows = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using MutChannelRows = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// View a tensor as (positions x channels).
template <typename T>
ChannelRows<T> rows_of(const Tensor3<T>& x) {
  return ChannelRows<T>(x.data.data(), static_cast<Eigen::Index>(x.size() / x.c), x.c);
}
template <typename T>
MutChannelRows<T> rows_of(Tensor3<T>& x) {
  return MutChannelRows<T>(x.data.data(), static_cast<Eigen::Index>(x.size() / x.c), x.c);
}

}  // namespace detail

// Normalizes over every (item, t, f) position per channel in train mode.
template <typename T>
Batch<T> batch_norm_forward(const Batch<T>& xs, const BatchNormRefs<T>& p, Mode mode,
                            BatchNormCache<T>* cache) {
  using detail::rows_of;
  using RowD = Eigen::Array<double, 1, Eigen::Dynamic>;
  using RowT = Eigen::Array<T, 1, Eigen::Dynamic>;
  const int C = static_cast<int>(p.gamma.size());
  for (const auto& x : xs)
    if (x.c != C)
      throw ShapeError("batch_norm: input has " + std::to_string(x.c) + " channels, params have " +
                       std::to_string(C));
  RowD mean = RowD::Zero(C), var = RowD::Zero(C);
  if (mode == Mode::train) {
    std::size_t count = 0;
    for (const auto& x : xs) {
      if (x.empty()) continue;
      mean += rows_of(x).template cast<double>().colwise().sum().array();
      count += x.size() / C;
    }
    if (count == 0) throw ShapeError("batch_norm: empty batch");
    mean /= double(count);
    for (const auto& x : xs) {
      if (x.empty()) continue;
      var += (rows_of(x).template cast<double>().array().rowwise() - mean).square().colwise().sum();
    }
    var /= double(count);
    if (!p.update_mean.empty()) {
      const double unbias = count > 1 ? double(count) / double(count - 1) : 1.0;
      for (int c = 0; c < C; ++c) {
        p.update_mean[c] =
            static_cast<T>((1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c]);
        p.update_var[c] =
            static_cast<T>((1.0 - p.momentum) * p.running_var[c] + p.momentum * var[c] * unbias);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = p.running_mean[c];
      var[c] = p.running_var[c];
    }
  }
  const RowD inv_std = (var + p.eps).rsqrt();
  const RowT m_t = mean.template cast<T>(), s_t = inv_std.template cast<T>();
  RowT g_t(C), b_t(C);
  for (int c = 0; c < C; ++c) {
    g_t[c] = p.gamma[c];
    b_t[c] = p.beta[c];
  }

  Batch<T> out = zeros_like(xs);
  if (cache) {
    cache->xhat = zeros_like(xs);
    cache->inv_std.assign(inv_std.data(), inv_std.data() + C);
    cache->mode = mode;
  }
  for (std::size_t n = 0; n < xs.size(); ++n) {
    if (xs[n].empty()) continue;
    auto o = rows_of(out[n]).array();
    if (cache) {
      auto h = rows_of(cache->xhat[n]).array();
      h = (rows_of(xs[n]).array().rowwise() - m_t).rowwise() * s_t;
      o = (h.rowwise() * g_t).rowwise() + b_t;
    } else {
      o = ((rows_of(xs[n]).array().rowwise() - m_t).rowwise() * (s_t * g_t)).rowwise() + b_t;
    }
  }
  return out;
}

/// Accumulates parameter gradients into ggamma/gbeta and returns dL/dx.
template <typename T>
Batch<T> batch_norm_backward(const Batch<T>& gy, std::span<const T> gamma,
                             const BatchNormCache<T>& cache, std::span<T> ggamma,
                             std::span<T> gbeta) {
  using detail::rows_of;
  using RowD = Eigen::Array<double, 1, Eigen::Dynamic>;
  using RowT = Eigen::Array<T, 1, Eigen::Dynamic>;
  const int C = static_cast<int>(gamma.size());
  RowD sum_g = RowD::Zero(C), sum_gx = RowD::Zero(C);
  std::size_t count = 0;
  for (std::size_t n = 0; n < gy.size(); ++n) {
    if (gy[n].empty()) continue;
    const auto g = rows_of(gy[n]).template cast<double>().array();
    sum_g += g.colwise().sum();
    sum_gx += (g * rows_of(cache.xhat[n]).template cast<double>().array()).colwise().sum();
    count += gy[n].size() / C;
  }
  for (int c = 0; c < C; ++c) {
    ggamma[c] += static_cast<T>(sum_gx[c]);
    gbeta[c] += static_cast<T>(sum_g[c]);
  }
  Batch<T> gx = zeros_like(gy);
  const double inv_m = count ? 1.0 / double(count) : 0.0;
  RowD scale(C);
  for (int c = 0; c < C; ++c) scale[c] = gamma[c] * cache.inv_std[c];
  const RowT scale_t = scale.template cast<T>();
  const RowT mean_g = (inv_m * sum_g).template cast<T>();
  const RowT mean_gx = (inv_m * sum_gx).template cast<T>();
  for (std::size_t n = 0; n < gy.size(); ++n) {
    if (gy[n].empty()) continue;
    auto o = rows_of(gx[n]).array();
    const auto g = rows_of(gy[n]).array();
    if (cache.mode == Mode::train) {
      const auto h = rows_of(cache.xhat[n]).array();
      o = ((g.rowwise() - mean_g) - h.rowwise() * mean_gx).rowwise() * scale_t;
    } else {
      o = g.rowwise() * scale_t;
    }
  }
  return gx;
}

/// Single-tensor batch norm; the tensor's (t, f) positions form the batch.
template <typename T>
Tensor3<T> batch_norm(const Tensor3<T>& x, BatchNormParams<T>& p) {
  if (p.channels() != x.c)
    throw ShapeError("batch_norm: params have " + std::to_string(p.channels()) +
                     " channels, input has " + std::to_string(x.c));
  BatchNormRefs<T> refs{p.gamma, p.beta, p.running_mean, p.running_var, {}, {}, p.eps, p.momentum};
  std::vector<T> new_mean(p.running_mean), new_var(p.running_var);
  if (p.mode == Mode::train) {
    refs.update_mean = new_mean;
    refs.update_var = new_var;
  }
  Batch<T> out = batch_norm_forward<T>(Batch<T>{x}, refs, p.mode, nullptr);
  p.running_mean = std::move(new_mean);
  p.running_var = std::move(new_var);
  return std::move(out.front());
}

}  // namespace rsknet
