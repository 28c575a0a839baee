#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rsknet/kernels.hpp"
#include "rsknet/tensor.hpp"

namespace rsknet {

enum class PoolingKind { mtsp, sp, gap };

/// Variance at or below this is treated as zero spread: sigma = 0 and its
/// gradient is zero.
inline constexpr double kVarianceFloor = 1e-10;

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T(0)) : rows(r), cols(c), data(std::size_t(r) * c, fill) {}
  T& operator()(int r, int c) { return data[std::size_t(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[std::size_t(r) * cols + c]; }
};

template <typename T>
using StageOutputs = std::array<Tensor3<T>, 4>;

struct PoolSegment {
  enum class Stat { mean, std, channel_mean };
  int stage = 0;  // 1-based
  Stat stat = Stat::mean;
  int length = 0;
};

template <typename T>
struct PooledVector {
  std::vector<T> data;
  std::vector<PoolSegment> layout;
};

/// (t, f, c) -> (t, f * c + c_index): each time row flattened frequency-major.
template <typename T>
Matrix<T> flatten_time(const Tensor3<T>& x) {
  Matrix<T> m(x.t, x.f * x.c);
  std::copy(x.data.begin(), x.data.end(), m.data.begin());
  return m;
}

template <typename T>
Tensor3<T> unflatten_time(const Matrix<T>& m, int f, int c) {
  if (f * c != m.cols) throw ShapeError("unflatten_time: f*c != cols");
  Tensor3<T> x(m.rows, f, c);
  std::copy(m.data.begin(), m.data.end(), x.data.begin());
  return x;
}

/// Per-column mean followed by per-column population standard deviation.
template <typename T>
std::vector<T> stats_pool(const Matrix<T>& x) {
  if (x.rows < 1 || x.cols < 1) throw ShapeError("stats_pool: empty input");
  const int N = x.cols;
  std::vector<double> sum(N, 0.0), sq(N, 0.0);
  for (int t = 0; t < x.rows; ++t) {
    const T* row = x.data.data() + std::size_t(t) * N;
    for (int n = 0; n < N; ++n) {
      sum[n] += row[n];
      sq[n] += static_cast<double>(row[n]) * row[n];
    }
  }
  std::vector<T> out(2 * std::size_t(N));
  const double inv_t = 1.0 / x.rows;
  for (int n = 0; n < N; ++n) {
    const double mu = sum[n] * inv_t;
    const double var = sq[n] * inv_t - mu * mu;
    out[n] = static_cast<T>(mu);
    out[N + n] = static_cast<T>(var > kVarianceFloor ? std::sqrt(var) : 0.0);
  }
  return out;
}

/// dL/dx given dL/d[mu, sigma] for the matrix x.
template <typename T>
Matrix<T> stats_pool_backward(const Matrix<T>& x, std::span<const T> g) {
  const int N = x.cols;
  const std::vector<T> stats = stats_pool(x);
  Matrix<T> gx(x.rows, N);
  const double inv_t = 1.0 / x.rows;
  for (int n = 0; n < N; ++n) {
    const double mu = stats[n], sigma = stats[N + n];
    const double g_mu = g[n] * inv_t;
    const double g_sd = sigma > 0.0 ? g[N + n] * inv_t / sigma : 0.0;
    for (int t = 0; t < x.rows; ++t) gx(t, n) = static_cast<T>(g_mu + g_sd * (x(t, n) - mu));
  }
  return gx;
}

namespace detail {

template <typename T>
void check_stages(const StageOutputs<T>& stages) {
  for (std::size_t i = 0; i < stages.size(); ++i)
    if (stages[i].t < 1 || stages[i].f * stages[i].c < 1)
      throw ShapeError("pooling: stage " + std::to_string(i + 1) + " output missing or empty");
}

template <typename T>
void append_stats(PooledVector<T>& out, const Tensor3<T>& x, int stage) {
  const std::vector<T> s = stats_pool(flatten_time(x));
  const int N = x.f * x.c;
  out.data.insert(out.data.end(), s.begin(), s.end());
  out.layout.push_back({stage, PoolSegment::Stat::mean, N});
  out.layout.push_back({stage, PoolSegment::Stat::std, N});
}

}  // namespace detail

/// Multiple time-scale statistics pooling: [mu_1, sigma_1, ..., mu_4, sigma_4].
template <typename T>
PooledVector<T> mtsp(const StageOutputs<T>& stages) {
  detail::check_stages(stages);
  PooledVector<T> out;
  for (int i = 0; i < 4; ++i) detail::append_stats(out, stages[i], i + 1);
  return out;
}

/// Single-scale statistics pooling of the last stage.
template <typename T>
PooledVector<T> sp_pool(const StageOutputs<T>& stages) {
  detail::check_stages(stages);
  PooledVector<T> out;
  detail::append_stats(out, stages[3], 4);
  return out;
}

/// Channel means of the last stage.
template <typename T>
PooledVector<T> gap_pool(const StageOutputs<T>& stages) {
  detail::check_stages(stages);
  PooledVector<T> out;
  out.data = global_avg_pool(stages[3]);
  out.layout.push_back({4, PoolSegment::Stat::channel_mean, stages[3].c});
  return out;
}

template <typename T>
PooledVector<T> pool(PoolingKind kind, const StageOutputs<T>& stages) {
  switch (kind) {
    case PoolingKind::mtsp: return mtsp(stages);
    case PoolingKind::sp: return sp_pool(stages);
    case PoolingKind::gap: return gap_pool(stages);
  }
  throw ShapeError("pool: unknown kind");
}

/// Stage gradients for a pooled-vector gradient; unused stages get zeros.
template <typename T>
StageOutputs<T> pool_backward(PoolingKind kind, const StageOutputs<T>& stages,
                              std::span<const T> g) {
  StageOutputs<T> out;
  for (int i = 0; i < 4; ++i) out[i] = Tensor3<T>(stages[i].t, stages[i].f, stages[i].c);
  std::size_t off = 0;
  auto stats_stage = [&](int i) {
    const Tensor3<T>& x = stages[i];
    const std::size_t len = 2 * std::size_t(x.f) * x.c;
    const Matrix<T> gx = stats_pool_backward(flatten_time(x), g.subspan(off, len));
    out[i] = unflatten_time(gx, x.f, x.c);
    off += len;
  };
  switch (kind) {
    case PoolingKind::mtsp:
      for (int i = 0; i < 4; ++i) stats_stage(i);
      break;
    case PoolingKind::sp:
      stats_stage(3);
      break;
    case PoolingKind::gap:
      out[3] = global_avg_pool_backward<T>(stages[3], g);
      break;
  }
  return out;
}

/// Pooled dimension for stage extents (f_i, c_i).
inline int pooled_dim(PoolingKind kind, const std::array<int, 4>& freq,
                      const std::array<int, 4>& channels) {
  switch (kind) {
    case PoolingKind::mtsp: {
      int d = 0;
      for (int i = 0; i < 4; ++i) d += 2 * freq[i] * channels[i];
      return d;
    }
    case PoolingKind::sp: return 2 * freq[3] * channels[3];
    case PoolingKind::gap: return channels[3];
  }
  return 0;
}

}  // namespace rsknet
