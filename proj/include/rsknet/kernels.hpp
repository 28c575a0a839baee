#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rsknet/batchnorm.hpp"
#include "rsknet/conv.hpp"
#include "rsknet/tensor.hpp"

namespace rsknet {

// ---------------------------------------------------------------------------
// Linear maps. W is row-major n x m.

template <typename T>
std::vector<T> linear(std::span<const T> x, std::span<const T> w, std::span<const T> b) {
  const std::size_t n = b.size();
  if (n == 0 || w.size() % n != 0 || w.size() / n != x.size())
    throw ShapeError("linear: W has " + std::to_string(w.size()) + " entries, expected " +
                     std::to_string(n) + "x" + std::to_string(x.size()));
  const std::size_t m = x.size();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i];
    const T* row = w.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(row[j]) * x[j];
    y[i] = static_cast<T>(acc);
  }
  return y;
}

/// Batched y = W x (+ b) over 1x1xm tensors. b may be empty.
template <typename T>
Batch<T> linear_forward(const Batch<T>& xs, std::span<const T> w, std::span<const T> b, int n) {
  const int N = static_cast<int>(xs.size());
  if (N == 0) return {};
  const int m = xs.front().c;
  if (w.size() != static_cast<std::size_t>(n) * m)
    throw ShapeError("linear: weight is not " + std::to_string(n) + "x" + std::to_string(m));
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat X(N, m);
  for (int i = 0; i < N; ++i) {
    if (xs[i].size() != static_cast<std::size_t>(m)) throw ShapeError("linear: ragged batch");
    std::copy(xs[i].data.begin(), xs[i].data.end(), X.row(i).data());
  }
  Eigen::Map<const RowMat> W(w.data(), n, m);
  RowMat Y = X * W.transpose();
  Batch<T> out;
  out.reserve(N);
  for (int i = 0; i < N; ++i) {
    Tensor3<T> y(1, 1, n);
    for (int k = 0; k < n; ++k) y.data[k] = Y(i, k) + (b.empty() ? T(0) : b[k]);
    out.push_back(std::move(y));
  }
  return out;
}

/// Accumulates dW (and db when non-empty), returns dL/dx.
template <typename T>
Batch<T> linear_backward(const Batch<T>& xs, std::span<const T> w, const Batch<T>& gy,
                         std::span<T> gw, std::span<T> gb) {
  const int N = static_cast<int>(xs.size());
  if (N == 0) return {};
  const int m = xs.front().c, n = gy.front().c;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat X(N, m), G(N, n);
  for (int i = 0; i < N; ++i) {
    std::copy(xs[i].data.begin(), xs[i].data.end(), X.row(i).data());
    std::copy(gy[i].data.begin(), gy[i].data.end(), G.row(i).data());
  }
  Eigen::Map<const RowMat> W(w.data(), n, m);
  Eigen::Map<RowMat> GW(gw.data(), n, m);
  GW.noalias() += G.transpose() * X;
  if (!gb.empty())
    for (int k = 0; k < n; ++k) {
      double s = 0;
      for (int i = 0; i < N; ++i) s += G(i, k);
      gb[k] += static_cast<T>(s);
    }
  RowMat GX = G * W;
  Batch<T> out;
  out.reserve(N);
  for (int i = 0; i < N; ++i) {
    Tensor3<T> g(1, 1, m);
    std::copy(GX.row(i).data(), GX.row(i).data() + m, g.data.begin());
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations. ReLU propagates NaN so divergence reaches the loss check.

template <typename T>
std::vector<T> relu(std::span<const T> x) {
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];
  return y;
}

template <typename T>
void relu_inplace(Tensor3<T>& x) {
  for (T& v : x.data) v = v < T(0) ? T(0) : v;
}

template <typename T>
void relu_inplace(Batch<T>& xs) {
  for (auto& x : xs) relu_inplace(x);
}

// Masks gy by y > 0, where y is the ReLU output.
template <typename T>
void relu_backward_inplace(Batch<T>& gy, const Batch<T>& y) {
  for (std::size_t n = 0; n < gy.size(); ++n)
    for (std::size_t i = 0; i < gy[n].size(); ++i)
      if (!(y[n].data[i] > T(0))) gy[n].data[i] = T(0);
}

/// Numerically stable softmax of one row, evaluated in double.
template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  if (x.empty()) return {};
  double mx = x[0];
  for (const T& v : x) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(x.size());
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += e[i] = std::exp(x[i] - mx);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(e[i] / sum);
  return y;
}

// ---------------------------------------------------------------------------
// Global average pooling over (t, f).

template <typename T>
std::vector<T> global_avg_pool(const Tensor3<T>& x) {
  if (x.t * x.f < 1 || x.c < 1) throw ShapeError("global_avg_pool: empty tensor");
  std::vector<double> acc(x.c, 0.0);
  const std::size_t rows = static_cast<std::size_t>(x.t) * x.f;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* v = x.data.data() + r * x.c;
    for (int c = 0; c < x.c; ++c) acc[c] += v[c];
  }
  std::vector<T> out(x.c);
  for (int c = 0; c < x.c; ++c) out[c] = static_cast<T>(acc[c] / double(rows));
  return out;
}

/// dL/dx for GAP: every position receives g_c / (t * f).
template <typename T>
Tensor3<T> global_avg_pool_backward(const Tensor3<T>& x_shape, std::span<const T> g) {
  Tensor3<T> gx(x_shape.t, x_shape.f, x_shape.c);
  const std::size_t rows = static_cast<std::size_t>(x_shape.t) * x_shape.f;
  const double inv = 1.0 / double(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (int c = 0; c < x_shape.c; ++c) gx.data[r * x_shape.c + c] = static_cast<T>(g[c] * inv);
  return gx;
}

}  // namespace rsknet
