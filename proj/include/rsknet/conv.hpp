#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "rsknet/tensor.hpp"

namespace rsknet {

/// Bias-free 2-D convolution with zero "same" padding. Stride and dilation
/// apply to both spatial axes. Weights are laid out
/// [kernel_h][kernel_w][in_ch / groups][out_ch].
struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int in_ch = 1;
  int out_ch = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;

  int in_per_group() const { return in_ch / groups; }
  int out_per_group() const { return out_ch / groups; }
  bool depthwise() const { return groups > 1 && groups == in_ch && groups == out_ch; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && groups == 1; }

  std::size_t weight_count() const {
    return static_cast<std::size_t>(kernel_h) * kernel_w * in_per_group() * out_ch;
  }

  int out_extent(int in) const { return (in + stride - 1) / stride; }
  int span_h() const { return dilation * (kernel_h - 1) + 1; }
  int span_w() const { return dilation * (kernel_w - 1) + 1; }

  // Leading pad so that output extent is ceil(in / stride).
  int pad_before(int in, int span) const {
    const int out = out_extent(in);
    const int total = std::max((out - 1) * stride + span - in, 0);
    return total / 2;
  }

  void validate() const {
    if (kernel_h < 1 || kernel_w < 1 || in_ch < 1 || out_ch < 1 || stride < 1 || dilation < 1 ||
        groups < 1)
      throw ShapeError("ConvSpec: all extents must be positive");
    if (in_ch % groups != 0 || out_ch % groups != 0)
      throw ShapeError("ConvSpec: channels " + std::to_string(in_ch) + "->" +
                       std::to_string(out_ch) + " not divisible by groups " +
                       std::to_string(groups));
  }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct ConvGeometry {
  int in_t, in_f, out_t, out_f, pad_t, pad_f;
};

inline ConvGeometry geometry(const ConvSpec& s, int t, int f) {
  return {t, f, s.out_extent(t), s.out_extent(f), s.pad_before(t, s.span_h()),
          s.pad_before(f, s.span_w())};
}

// Short channel-slice copy; fixed-size chunks keep it inline.
template <typename T>
inline void copy_slice(const T* src, int n, T* dst) {
  int i = 0;
  for (; i + 8 <= n; i += 8) std::memcpy(dst + i, src + i, 8 * sizeof(T));
  for (; i < n; ++i) dst[i] = src[i];
}

template <typename T>
inline void add_slice(const T* src, int n, T* dst) {
  for (int i = 0; i < n; ++i) dst[i] += src[i];
}

// Unfold output positions [p0, p1) of channel slice [c0, c0 + cg) into a
// ((p1 - p0) x kh*kw*cg) matrix. Every entry is written; padding taps get zeros.
template <typename T>
void im2col(const Tensor3<T>& x, const ConvSpec& s, const ConvGeometry& g, int c0, int cg, int p0,
            int p1, std::vector<T>& col) {
  const int K = s.kernel_h * s.kernel_w * cg;
  col.resize(static_cast<std::size_t>(p1 - p0) * K);
  for (int p = p0; p < p1; ++p) {
    const int to = p / g.out_f, fo = p % g.out_f;
    T* dst = col.data() + static_cast<std::size_t>(p - p0) * K;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      const int ti = to * s.stride - g.pad_t + ky * s.dilation;
      T* drow = dst + ky * s.kernel_w * cg;
      if (ti < 0 || ti >= g.in_t) {
        std::fill(drow, drow + s.kernel_w * cg, T(0));
        continue;
      }
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const int fi = fo * s.stride - g.pad_f + kx * s.dilation;
        T* d = drow + kx * cg;
        if (fi < 0 || fi >= g.in_f) {
          std::fill(d, d + cg, T(0));
        } else {
          copy_slice(&x(ti, fi, c0), cg, d);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, const ConvSpec& s, const ConvGeometry& g, int c0, int cg,
                int p0, int p1, Tensor3<T>& gx) {
  const int K = s.kernel_h * s.kernel_w * cg;
  for (int p = p0; p < p1; ++p) {
    const int to = p / g.out_f, fo = p % g.out_f;
    const T* src = col.data() + static_cast<std::size_t>(p - p0) * K;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      const int ti = to * s.stride - g.pad_t + ky * s.dilation;
      if (ti < 0 || ti >= g.in_t) continue;
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const int fi = fo * s.stride - g.pad_f + kx * s.dilation;
        if (fi < 0 || fi >= g.in_f) continue;
        add_slice(src + (ky * s.kernel_w + kx) * cg, cg, &gx(ti, fi, c0));
      }
    }
  }
}

// Output positions per im2col block, sized to keep the block cache-resident.
inline int position_block(int K) { return std::max(64, 262144 / std::max(K, 1)); }

template <typename T>
void depthwise_forward(const Tensor3<T>& x, const ConvSpec& s, const ConvGeometry& g,
                       std::span<const T> w, Tensor3<T>& y) {
  const int C = s.in_ch;
  for (int to = 0; to < g.out_t; ++to) {
    for (int fo = 0; fo < g.out_f; ++fo) {
      T* out = &y(to, fo, 0);
      for (int ky = 0; ky < s.kernel_h; ++ky) {
        const int ti = to * s.stride - g.pad_t + ky * s.dilation;
        if (ti < 0 || ti >= g.in_t) continue;
        for (int kx = 0; kx < s.kernel_w; ++kx) {
          const int fi = fo * s.stride - g.pad_f + kx * s.dilation;
          if (fi < 0 || fi >= g.in_f) continue;
          const T* in = &x(ti, fi, 0);
          const T* wk = w.data() + static_cast<std::size_t>(ky * s.kernel_w + kx) * C;
          for (int c = 0; c < C; ++c) out[c] += in[c] * wk[c];
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const Tensor3<T>& x, const ConvSpec& s, const ConvGeometry& g,
                        std::span<const T> w, const Tensor3<T>& gy, Tensor3<T>& gx,
                        std::span<T> gw) {
  const int C = s.in_ch;
  for (int to = 0; to < g.out_t; ++to) {
    for (int fo = 0; fo < g.out_f; ++fo) {
      const T* go = &gy(to, fo, 0);
      for (int ky = 0; ky < s.kernel_h; ++ky) {
        const int ti = to * s.stride - g.pad_t + ky * s.dilation;
        if (ti < 0 || ti >= g.in_t) continue;
        for (int kx = 0; kx < s.kernel_w; ++kx) {
          const int fi = fo * s.stride - g.pad_f + kx * s.dilation;
          if (fi < 0 || fi >= g.in_f) continue;
          const std::size_t k = static_cast<std::size_t>(ky * s.kernel_w + kx) * C;
          const T* in = &x(ti, fi, 0);
          T* gin = &gx(ti, fi, 0);
          for (int c = 0; c < C; ++c) {
            gin[c] += go[c] * w[k + c];
            gw[k + c] += go[c] * in[c];
          }
        }
      }
    }
  }
}

inline void check_input(const ConvSpec& s, int c, std::size_t wsize) {
  s.validate();
  if (c != s.in_ch)
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, spec expects " +
                     std::to_string(s.in_ch));
  if (wsize != s.weight_count())
    throw ShapeError("conv2d: weight count " + std::to_string(wsize) + " != " +
                     std::to_string(s.weight_count()));
}

}  // namespace detail

template <typename T>
Tensor3<T> conv2d(const Tensor3<T>& x, const ConvSpec& s, std::span<const T> w) {
  using namespace detail;
  check_input(s, x.c, w.size());
  const ConvGeometry g = geometry(s, x.t, x.f);
  Tensor3<T> y(g.out_t, g.out_f, s.out_ch);
  if (x.empty()) return y;
  if (s.depthwise() && s.in_per_group() == 1) {
    depthwise_forward(x, s, g, w, y);
    return y;
  }
  const int ig = s.in_per_group(), og = s.out_per_group();
  const int P = g.out_t * g.out_f, K = s.kernel_h * s.kernel_w * ig;
  thread_local std::vector<T> col;
  const int block = position_block(K);
  for (int grp = 0; grp < s.groups; ++grp) {
    ConstStridedMap<T> wm(w.data() + grp * og, K, og, Eigen::OuterStride<>(s.out_ch));
    if (s.pointwise() && s.stride == 1) {
      ConstStridedMap<T> xm(x.data.data(), P, K, Eigen::OuterStride<>(x.c));
      StridedMap<T> ym(y.data.data(), P, og, Eigen::OuterStride<>(s.out_ch));
      ym.noalias() = xm * wm;
      continue;
    }
    for (int p0 = 0; p0 < P; p0 += block) {
      const int p1 = std::min(P, p0 + block);
      im2col(x, s, g, grp * ig, ig, p0, p1, col);
      ConstStridedMap<T> cm(col.data(), p1 - p0, K, Eigen::OuterStride<>(K));
      StridedMap<T> ym(y.data.data() + std::size_t(p0) * s.out_ch + grp * og, p1 - p0, og,
                       Eigen::OuterStride<>(s.out_ch));
      ym.noalias() = cm * wm;
    }
  }
  return y;
}

/// Accumulates dL/dx into gx and dL/dw into gw.
template <typename T>
void conv2d_backward(const Tensor3<T>& x, const ConvSpec& s, std::span<const T> w,
                     const Tensor3<T>& gy, Tensor3<T>& gx, std::span<T> gw) {
  using namespace detail;
  check_input(s, x.c, w.size());
  const ConvGeometry g = geometry(s, x.t, x.f);
  if (gy.t != g.out_t || gy.f != g.out_f || gy.c != s.out_ch)
    throw ShapeError("conv2d_backward: output gradient shape mismatch");
  if (!gx.same_shape(x)) gx = Tensor3<T>(x.t, x.f, x.c);
  if (x.empty()) return;
  if (s.depthwise() && s.in_per_group() == 1) {
    depthwise_backward(x, s, g, w, gy, gx, gw);
    return;
  }
  const int ig = s.in_per_group(), og = s.out_per_group();
  const int P = g.out_t * g.out_f, K = s.kernel_h * s.kernel_w * ig;
  const bool direct = s.pointwise() && s.stride == 1;
  thread_local std::vector<T> col, gcol;
  const int block = position_block(K);
  for (int grp = 0; grp < s.groups; ++grp) {
    ConstStridedMap<T> gym(gy.data.data() + grp * og, P, og, Eigen::OuterStride<>(s.out_ch));
    ConstStridedMap<T> wm(w.data() + grp * og, K, og, Eigen::OuterStride<>(s.out_ch));
    StridedMap<T> gwm(gw.data() + grp * og, K, og, Eigen::OuterStride<>(s.out_ch));
    if (direct) {
      ConstStridedMap<T> xm(x.data.data(), P, K, Eigen::OuterStride<>(x.c));
      StridedMap<T> gxm(gx.data.data(), P, K, Eigen::OuterStride<>(x.c));
      gwm.noalias() += xm.transpose() * gym;
      gxm.noalias() += gym * wm.transpose();
      continue;
    }
    for (int p0 = 0; p0 < P; p0 += block) {
      const int p1 = std::min(P, p0 + block), rows = p1 - p0;
      im2col(x, s, g, grp * ig, ig, p0, p1, col);
      ConstStridedMap<T> cm(col.data(), rows, K, Eigen::OuterStride<>(K));
      ConstStridedMap<T> gyb(gy.data.data() + std::size_t(p0) * s.out_ch + grp * og, rows, og,
                             Eigen::OuterStride<>(s.out_ch));
      gwm.noalias() += cm.transpose() * gyb;
      gcol.resize(static_cast<std::size_t>(rows) * K);
      StridedMap<T> gcm(gcol.data(), rows, K, Eigen::OuterStride<>(K));
      gcm.noalias() = gyb * wm.transpose();
      col2im_add(gcol, s, g, grp * ig, ig, p0, p1, gx);
    }
  }
}

}  // namespace rsknet
