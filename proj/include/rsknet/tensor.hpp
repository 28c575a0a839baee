#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsknet {

/// Shape or dimension violation in a kernel or layer call.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (files, manifests, trial lists).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or singular quantities met during computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { train, infer };

/// Dense rank-3 feature map indexed (time, frequency, channel), channel
/// fastest. Flattening a time row therefore yields frequency-major order
/// (frequency outer, channel inner).
template <typename T>
struct Tensor3 {
  int t = 0;
  int f = 0;
  int c = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int t_, int f_, int c_, T fill = T(0))
      : t(t_), f(f_), c(c_), data(static_cast<std::size_t>(t_) * f_ * c_, fill) {
    if (t_ < 0 || f_ < 0 || c_ < 0) throw ShapeError("Tensor3: negative extent");
  }

  static Tensor3 vector(std::span<const T> v) {
    Tensor3 out(1, 1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), out.data.begin());
    return out;
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::size_t index(int ti, int fi, int ci) const {
    return (static_cast<std::size_t>(ti) * f + fi) * c + ci;
  }
  T& operator()(int ti, int fi, int ci) { return data[index(ti, fi, ci)]; }
  const T& operator()(int ti, int fi, int ci) const { return data[index(ti, fi, ci)]; }

  T* row(int ti) { return data.data() + static_cast<std::size_t>(ti) * f * c; }
  const T* row(int ti) const { return data.data() + static_cast<std::size_t>(ti) * f * c; }

  bool same_shape(const Tensor3& o) const { return t == o.t && f == o.f && c == o.c; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor3<U> cast() const {
    Tensor3<U> out(t, f, c);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
using Batch = std::vector<Tensor3<T>>;

template <typename T>
Batch<T> zeros_like(const Batch<T>& xs) {
  Batch<T> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.emplace_back(x.t, x.f, x.c);
  return out;
}

template <typename T>
void add_inplace(Tensor3<T>& dst, const Tensor3<T>& src) {
  if (!dst.same_shape(src)) throw ShapeError("add: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
void add_inplace(Batch<T>& dst, const Batch<T>& src) {
  if (dst.size() != src.size()) throw ShapeError("add: batch size mismatch");
  for (std::size_t n = 0; n < dst.size(); ++n) add_inplace(dst[n], src[n]);
}

inline std::string shape_str(int t, int f, int c) {
  return std::to_string(t) + "x" + std::to_string(f) + "x" + std::to_string(c);
}

}  // namespace rsknet
