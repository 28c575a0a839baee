#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rsknet/tensor.hpp"

namespace rsknet {

/// Seeded generator with platform-independent uniform/normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * double(n)) % n; }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
  template <typename It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) std::swap(first[n - 1], first[index(n)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class ParamKind { conv, bn, linear, attention, classifier, buffer };

inline const char* to_string(ParamKind k) {
  switch (k) {
    case ParamKind::conv: return "conv";
    case ParamKind::bn: return "bn";
    case ParamKind::linear: return "linear";
    case ParamKind::attention: return "attention";
    case ParamKind::classifier: return "classifier";
    case ParamKind::buffer: return "buffer";
  }
  return "?";
}

template <typename T>
struct ParamTensor {
  std::string path;
  std::vector<int> shape;
  ParamKind kind = ParamKind::conv;
  std::vector<T> value;

  std::size_t count() const { return value.size(); }
  bool learnable() const { return kind != ParamKind::buffer; }
};

/// Registry of every parameter tensor of a model, addressable by id or path.
/// Buffers (BN running statistics) live here too but are not learnable.
template <typename T>
class ParamStore {
 public:
  int add(std::string path, std::vector<int> shape, ParamKind kind, T fill = T(0)) {
    if (index_.count(path)) throw ShapeError("duplicate parameter path: " + path);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    const int id = static_cast<int>(entries_.size());
    index_[path] = id;
    entries_.push_back({std::move(path), std::move(shape), kind, std::vector<T>(n, fill)});
    return id;
  }

  std::span<T> value(int id) { return entries_.at(id).value; }
  std::span<const T> value(int id) const { return entries_.at(id).value; }
  const ParamTensor<T>& entry(int id) const { return entries_.at(id); }
  ParamTensor<T>& entry(int id) { return entries_.at(id); }

  int find(const std::string& path) const {
    auto it = index_.find(path);
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      const int id = out.add(e.path, e.shape, e.kind);
      auto dst = out.value(id);
      for (std::size_t i = 0; i < e.value.size(); ++i) dst[i] = static_cast<U>(e.value[i]);
    }
    return out;
  }

 private:
  std::vector<ParamTensor<T>> entries_;
  std::map<std::string, int> index_;
};

/// Gradient buffers aligned with a ParamStore.
template <typename T>
class GradStore {
 public:
  GradStore() = default;
  explicit GradStore(const ParamStore<T>& params) {
    grads_.reserve(params.size());
    for (const auto& e : params) grads_.emplace_back(e.value.size(), T(0));
  }
  std::span<T> operator[](int id) { return grads_.at(id); }
  std::span<const T> operator[](int id) const { return grads_.at(id); }
  std::size_t size() const { return grads_.size(); }
  void zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
  }

 private:
  std::vector<std::vector<T>> grads_;
};

/// Forward-pass context. `stats` receives BN running-statistic updates in
/// train mode; leave it null to keep the store untouched.
template <typename T>
struct Ctx {
  const ParamStore<T>* params = nullptr;
  ParamStore<T>* stats = nullptr;
  Mode mode = Mode::infer;
};

template <typename T>
void fill_normal(std::span<T> v, double stddev, Rng& rng) {
  for (T& x : v) x = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void fill_uniform(std::span<T> v, double bound, Rng& rng) {
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace rsknet
