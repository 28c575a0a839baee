#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rsknet/kernels.hpp"
#include "rsknet/params.hpp"

namespace rsknet {

enum class HeadKind { full, low_rank };

/// Enforces 1 < p < min(m, n) for a factorized head.
inline void validate_low_rank(int p, int m, int n) {
  if (!(p > 1 && p < std::min(m, n)))
    throw ShapeError("low-rank constant p=" + std::to_string(p) + " must satisfy 1 < p < min(" +
                     std::to_string(m) + ", " + std::to_string(n) + ")");
}

/// Stand-alone head weights: y = W1 e + b, or y = W2 (W3 e) + b.
template <typename T>
struct EmbeddingHeadParams {
  HeadKind kind = HeadKind::full;
  int m_in = 0;
  int n_out = 256;
  int p = 0;
  std::vector<T> w1;  // n x m
  std::vector<T> w2;  // n x p
  std::vector<T> w3;  // p x m
  std::vector<T> b;   // n

  std::size_t weight_count() const {
    return kind == HeadKind::full ? std::size_t(n_out) * m_in
                                  : std::size_t(n_out) * p + std::size_t(p) * m_in;
  }
};

/// Embedding from a pooled vector. The low-rank form is two matrix-vector
/// products; W2 W3 is never formed.
template <typename T>
std::vector<T> embed(std::span<const T> e, const EmbeddingHeadParams<T>& h) {
  if (e.size() != static_cast<std::size_t>(h.m_in))
    throw ShapeError("embed: pooled vector has " + std::to_string(e.size()) + " entries, head expects " +
                     std::to_string(h.m_in));
  if (h.kind == HeadKind::full) return linear<T>(e, h.w1, h.b);
  if (h.p < 1 || h.p > std::min(h.m_in, h.n_out))
    throw ShapeError("embed: invalid low-rank constant p=" + std::to_string(h.p));
  const std::vector<T> zero(h.p, T(0));
  const std::vector<T> mid = linear<T>(e, h.w3, zero);
  return linear<T>(mid, h.w2, h.b);
}

/// Embedding head bound to a ParamStore.
template <typename T>
class EmbeddingHead {
 public:
  struct Cache {
    Batch<T> x, mid;
  };

  EmbeddingHead() = default;
  EmbeddingHead(ParamStore<T>& store, const std::string& path, HeadKind kind, int m, int n, int p,
                Rng& rng)
      : kind_(kind), m_(m), n_(n), p_(p) {
    if (kind == HeadKind::full) {
      w1_ = store.add(path + ".w1", {n, m}, ParamKind::linear);
      fill_uniform(store.value(w1_), 1.0 / std::sqrt(double(m)), rng);
    } else {
      validate_low_rank(p, m, n);
      w2_ = store.add(path + ".w2", {n, p}, ParamKind::linear);
      w3_ = store.add(path + ".w3", {p, m}, ParamKind::linear);
      fill_uniform(store.value(w3_), 1.0 / std::sqrt(double(m)), rng);
      fill_uniform(store.value(w2_), 1.0 / std::sqrt(double(p)), rng);
    }
    b_ = store.add(path + ".b", {n}, ParamKind::linear);
    fill_uniform(store.value(b_), 1.0 / std::sqrt(double(kind == HeadKind::full ? m : p)), rng);
  }

  HeadKind kind() const { return kind_; }
  int in_dim() const { return m_; }
  int out_dim() const { return n_; }
  int rank() const { return p_; }

  EmbeddingHeadParams<T> snapshot(const ParamStore<T>& store) const {
    EmbeddingHeadParams<T> h{kind_, m_, n_, p_, {}, {}, {}, {}};
    auto copy = [&](int id) {
      auto v = store.value(id);
      return std::vector<T>(v.begin(), v.end());
    };
    if (kind_ == HeadKind::full) {
      h.w1 = copy(w1_);
    } else {
      h.w2 = copy(w2_);
      h.w3 = copy(w3_);
    }
    h.b = copy(b_);
    return h;
  }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    const ParamStore<T>& p = *ctx.params;
    for (const auto& x : xs)
      if (x.size() != std::size_t(m_))
        throw ShapeError("embedding head: input has " + std::to_string(x.size()) +
                         " entries, expected " + std::to_string(m_));
    if (cache) cache->x = xs;
    if (kind_ == HeadKind::full) return linear_forward<T>(xs, p.value(w1_), p.value(b_), n_);
    Batch<T> mid = linear_forward<T>(xs, p.value(w3_), {}, p_);
    Batch<T> y = linear_forward<T>(mid, p.value(w2_), p.value(b_), n_);
    if (cache) cache->mid = std::move(mid);
    return y;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& gy,
                    GradStore<T>& grads) const {
    const ParamStore<T>& p = *ctx.params;
    if (kind_ == HeadKind::full)
      return linear_backward<T>(cache.x, p.value(w1_), gy, grads[w1_], grads[b_]);
    Batch<T> gmid = linear_backward<T>(cache.mid, p.value(w2_), gy, grads[w2_], grads[b_]);
    return linear_backward<T>(cache.x, p.value(w3_), gmid, grads[w3_], {});
  }

 private:
  HeadKind kind_ = HeadKind::full;
  int m_ = 0, n_ = 0, p_ = 0;
  int w1_ = -1, w2_ = -1, w3_ = -1, b_ = -1;
};

// ---------------------------------------------------------------------------
// Additive-margin softmax.

template <typename T>
struct AmSoftmaxParams {
  std::vector<T> class_weights;  // num_classes x dim
  int num_classes = 0;
  double s = 30.0;
  double m = 0.2;

  void validate(int dim) const {
    if (!(s > 0.0)) throw ShapeError("am-softmax: scale s must be positive");
    if (!(m >= 0.0 && m < 1.0)) throw ShapeError("am-softmax: margin m must lie in [0, 1)");
    if (class_weights.size() != std::size_t(num_classes) * dim)
      throw ShapeError("am-softmax: class weight matrix is not num_classes x dim");
  }
};

struct AmSoftmaxResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad_embeddings;  // per item
  std::vector<double> grad_weights;                  // num_classes x dim
  std::vector<std::vector<double>> cosines;          // per item, per class
};

/// Mean AM-Softmax loss over the batch with cosine logits. Both embeddings
/// and class weights are L2-normalized on every call.
template <typename T>
AmSoftmaxResult am_softmax_loss(const std::vector<std::span<const T>>& embeddings,
                                std::span<const int> labels, std::span<const T> class_weights,
                                int num_classes, double s, double m) {
  const std::size_t N = embeddings.size();
  if (N == 0) throw ShapeError("am-softmax: empty batch");
  if (labels.size() != N) throw ShapeError("am-softmax: label count mismatch");
  const int D = static_cast<int>(embeddings.front().size());
  if (class_weights.size() != std::size_t(num_classes) * D)
    throw ShapeError("am-softmax: class weight matrix is not num_classes x dim");
  if (!(s > 0.0) || !(m >= 0.0 && m < 1.0)) throw ShapeError("am-softmax: invalid s or m");

  std::vector<double> wnorm(num_classes, 0.0);
  for (int j = 0; j < num_classes; ++j) {
    double acc = 0;
    for (int d = 0; d < D; ++d) acc += double(class_weights[j * D + d]) * class_weights[j * D + d];
    wnorm[j] = std::sqrt(acc);
    if (!(wnorm[j] > 0.0)) throw NumericalError("am-softmax: zero-norm class weight " + std::to_string(j));
  }

  AmSoftmaxResult r;
  r.grad_embeddings.assign(N, std::vector<double>(D, 0.0));
  r.grad_weights.assign(std::size_t(num_classes) * D, 0.0);
  r.cosines.assign(N, std::vector<double>(num_classes, 0.0));
  std::vector<double> logits(num_classes), gcos(num_classes);
  for (std::size_t i = 0; i < N; ++i) {
    const auto f = embeddings[i];
    if (f.size() != std::size_t(D)) throw ShapeError("am-softmax: ragged embeddings");
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw ShapeError("am-softmax: label out of range");
    double fn = 0;
    for (int d = 0; d < D; ++d) fn += double(f[d]) * f[d];
    fn = std::sqrt(fn);
    if (!(fn > 0.0)) throw NumericalError("am-softmax: zero-norm embedding");

    auto& cos = r.cosines[i];
    for (int j = 0; j < num_classes; ++j) {
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += double(class_weights[j * D + d]) * f[d];
      cos[j] = dot / (wnorm[j] * fn);
      logits[j] = s * (cos[j] - (j == y ? m : 0.0));
    }
    const auto top = std::max_element(logits.begin(), logits.end());
    const double mx = *top;
    double rest = 0;  // sum of exp(z - max) excluding the max itself; log1p keeps small losses exact
    for (auto it = logits.begin(); it != logits.end(); ++it)
      if (it != top) rest += std::exp(*it - mx);
    const double lse = mx + std::log1p(rest);
    r.loss += ((mx - logits[y]) + std::log1p(rest)) / double(N);

    for (int j = 0; j < num_classes; ++j)
      gcos[j] = s * (std::exp(logits[j] - lse) - (j == y ? 1.0 : 0.0)) / double(N);
    auto& gf = r.grad_embeddings[i];
    for (int j = 0; j < num_classes; ++j) {
      const double gc = gcos[j];
      for (int d = 0; d < D; ++d) {
        const double wh = class_weights[j * D + d] / wnorm[j];
        const double fh = f[d] / fn;
        gf[d] += gc * (wh - cos[j] * fh) / fn;
        r.grad_weights[std::size_t(j) * D + d] += gc * (fh - cos[j] * wh) / wnorm[j];
      }
    }
  }
  return r;
}

}  // namespace rsknet
