#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rsknet/heads.hpp"
#include "rsknet/layers.hpp"
#include "rsknet/pooling.hpp"
#include "rsknet/sk_block.hpp"

namespace rsknet {

enum class Arch { rsknet, resnet34, dresnet34_1, dresnet34_2 };

/// Declarative description of a speaker-embedding network.
struct ModelConfig {
  Arch arch = Arch::rsknet;
  std::array<int, 4> depths{3, 4, 6, 3};
  std::array<int, 4> widths{32, 64, 128, 256};
  ConvKindSpec conv{};
  PoolingKind pooling = PoolingKind::mtsp;
  HeadKind head = HeadKind::full;
  int low_rank = 150;
  int embed_dim = 256;
  int num_classes = 5994;
  int n_mels = 40;
  double am_scale = 30.0;
  double am_margin = 0.2;

  /// Every width halved.
  ModelConfig lite() const {
    ModelConfig c = *this;
    for (int& w : c.widths) w /= 2;
    return c;
  }

  /// Frequency extent of each stage output for n_mels input bins.
  std::array<int, 4> stage_freq() const {
    std::array<int, 4> f{};
    f[0] = n_mels;
    for (int i = 1; i < 4; ++i) f[i] = (f[i - 1] + 1) / 2;
    return f;
  }

  int pooled_dim() const { return rsknet::pooled_dim(pooling, stage_freq(), widths); }

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      if (depths[i] < 1) throw ShapeError("config: stage depths must be >= 1");
      if (widths[i] < 1) throw ShapeError("config: stage widths must be >= 1");
      if (i > 0 && widths[i] != 2 * widths[i - 1])
        throw ShapeError("config: stage widths must double from stage to stage");
    }
    if (conv.kind == ConvKind::grouped) {
      if (conv.groups < 1) throw ShapeError("config: groups must be >= 1");
      for (int w : widths)
        if (w % conv.groups != 0)
          throw ShapeError("config: groups " + std::to_string(conv.groups) +
                           " does not divide width " + std::to_string(w));
    }
    if (embed_dim < 1) throw ShapeError("config: embed_dim must be >= 1");
    if (num_classes < 1) throw ShapeError("config: num_classes must be >= 1");
    if (n_mels < 8) throw ShapeError("config: n_mels must be >= 8");
    if (head == HeadKind::low_rank) validate_low_rank(low_rank, pooled_dim(), embed_dim);
    if (!(am_scale > 0.0) || !(am_margin >= 0.0 && am_margin < 1.0))
      throw ShapeError("config: AM-Softmax needs s > 0 and 0 <= m < 1");
  }
};

/// Dilation of the 3x3 convs in a reference ResNet stage (1-based stage).
inline int resnet_dilation(Arch arch, int stage) {
  switch (arch) {
    case Arch::dresnet34_1: return 2;
    case Arch::dresnet34_2: return stage == 3 ? 2 : stage == 4 ? 4 : 1;
    default: return 1;
  }
}

/// ResNet basic block: relu(BN(conv(relu(BN(conv(x))))) + shortcut(x)).
template <typename T>
class BasicBlock {
 public:
  struct Cache {
    typename ConvBnRelu<T>::Cache first;
    typename ConvUnit<T>::Cache conv2;
    typename BatchNorm<T>::Cache bn2;
    typename Projection<T>::Cache shortcut;
    Batch<T> y;
  };

  BasicBlock() = default;
  BasicBlock(ParamStore<T>& store, const std::string& path, int in, int channels, int stride,
             int dilation, ConvKindSpec kind, Rng& rng)
      : first_(store, path + ".conv1", in, channels, 3, stride, dilation, kind, rng),
        conv2_(store, path + ".conv2.conv", channels, channels, 3, 1, dilation, kind, rng),
        bn2_(store, path + ".conv2.bn", channels) {
    if (in != channels || stride > 1)
      shortcut_.emplace(store, path + ".shortcut", in, channels, stride, rng);
  }

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, Cache* cache) const {
    Batch<T> h = first_.forward(ctx, xs, cache ? &cache->first : nullptr);
    h = conv2_.forward(ctx, h, cache ? &cache->conv2 : nullptr);
    h = bn2_.forward(ctx, h, cache ? &cache->bn2 : nullptr);
    if (shortcut_)
      add_inplace(h, shortcut_->forward(ctx, xs, cache ? &cache->shortcut : nullptr));
    else
      add_inplace(h, xs);
    relu_inplace(h);
    if (cache) cache->y = h;
    return h;
  }

  Batch<T> backward(const Ctx<T>& ctx, const Cache& cache, Batch<T> gy, GradStore<T>& grads) const {
    relu_backward_inplace(gy, cache.y);
    Batch<T> g_short = shortcut_ ? shortcut_->backward(ctx, cache.shortcut, gy, grads) : gy;
    Batch<T> g = bn2_.backward(ctx, cache.bn2, gy, grads);
    g = conv2_.backward(ctx, cache.conv2, std::move(g), grads);
    g = first_.backward(ctx, cache.first, std::move(g), grads);
    add_inplace(g, g_short);
    return g;
  }

 private:
  ConvBnRelu<T> first_;
  ConvUnit<T> conv2_;
  BatchNorm<T> bn2_;
  std::optional<Projection<T>> shortcut_;
};

template <typename T>
struct BlockCache {
  typename RSKBlock<T>::Cache rsk;
  typename BasicBlock<T>::Cache basic;
};

template <typename T>
class Block {
 public:
  Block(RSKBlock<T> b) : impl_(std::move(b)) {}
  Block(BasicBlock<T> b) : impl_(std::move(b)) {}

  Batch<T> forward(const Ctx<T>& ctx, const Batch<T>& xs, BlockCache<T>* cache) const {
    if (auto* r = std::get_if<RSKBlock<T>>(&impl_)) return r->forward(ctx, xs, cache ? &cache->rsk : nullptr);
    return std::get<BasicBlock<T>>(impl_).forward(ctx, xs, cache ? &cache->basic : nullptr);
  }
  Batch<T> backward(const Ctx<T>& ctx, const BlockCache<T>& cache, Batch<T> gy,
                    GradStore<T>& grads) const {
    if (auto* r = std::get_if<RSKBlock<T>>(&impl_)) return r->backward(ctx, cache.rsk, std::move(gy), grads);
    return std::get<BasicBlock<T>>(impl_).backward(ctx, cache.basic, std::move(gy), grads);
  }
  const RSKBlock<T>* rsk() const { return std::get_if<RSKBlock<T>>(&impl_); }

 private:
  std::variant<RSKBlock<T>, BasicBlock<T>> impl_;
};

template <typename T>
using StageBatch = std::array<Batch<T>, 4>;

/// Built network: structure plus the parameter store it indexes into.
template <typename T>
class Model {
 public:
  struct Cache {
    typename ConvBnRelu<T>::Cache stem;
    std::array<std::vector<BlockCache<T>>, 4> blocks;
    StageBatch<T> stages;
    Batch<T> pooled;
    typename EmbeddingHead<T>::Cache head;
  };

  ModelConfig config;
  ParamStore<T> params;

  Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
    cfg.validate();
    Rng rng(seed);
    stem_ = ConvBnRelu<T>(params, "stem", 1, cfg.widths[0], 3, 1, 1, ConvKindSpec{}, rng);
    int in = cfg.widths[0];
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < cfg.depths[s]; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string path = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        if (cfg.arch == Arch::rsknet)
          stages_[s].emplace_back(RSKBlock<T>(params, path, in, cfg.widths[s], stride, cfg.conv, rng));
        else
          stages_[s].emplace_back(BasicBlock<T>(params, path, in, cfg.widths[s], stride,
                                                resnet_dilation(cfg.arch, s + 1), cfg.conv, rng));
        in = cfg.widths[s];
      }
    }
    head_ = EmbeddingHead<T>(params, "head", cfg.head, cfg.pooled_dim(), cfg.embed_dim,
                             cfg.low_rank, rng);
    classifier_ = params.add("classifier.weight", {cfg.num_classes, cfg.embed_dim},
                             ParamKind::classifier);
    fill_uniform(params.value(classifier_), 1.0 / std::sqrt(double(cfg.embed_dim)), rng);
  }

  const EmbeddingHead<T>& head() const { return head_; }
  const std::array<std::vector<Block<T>>, 4>& stages() const { return stages_; }
  int classifier_id() const { return classifier_; }

  Ctx<T> context(Mode mode, bool update_stats = false) {
    return Ctx<T>{&params, update_stats ? &params : nullptr, mode};
  }
  Ctx<T> context() const { return Ctx<T>{&params, nullptr, Mode::infer}; }

  /// Stage outputs for a batch of T x n_mels x 1 feature maps.
  StageBatch<T> forward_features(const Ctx<T>& ctx, const Batch<T>& feats, Cache* cache) const {
    for (const auto& x : feats) {
      if (x.c != 1 || x.f != config.n_mels)
        throw ShapeError("forward_features: expected T x " + std::to_string(config.n_mels) +
                         " x 1 input, got " + shape_str(x.t, x.f, x.c));
      if (x.t < 16)
        throw ShapeError("forward_features: " + std::to_string(x.t) +
                         " frames cannot survive three stride-2 reductions (need >= 16)");
    }
    StageBatch<T> out;
    Batch<T> h = stem_.forward(ctx, feats, cache ? &cache->stem : nullptr);
    for (int s = 0; s < 4; ++s) {
      if (cache) cache->blocks[s].resize(stages_[s].size());
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        h = stages_[s][b].forward(ctx, h, cache ? &cache->blocks[s][b] : nullptr);
      out[s] = h;
    }
    if (cache) cache->stages = out;
    return out;
  }

  Batch<T> pool_batch(const StageBatch<T>& stages) const {
    Batch<T> pooled;
    pooled.reserve(stages[0].size());
    for (std::size_t n = 0; n < stages[0].size(); ++n) {
      const StageOutputs<T> one{stages[0][n], stages[1][n], stages[2][n], stages[3][n]};
      pooled.push_back(Tensor3<T>::vector(pool(config.pooling, one).data));
    }
    return pooled;
  }

  /// 256-d (embed_dim) embeddings; no activation follows the head.
  Batch<T> embed(const Ctx<T>& ctx, const Batch<T>& feats, Cache* cache) const {
    StageBatch<T> stages = forward_features(ctx, feats, cache);
    Batch<T> pooled = pool_batch(stages);
    if (cache) cache->pooled = pooled;
    return head_.forward(ctx, pooled, cache ? &cache->head : nullptr);
  }

  /// Backpropagates dL/d(embedding) through head, pooling and backbone.
  void backward(const Ctx<T>& ctx, const Cache& cache, const Batch<T>& g_embed,
                GradStore<T>& grads) const {
    const Batch<T> g_pooled = head_.backward(ctx, cache.head, g_embed, grads);
    StageBatch<T> g_stage;
    for (int s = 0; s < 4; ++s) g_stage[s] = zeros_like(cache.stages[s]);
    for (std::size_t n = 0; n < g_pooled.size(); ++n) {
      const StageOutputs<T> one{cache.stages[0][n], cache.stages[1][n], cache.stages[2][n],
                                cache.stages[3][n]};
      StageOutputs<T> g = pool_backward<T>(config.pooling, one, g_pooled[n].data);
      for (int s = 0; s < 4; ++s) g_stage[s][n] = std::move(g[s]);
    }
    Batch<T> g = std::move(g_stage[3]);
    for (int s = 3; s >= 0; --s) {
      if (s < 3) add_inplace(g, g_stage[s]);
      for (std::size_t b = stages_[s].size(); b-- > 0;)
        g = stages_[s][b].backward(ctx, cache.blocks[s][b], std::move(g), grads);
    }
    stem_.backward(ctx, cache.stem, std::move(g), grads);
  }

  /// AM-Softmax loss of a labelled batch. Gradients accumulate into `grads`
  /// when non-null; BN running statistics update when `update_stats`.
  double loss(const Batch<T>& feats, std::span<const int> labels, Mode mode, GradStore<T>* grads,
              bool update_stats) {
    Ctx<T> ctx{&params, update_stats ? &params : nullptr, mode};
    Cache cache;
    const Batch<T> emb = embed(ctx, feats, grads ? &cache : nullptr);
    std::vector<std::span<const T>> views;
    for (const auto& e : emb) views.emplace_back(e.data);
    const AmSoftmaxResult r =
        am_softmax_loss<T>(views, labels, params.value(classifier_), config.num_classes,
                           config.am_scale, config.am_margin);
    if (grads) {
      auto gw = (*grads)[classifier_];
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += static_cast<T>(r.grad_weights[i]);
      Batch<T> g_embed;
      for (const auto& ge : r.grad_embeddings) {
        Tensor3<T> g(1, 1, static_cast<int>(ge.size()));
        for (std::size_t d = 0; d < ge.size(); ++d) g.data[d] = static_cast<T>(ge[d]);
        g_embed.push_back(std::move(g));
      }
      backward(ctx, cache, g_embed, *grads);
    }
    return r.loss;
  }

 private:
  ConvBnRelu<T> stem_;
  std::array<std::vector<Block<T>>, 4> stages_;
  EmbeddingHead<T> head_;
  int classifier_ = -1;
};

template <typename T = float>
Model<T> build_network(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

}  // namespace rsknet
