#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rsknet/backbone.hpp"
#include "rsknet/grad_check.hpp"
#include "rsknet/heads.hpp"
#include "rsknet/pooling.hpp"
#include "rsknet/sk_block.hpp"

namespace rsknet {

/// One named finite-difference check over a layer type.
struct GradCase {
  std::string name;
  std::function<GradCheckResult(const GradCheckOptions&)> run;
};

struct GradCaseResult {
  std::string name;
  GradCheckResult result;
};

namespace detail {

inline Batch<double> random_batch(const std::vector<std::array<int, 3>>& shapes, Rng& rng) {
  Batch<double> xs;
  for (const auto& s : shapes) {
    Tensor3<double> x(s[0], s[1], s[2]);
    fill_normal<double>(x.data, 1.0, rng);
    xs.push_back(std::move(x));
  }
  return xs;
}

/// Builds a layer through `make(store, rng)` and checks it on random inputs.
template <typename Make>
GradCheckResult check_layer(Make make, const std::vector<std::array<int, 3>>& shapes, Mode mode,
                            const GradCheckOptions& opt) {
  Rng rng(opt.seed + 17);
  ParamStore<double> store;
  const auto layer = make(store, rng);
  // Perturb BN affine parameters so the checks do not sit at gamma=1, beta=0.
  for (int id = 0; id < static_cast<int>(store.size()); ++id)
    if (store.entry(id).kind == ParamKind::bn)
      for (double& v : store.value(id)) v += 0.3 * rng.normal();
  Batch<double> xs = random_batch(shapes, rng);
  GradProblem p = layer_problem(layer, store, xs, mode, opt.seed + 29);
  return grad_check(p, opt);
}

inline GradCheckResult check_conv(const ConvSpec& spec, int t, int f, const GradCheckOptions& opt) {
  return check_layer([&](ParamStore<double>& s, Rng& r) { return Conv<double>(s, "conv", spec, r); },
                     {{t, f, spec.in_ch}, {t - 1, f + 1, spec.in_ch}}, Mode::train, opt);
}

}  // namespace detail

/// Every differentiable layer type of the engine, in double precision.
inline std::vector<GradCase> gradient_suite() {
  using detail::check_conv;
  using detail::check_layer;
  std::vector<GradCase> cases;
  cases.push_back({"conv_standard", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{3, 3, 3, 4, 1, 1, 1}, 6, 5, o);
                   }});
  cases.push_back({"conv_strided", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{3, 3, 3, 4, 2, 1, 1}, 7, 6, o);
                   }});
  cases.push_back({"conv_dilated", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{3, 3, 3, 4, 1, 2, 1}, 7, 6, o);
                   }});
  cases.push_back({"conv_grouped", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{3, 3, 4, 6, 1, 1, 2}, 6, 5, o);
                   }});
  cases.push_back({"conv_depthwise", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{3, 3, 4, 4, 1, 1, 4}, 6, 5, o);
                   }});
  cases.push_back({"conv_pointwise", [](const GradCheckOptions& o) {
                     return check_conv(ConvSpec{1, 1, 4, 3, 1, 1, 1}, 5, 4, o);
                   }});
  cases.push_back({"conv_unit_dsc", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return ConvUnit<double>(s, "unit", 4, 6, 3, 2, 1,
                                                   {ConvKind::depthwise_separable, 4}, r);
                         },
                         {{6, 5, 4}, {5, 6, 4}}, Mode::train, o);
                   }});
  cases.push_back({"batchnorm_train", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng&) { return BatchNorm<double>(s, "bn", 3); },
                         {{4, 3, 3}, {2, 5, 3}}, Mode::train, o);
                   }});
  cases.push_back({"batchnorm_infer", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           BatchNorm<double> bn(s, "bn", 3);
                           for (double& v : s.value(bn.mean_id())) v = r.normal();
                           for (double& v : s.value(bn.var_id())) v = r.uniform(0.5, 2.0);
                           return bn;
                         },
                         {{4, 3, 3}, {2, 5, 3}}, Mode::infer, o);
                   }});
  cases.push_back({"linear_full_head", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return EmbeddingHead<double>(s, "head", HeadKind::full, 12, 5, 0, r);
                         },
                         {{1, 1, 12}, {1, 1, 12}, {1, 1, 12}}, Mode::train, o);
                   }});
  cases.push_back({"low_rank_head", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return EmbeddingHead<double>(s, "head", HeadKind::low_rank, 12, 5, 3, r);
                         },
                         {{1, 1, 12}, {1, 1, 12}, {1, 1, 12}}, Mode::train, o);
                   }});
  cases.push_back({"skconv_attention", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return SKConv<double>(s, "sk", 3, 4, 1, {}, r);
                         },
                         {{6, 5, 3}, {5, 6, 3}, {7, 4, 3}}, Mode::train, o);
                   }});
  cases.push_back({"rsk_block", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return RSKBlock<double>(s, "blk", 2, 4, 2, {}, r);
                         },
                         {{6, 5, 2}, {5, 6, 2}, {7, 4, 2}}, Mode::train, o);
                   }});
  cases.push_back({"basic_block_dilated", [](const GradCheckOptions& o) {
                     return check_layer(
                         [](ParamStore<double>& s, Rng& r) {
                           return BasicBlock<double>(s, "blk", 2, 4, 2, 2, {}, r);
                         },
                         {{6, 5, 2}, {5, 6, 2}}, Mode::train, o);
                   }});
  cases.push_back({"stats_pool_mtsp", [](const GradCheckOptions& o) {
                     Rng rng(o.seed + 3);
                     auto stages = std::make_shared<StageOutputs<double>>();
                     const int t[4] = {8, 4, 2, 1}, f[4] = {4, 2, 1, 1}, c[4] = {2, 3, 4, 5};
                     for (int i = 0; i < 4; ++i) {
                       (*stages)[i] = Tensor3<double>(t[i] + 1, f[i], c[i]);
                       fill_normal<double>((*stages)[i].data, 1.0, rng);
                     }
                     const std::size_t dim = pool(PoolingKind::mtsp, *stages).data.size();
                     const auto r = projection_weights(dim, rng);
                     GradProblem p;
                     for (int i = 0; i < 4; ++i)
                       p.variables.push_back({"stage" + std::to_string(i + 1), std::span<double>((*stages)[i].data)});
                     p.loss = [stages, r] {
                       const auto v = pool(PoolingKind::mtsp, *stages).data;
                       double acc = 0;
                       for (std::size_t i = 0; i < v.size(); ++i) acc += r[i] * v[i];
                       return acc;
                     };
                     p.gradient = [stages, r] {
                       const auto g = pool_backward<double>(PoolingKind::mtsp, *stages, r);
                       std::vector<std::vector<double>> out;
                       for (int i = 0; i < 4; ++i) out.push_back(g[i].data);
                       return out;
                     };
                     return grad_check(p, o);
                   }});
  cases.push_back({"am_softmax", [](const GradCheckOptions& o) {
                     Rng rng(o.seed + 5);
                     const int N = 4, D = 6, C = 5;
                     auto emb = std::make_shared<std::vector<std::vector<double>>>(N, std::vector<double>(D));
                     auto W = std::make_shared<std::vector<double>>(C * D);
                     for (auto& e : *emb) fill_normal<double>(e, 1.0, rng);
                     fill_normal<double>(*W, 1.0, rng);
                     const std::vector<int> labels{0, 3, 3, 1};
                     auto eval = [emb, W, labels, C] {
                       std::vector<std::span<const double>> views(emb->begin(), emb->end());
                       // s=30 makes the loss stiff; a smaller scale keeps differences well-conditioned.
                       return am_softmax_loss<double>(views, labels, *W, C, 4.0, 0.2);
                     };
                     GradProblem p;
                     for (int i = 0; i < N; ++i)
                       p.variables.push_back({"embedding" + std::to_string(i), std::span<double>((*emb)[i])});
                     p.variables.push_back({"class_weights", std::span<double>(*W)});
                     p.loss = [eval] { return eval().loss; };
                     p.gradient = [eval] {
                       auto r = eval();
                       auto out = r.grad_embeddings;
                       out.push_back(r.grad_weights);
                       return out;
                     };
                     return grad_check(p, o);
                   }});
  cases.push_back({"full_model_loss", [](const GradCheckOptions& o) {
                     ModelConfig cfg;
                     cfg.depths = {1, 1, 1, 1};
                     cfg.widths = {2, 4, 8, 16};
                     cfg.n_mels = 8;
                     cfg.embed_dim = 6;
                     cfg.num_classes = 3;
                     cfg.head = HeadKind::low_rank;
                     cfg.low_rank = 4;
                     cfg.am_scale = 4.0;
                     auto model = std::make_shared<Model<double>>(cfg, o.seed + 11);
                     Rng rng(o.seed + 13);
                     auto feats = std::make_shared<Batch<double>>(detail::random_batch({{16, 8, 1}, {17, 8, 1}, {16, 8, 1}}, rng));
                     const std::vector<int> labels{0, 2, 1};
                     GradProblem p;
                     std::vector<int> ids;
                     for (int id = 0; id < static_cast<int>(model->params.size()); ++id) {
                       if (!model->params.entry(id).learnable()) continue;
                       ids.push_back(id);
                       p.variables.push_back({model->params.entry(id).path, model->params.value(id)});
                     }
                     p.loss = [model, feats, labels] { return model->loss(*feats, labels, Mode::train, nullptr, false); };
                     p.gradient = [model, feats, labels, ids] {
                       GradStore<double> g(model->params);
                       model->loss(*feats, labels, Mode::train, &g, false);
                       std::vector<std::vector<double>> out;
                       for (int id : ids) out.emplace_back(g[id].begin(), g[id].end());
                       return out;
                     };
                     GradCheckOptions sub = o;
                     sub.max_per_variable = 4;
                     sub.largest_first = true;
                     sub.step = std::min(o.step, 1e-6);  // fewer ReLU kinks crossed inside the stencil
                     return grad_check(p, sub);
                   }});
  return cases;
}

inline std::vector<GradCaseResult> run_gradient_suite(const GradCheckOptions& opt = {}) {
  std::vector<GradCaseResult> out;
  for (const auto& c : gradient_suite()) out.push_back({c.name, c.run(opt)});
  return out;
}

}  // namespace rsknet
