#include <gtest/gtest.h>

#include "rsknet/accounting.hpp"
#include "rsknet/backbone.hpp"

namespace {

using namespace rsknet;

ModelConfig tiny(Arch arch = Arch::rsknet) {
  ModelConfig c;
  c.arch = arch;
  c.depths = {1, 1, 1, 1};
  c.widths = {2, 4, 8, 16};
  c.n_mels = 8;
  c.embed_dim = 6;
  c.num_classes = 3;
  return c;
}

Batch<float> random_feats(int n, int t, int f, Rng& rng) {
  Batch<float> xs;
  for (int i = 0; i < n; ++i) {
    Tensor3<float> x(t, f, 1);
    fill_normal<float>(x.data, 1.0, rng);
    xs.push_back(std::move(x));
  }
  return xs;
}

TEST(ModelConfig, DefaultPooledDimensions) {
  ModelConfig c;
  EXPECT_EQ(c.stage_freq(), (std::array<int, 4>{40, 20, 10, 5}));
  EXPECT_EQ(c.pooled_dim(), 10240);
  c.pooling = PoolingKind::sp;
  EXPECT_EQ(c.pooled_dim(), 2560);
  c.pooling = PoolingKind::gap;
  EXPECT_EQ(c.pooled_dim(), 256);
}

TEST(ModelConfig, ValidationRejectsInconsistentConfigs) {
  ModelConfig c;
  c.widths = {32, 64, 100, 256};
  EXPECT_THROW(c.validate(), ShapeError);
  c = ModelConfig{};
  c.conv = {ConvKind::grouped, 3};
  EXPECT_THROW(c.validate(), ShapeError);
  c = ModelConfig{};
  c.head = HeadKind::low_rank;
  c.low_rank = 256;
  EXPECT_THROW(c.validate(), ShapeError);
  c.low_rank = 1;
  EXPECT_THROW(c.validate(), ShapeError);
  c.low_rank = 255;
  EXPECT_NO_THROW(c.validate());
  c = ModelConfig{};
  c.depths = {3, 0, 6, 3};
  EXPECT_THROW(c.validate(), ShapeError);
  c = ModelConfig{};
  c.am_margin = 1.0;
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(Model, StageShapesAndEmbeddingDimension) {
  Model<float> m(tiny(), 1);
  Rng rng(1);
  const auto xs = random_feats(2, 21, 8, rng);
  const auto stages = m.forward_features(m.context(Mode::train), xs, nullptr);
  const int t[4] = {21, 11, 6, 3}, f[4] = {8, 4, 2, 1}, c[4] = {2, 4, 8, 16};
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(stages[s][0].t, t[s]);
    EXPECT_EQ(stages[s][0].f, f[s]);
    EXPECT_EQ(stages[s][0].c, c[s]);
  }
  const auto e = m.embed(m.context(Mode::train), xs, nullptr);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].data.size(), 6u);
  for (float v : e[0].data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, RejectsShortOrMisshapenInput) {
  Model<float> m(tiny(), 1);
  Rng rng(2);
  EXPECT_THROW(m.embed(m.context(), random_feats(1, 15, 8, rng), nullptr), ShapeError);
  EXPECT_THROW(m.embed(m.context(), random_feats(1, 20, 9, rng), nullptr), ShapeError);
  EXPECT_NO_THROW(m.embed(m.context(), random_feats(1, 16, 8, rng), nullptr));
}

TEST(Model, VariableLengthUtterancesShareOneBatch) {
  Model<float> m(tiny(), 3);
  Rng rng(3);
  Batch<float> xs = random_feats(1, 16, 8, rng);
  auto more = random_feats(1, 37, 8, rng);
  xs.push_back(more[0]);
  const auto e = m.embed(m.context(), xs, nullptr);
  // Inference mode processes items independently.
  const auto e1 = m.embed(m.context(), Batch<float>{xs[1]}, nullptr);
  // Float GEMM blocking may differ with batch composition; allow rounding-level drift.
  for (std::size_t i = 0; i < e1[0].data.size(); ++i)
    EXPECT_NEAR(e[1].data[i], e1[0].data[i], 1e-5f * std::max(1.0f, std::abs(e1[0].data[i])));
}

TEST(Model, SeededInitializationIsDeterministic) {
  Model<float> a(tiny(), 42), b(tiny(), 42), c(tiny(), 43);
  bool differs = false;
  for (int id = 0; id < int(a.params.size()); ++id) {
    const auto va = a.params.value(id), vb = b.params.value(id), vc = c.params.value(id);
    for (std::size_t i = 0; i < va.size(); ++i) {
      ASSERT_EQ(va[i], vb[i]);
      differs |= va[i] != vc[i];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Model, DilatedResNetsHaveResNetParameterCount) {
  ModelConfig r;
  r.arch = Arch::resnet34;
  r.pooling = PoolingKind::sp;
  const auto base = count_params(r).totals;
  for (Arch a : {Arch::dresnet34_1, Arch::dresnet34_2}) {
    ModelConfig d = r;
    d.arch = a;
    const auto t = count_params(d).totals;
    EXPECT_EQ(t.core, base.core);
    EXPECT_EQ(t.core_bn, base.core_bn);
  }
  EXPECT_EQ(resnet_dilation(Arch::resnet34, 4), 1);
  EXPECT_EQ(resnet_dilation(Arch::dresnet34_1, 4), 2);
}

TEST(Model, ResNetForwardShapes) {
  for (Arch a : {Arch::resnet34, Arch::dresnet34_1, Arch::dresnet34_2}) {
    ModelConfig c = tiny(a);
    c.pooling = PoolingKind::sp;
    Model<float> m(c, 5);
    Rng rng(5);
    const auto e = m.embed(m.context(Mode::train), random_feats(2, 18, 8, rng), nullptr);
    EXPECT_EQ(e[0].data.size(), 6u);
  }
}

TEST(Model, LossGradientsAreFiniteForEveryVariant) {
  for (ConvKind k : {ConvKind::standard, ConvKind::depthwise_separable, ConvKind::grouped}) {
    ModelConfig c = tiny();
    c.widths = {4, 8, 16, 32};
    c.conv = {k, 2};
    c.head = HeadKind::low_rank;
    c.low_rank = 3;
    Model<float> m(c, 7);
    Rng rng(7);
    GradStore<float> g(m.params);
    const std::vector<int> labels{0, 1, 2};
    const double loss = m.loss(random_feats(3, 16, 8, rng), labels, Mode::train, &g, true);
    EXPECT_TRUE(std::isfinite(loss));
    for (int id = 0; id < int(g.size()); ++id)
      for (float v : g[id]) ASSERT_TRUE(std::isfinite(v)) << m.params.entry(id).path;
  }
}

}  // namespace
