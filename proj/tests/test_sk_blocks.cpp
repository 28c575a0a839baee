#include <gtest/gtest.h>

#include <cmath>

#include "rsknet/grad_check.hpp"
#include "rsknet/sk_block.hpp"

namespace {

using namespace rsknet;

Batch<double> random_batch(int n, int t, int f, int c, Rng& rng) {
  Batch<double> xs;
  for (int i = 0; i < n; ++i) {
    Tensor3<double> x(t, f, c);
    fill_normal<double>(x.data, 1.0, rng);
    xs.push_back(std::move(x));
  }
  return xs;
}

TEST(SkHiddenDim, FloorDivisionWithMinimum) {
  EXPECT_EQ(sk_hidden_dim(32), 32);
  EXPECT_EQ(sk_hidden_dim(256), 32);
  EXPECT_EQ(sk_hidden_dim(1024), 64);
  EXPECT_EQ(sk_hidden_dim(520), 32);
  EXPECT_EQ(sk_hidden_dim(1040), 65);
}

TEST(SKConv, AttentionWeightsAreConvexPerChannel) {
  Rng rng(1);
  ParamStore<double> store;
  SKConv<double> sk(store, "sk", 3, 8, 1, {}, rng);
  // Large attention weights push the pairwise softmax towards saturation.
  for (double& v : store.value(sk.att_a_id())) v *= 50.0;
  const Batch<double> xs = random_batch(3, 7, 6, 3, rng);
  for (Mode mode : {Mode::train, Mode::infer}) {
    const Ctx<double> ctx{&store, nullptr, mode};
    Batch<double> u = sk.std_branch().forward(ctx, xs, nullptr);
    add_inplace(u, sk.dil_branch().forward(ctx, xs, nullptr));
    const auto w = sk.attention(ctx, u, nullptr);
    for (std::size_t n = 0; n < xs.size(); ++n)
      for (int c = 0; c < 8; ++c) {
        EXPECT_GE(w.a[n][c], 0.0);
        EXPECT_GE(w.b[n][c], 0.0);
        EXPECT_NEAR(w.a[n][c] + w.b[n][c], 1.0, 1e-12);
      }
  }
}

TEST(SKConv, OutputIsAttentionWeightedBranchSum) {
  Rng rng(2);
  ParamStore<double> store;
  SKConv<double> sk(store, "sk", 2, 4, 2, {}, rng);
  const Batch<double> xs = random_batch(2, 9, 8, 2, rng);
  const Ctx<double> ctx{&store, nullptr, Mode::train};
  const Batch<double> v = sk.forward(ctx, xs, nullptr);
  const Batch<double> u1 = sk.std_branch().forward(ctx, xs, nullptr);
  const Batch<double> u2 = sk.dil_branch().forward(ctx, xs, nullptr);
  Batch<double> u = u1;
  add_inplace(u, u2);
  const auto w = sk.attention(ctx, u, nullptr);
  ASSERT_EQ(v[0].t, 5);
  ASSERT_EQ(v[0].f, 4);
  ASSERT_EQ(v[0].c, 4);
  for (std::size_t n = 0; n < xs.size(); ++n)
    for (std::size_t i = 0; i < v[n].data.size(); ++i) {
      const int c = int(i % 4);
      EXPECT_NEAR(v[n].data[i], w.a[n][c] * u1[n].data[i] + w.b[n][c] * u2[n].data[i], 1e-12);
    }
}

TEST(SKConv, RejectsWrongChannelCount) {
  Rng rng(3);
  ParamStore<double> store;
  SKConv<double> sk(store, "sk", 3, 4, 1, {}, rng);
  const Ctx<double> ctx{&store, nullptr, Mode::train};
  EXPECT_THROW(sk.forward(ctx, random_batch(2, 5, 5, 2, rng), nullptr), ShapeError);
}

TEST(SKConv, DilatedBranchUsesDilationTwo) {
  Rng rng(4);
  ParamStore<double> store;
  SKConv<double> sk(store, "sk", 1, 2, 1, {}, rng);
  EXPECT_EQ(sk.hidden(), 32);
  EXPECT_GE(store.find("sk.std.conv.weight"), 0);
  EXPECT_GE(store.find("sk.dil.conv.weight"), 0);
  EXPECT_GE(store.find("sk.squeeze"), 0);
  EXPECT_EQ(store.value(sk.squeeze_id()).size(), 32u * 2u);
}

TEST(RSKBlock, ProjectionShortcutOnlyWhenShapeChanges) {
  Rng rng(5);
  ParamStore<double> store;
  RSKBlock<double> same(store, "a", 4, 4, 1, {}, rng);
  RSKBlock<double> down(store, "b", 4, 8, 2, {}, rng);
  EXPECT_FALSE(same.has_projection());
  EXPECT_TRUE(down.has_projection());
  const Ctx<double> ctx{&store, nullptr, Mode::train};
  const Batch<double> xs = random_batch(2, 10, 7, 4, rng);
  const auto y = down.forward(ctx, same.forward(ctx, xs, nullptr), nullptr);
  EXPECT_EQ(y[0].t, 5);
  EXPECT_EQ(y[0].f, 4);
  EXPECT_EQ(y[0].c, 8);
  for (const auto& t : y)
    for (double v : t.data) EXPECT_GE(v, 0.0);
}

TEST(RSKBlock, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  ParamStore<double> store;
  RSKBlock<double> blk(store, "blk", 2, 4, 2, {ConvKind::grouped, 2}, rng);
  Batch<double> xs = random_batch(3, 6, 5, 2, rng);
  GradProblem p = layer_problem(blk, store, xs, Mode::train, 9);
  GradCheckOptions opt;
  opt.max_per_variable = 6;
  const auto r = grad_check(p, opt);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

}  // namespace
