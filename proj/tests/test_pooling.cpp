#include <gtest/gtest.h>

#include <cmath>

#include "rsknet/params.hpp"
#include "rsknet/pooling.hpp"

namespace {

using namespace rsknet;

Tensor3<double> random_stage(int t, int f, int c, Rng& rng) {
  Tensor3<double> x(t, f, c);
  fill_normal<double>(x.data, 1.0, rng);
  return x;
}

StageOutputs<double> random_stages(Rng& rng) {
  return {random_stage(9, 4, 2, rng), random_stage(5, 2, 3, rng), random_stage(3, 1, 4, rng),
          random_stage(2, 1, 5, rng)};
}

TEST(StatsPool, MatchesTwoPassOracle) {
  Rng rng(1);
  Matrix<double> x(7, 5);
  for (double& v : x.data) v = rng.normal() * 3.0 + 10.0;
  const auto s = stats_pool(x);
  ASSERT_EQ(s.size(), 10u);
  for (int n = 0; n < 5; ++n) {
    double mu = 0;
    for (int t = 0; t < 7; ++t) mu += x(t, n);
    mu /= 7;
    double var = 0;
    for (int t = 0; t < 7; ++t) var += (x(t, n) - mu) * (x(t, n) - mu);
    var /= 7;  // population variance
    EXPECT_NEAR(s[n], mu, 1e-12);
    EXPECT_NEAR(s[5 + n], std::sqrt(var), 1e-12);
  }
}

TEST(StatsPool, ConstantInputHasZeroSpreadAndZeroGradient) {
  Matrix<double> x(4, 3, 2.5);
  const auto s = stats_pool(x);
  for (int n = 0; n < 3; ++n) {
    EXPECT_DOUBLE_EQ(s[n], 2.5);
    EXPECT_DOUBLE_EQ(s[3 + n], 0.0);
  }
  std::vector<double> g(6, 1.0);
  const auto gx = stats_pool_backward<double>(x, g);
  for (double v : gx.data) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 1.0 / 4.0, 1e-15);  // only the mean path contributes
  }
}

TEST(StatsPool, SingleFrameIsFinite) {
  Matrix<double> x(1, 3, 0.0);
  x(0, 1) = 5.0;
  const auto s = stats_pool(x);
  EXPECT_DOUBLE_EQ(s[1], 5.0);
  EXPECT_DOUBLE_EQ(s[4], 0.0);
}

TEST(Mtsp, InvariantToTimeShuffleOfEveryStage) {
  Rng rng(2);
  StageOutputs<double> stages = random_stages(rng);
  const auto base = pool(PoolingKind::mtsp, stages).data;
  for (auto& s : stages) {
    std::vector<int> perm(s.t);
    for (int i = 0; i < s.t; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    Tensor3<double> shuffled(s.t, s.f, s.c);
    for (int t = 0; t < s.t; ++t) std::copy(s.row(perm[t]), s.row(perm[t]) + s.f * s.c, shuffled.row(t));
    s = shuffled;
  }
  const auto after = pool(PoolingKind::mtsp, stages).data;
  ASSERT_EQ(base.size(), after.size());
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], after[i], 1e-12);
}

TEST(Mtsp, LayoutConcatenatesStagesInOrder) {
  Rng rng(3);
  const auto stages = random_stages(rng);
  const auto p = pool(PoolingKind::mtsp, stages);
  EXPECT_EQ(p.data.size(), std::size_t(2 * (8 + 6 + 4 + 5)));
  ASSERT_EQ(p.layout.size(), 8u);
  EXPECT_EQ(p.layout[0].stage, 1);
  EXPECT_EQ(p.layout[0].stat, PoolSegment::Stat::mean);
  EXPECT_EQ(p.layout[1].stat, PoolSegment::Stat::std);
  EXPECT_EQ(p.layout[7].stage, 4);
  // The last stage's block equals SP pooling.
  const auto sp = pool(PoolingKind::sp, stages).data;
  for (std::size_t i = 0; i < sp.size(); ++i) EXPECT_EQ(p.data[p.data.size() - sp.size() + i], sp[i]);
}

TEST(Mtsp, FlatteningIsFrequencyMajor) {
  Tensor3<double> x(2, 2, 3);
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 2; ++f)
      for (int c = 0; c < 3; ++c) x(t, f, c) = 100 * t + 10 * f + c;
  const auto m = flatten_time(x);
  EXPECT_EQ(m.cols, 6);
  EXPECT_DOUBLE_EQ(m(1, 4), 111.0);  // f=1, c=1
}

TEST(PooledDim, DefaultConfigurations) {
  const std::array<int, 4> freq{40, 20, 10, 5}, width{32, 64, 128, 256};
  EXPECT_EQ(pooled_dim(PoolingKind::mtsp, freq, width), 10240);
  EXPECT_EQ(pooled_dim(PoolingKind::sp, freq, width), 2560);
  EXPECT_EQ(pooled_dim(PoolingKind::gap, freq, width), 256);
}

TEST(Pooling, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  StageOutputs<double> stages = random_stages(rng);
  for (PoolingKind kind : {PoolingKind::mtsp, PoolingKind::sp, PoolingKind::gap}) {
    const std::size_t dim = pool(kind, stages).data.size();
    std::vector<double> r(dim);
    for (double& v : r) v = rng.uniform(-1, 1);
    auto objective = [&] {
      const auto v = pool(kind, stages).data;
      double a = 0;
      for (std::size_t i = 0; i < dim; ++i) a += r[i] * v[i];
      return a;
    };
    const auto g = pool_backward<double>(kind, stages, r);
    for (int s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < stages[s].data.size(); ++i) {
        const double keep = stages[s].data[i];
        stages[s].data[i] = keep + 1e-6;
        const double up = objective();
        stages[s].data[i] = keep - 1e-6;
        const double down = objective();
        stages[s].data[i] = keep;
        EXPECT_NEAR(g[s].data[i], (up - down) / 2e-6, 1e-6);
      }
  }
}

TEST(Pooling, RejectsEmptyStage) {
  StageOutputs<double> stages{Tensor3<double>(2, 1, 1), Tensor3<double>(2, 1, 1), Tensor3<double>(2, 1, 1),
                              Tensor3<double>(0, 1, 1)};
  EXPECT_THROW(pool(PoolingKind::mtsp, stages), ShapeError);
}

}  // namespace
