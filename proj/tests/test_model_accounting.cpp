#include <gtest/gtest.h>

#include <map>

#include "rsknet/accounting.hpp"

namespace {

using namespace rsknet;

TEST(DscRatio, ExactRationalValues) {
  // 1/64 + 1/9 = 73/576.
  EXPECT_EQ(dsc_ratio(3, 3, 64, 64), (Rational{73, 576}));
  EXPECT_EQ(dsc_ratio(3, 3, 7, 64), dsc_ratio(3, 3, 64, 64));  // independent of i
  EXPECT_EQ(dsc_ratio(1, 1, 5, 5), (Rational{6, 5}));
  EXPECT_GT(dsc_ratio(3, 3, 8, 1).value(), 1.0);  // one output channel: DSC is larger
  EXPECT_THROW(dsc_ratio(3, 3, 0, 4), ShapeError);
}

TEST(LowRankSavings, DefaultShape) {
  EXPECT_EQ(low_rank_savings(10240, 256, 150), 1047040);
  EXPECT_EQ(low_rank_savings(10240, 256, 100), 2621440 - 1049600);
  EXPECT_LT(low_rank_savings(10, 10, 8), 0);
}

TEST(LowRankSavings, EqualsMeasuredModelDelta) {
  ModelConfig full;
  for (int p : {100, 150, 200}) {
    ModelConfig lr = full;
    lr.head = HeadKind::low_rank;
    lr.low_rank = p;
    const auto a = count_params(full).totals, b = count_params(lr).totals;
    EXPECT_EQ(std::int64_t(a.core - b.core), low_rank_savings(10240, 256, p)) << p;
    EXPECT_EQ(std::int64_t(a.core_bn_classifier - b.core_bn_classifier), low_rank_savings(10240, 256, p));
  }
}

TEST(DscRatio, MatchesMeasuredPerLayerCounts) {
  ModelConfig std_cfg, dsc_cfg;
  dsc_cfg.conv.kind = ConvKind::depthwise_separable;
  const auto a = count_params(std_cfg), b = count_params(dsc_cfg);
  std::map<std::string, const ParamRow*> rows;
  for (const auto& r : b.rows) rows[r.path] = &r;
  int matched = 0;
  for (const auto& r : a.rows) {
    if (r.kind != ParamKind::conv || r.shape[0] != 3 || !r.path.ends_with(".weight")) continue;
    const std::string base = r.path.substr(0, r.path.size() - 7);
    const auto dw = rows.find(base + ".dw.weight"), pw = rows.find(base + ".pw.weight");
    if (dw == rows.end() || pw == rows.end()) continue;
    const int i = r.shape[2], o = r.shape[3];
    const Rational measured = make_rational(std::int64_t(dw->second->count + pw->second->count), r.count);
    EXPECT_EQ(measured, dsc_ratio(3, 3, i, o)) << r.path;
    ++matched;
  }
  EXPECT_GT(matched, 30);
}

TEST(Accounting, ConventionsNestAndBuffersAreExcluded) {
  const auto rep = count_params(ModelConfig{});
  EXPECT_LT(rep.totals.core, rep.totals.core_bn);
  EXPECT_LT(rep.totals.core_bn, rep.totals.core_bn_classifier);
  EXPECT_EQ(rep.totals.core_bn_classifier - rep.totals.core_bn, 5994u * 256u);
  EXPECT_EQ(rep.by_kind(ParamKind::buffer), 0u);
  std::size_t sum = 0;
  for (const auto& r : rep.rows) sum += r.count;
  EXPECT_EQ(sum, rep.totals.core_bn_classifier);
}

TEST(Accounting, LiteHalvesEveryWidth) {
  const ModelConfig c;
  EXPECT_EQ(c.lite().widths, (std::array<int, 4>{16, 32, 64, 128}));
  EXPECT_EQ(c.lite().pooled_dim(), 5120);
  EXPECT_LT(count_params(c.lite()).totals.core, count_params(c).totals.core / 3);
}

TEST(Accounting, HeadlineModelsLandInBand) {
  const auto refs = reference_models();
  for (const char* name : {"RSKNet-MTSP", "ResNet34-SP"}) {
    const auto it = std::find_if(refs.begin(), refs.end(), [&](const auto& r) { return r.name == name; });
    ASSERT_NE(it, refs.end());
    const auto t = count_params(it->config).totals;
    EXPECT_TRUE(within_band(t.core, it->millions) || within_band(t.core_bn, it->millions) ||
                within_band(t.core_bn_classifier, it->millions))
        << name << " core " << t.core;
  }
}

TEST(Accounting, BandEdges) {
  EXPECT_TRUE(within_band(1'050'000, 1.0));
  EXPECT_TRUE(within_band(950'000, 1.0));
  EXPECT_FALSE(within_band(1'050'001, 1.0));
  EXPECT_FALSE(within_band(949'999, 1.0));
}

TEST(Accounting, ReportFormats) {
  ModelConfig c;
  c.widths = {4, 8, 16, 32};
  c.embed_dim = 8;
  c.num_classes = 3;
  const auto rep = count_params(c);
  const auto csv = report_csv(rep);
  EXPECT_EQ(csv.rfind("path,shape,kind,count\n", 0), 0u);
  EXPECT_NE(csv.find("total:core+bn," + std::string(",,") + std::to_string(rep.totals.core_bn)), std::string::npos);
  const auto text = report_text(rep, true);
  EXPECT_NE(text.find(rep.rows.front().path), std::string::npos);
  EXPECT_NE(text.find(format_millions(rep.totals.core)), std::string::npos);
}

}  // namespace
