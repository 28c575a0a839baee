#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "rsknet/params.hpp"
#include "rsknet/scoring.hpp"

namespace {

using namespace rsknet;

TrialSet random_trials(Rng& rng, int nt, int nn, double separation, bool quantize) {
  TrialSet ts;
  for (int i = 0; i < nt + nn; ++i) {
    const bool target = i < nt;
    double s = rng.normal() + (target ? separation : 0.0);
    if (quantize) s = std::round(s * 4.0) / 4.0;  // forces ties
    ts.push_back({"e" + std::to_string(i), "t" + std::to_string(i), target, s});
  }
  return ts;
}

struct Rates {
  double p_fa, p_fr;
};

// Brute-force counting at a single threshold; accept when score >= th.
Rates rates_at(const TrialSet& ts, double th) {
  double fa = 0, fr = 0, nt = 0, nn = 0;
  for (const auto& t : ts) {
    if (t.target) {
      ++nt;
      fr += t.score < th;
    } else {
      ++nn;
      fa += t.score >= th;
    }
  }
  return {fa / nn, fr / nt};
}

std::vector<double> candidate_thresholds(const TrialSet& ts) {
  std::set<double> s;
  for (const auto& t : ts) s.insert(t.score);
  std::vector<double> v(s.begin(), s.end());
  v.push_back(std::numeric_limits<double>::infinity());
  return v;
}

double oracle_eer(const TrialSet& ts) {
  const auto th = candidate_thresholds(ts);
  for (std::size_t i = 0; i < th.size(); ++i) {
    const Rates r = rates_at(ts, th[i]);
    const double d = r.p_fr - r.p_fa;
    if (d < 0) continue;
    if (d == 0 || i == 0) return 100 * r.p_fr;
    const Rates q = rates_at(ts, th[i - 1]);
    const double d0 = q.p_fr - q.p_fa;
    return 100 * (q.p_fr + (-d0 / (d - d0)) * (r.p_fr - q.p_fr));
  }
  return 100;
}

double oracle_min_dcf(const TrialSet& ts, double p_target) {
  double best = 1e300;
  for (double th : candidate_thresholds(ts)) {
    const Rates r = rates_at(ts, th);
    best = std::min(best, p_target * r.p_fr + (1 - p_target) * r.p_fa);
  }
  return best / std::min(p_target, 1 - p_target);
}

TEST(Metrics, MatchBruteForceOracleOnRandomSets) {
  Rng rng(11);
  for (int k = 0; k < 120; ++k) {
    const int nt = 1 + int(rng.index(400)), nn = 1 + int(rng.index(1600));
    const auto ts = random_trials(rng, nt, nn, rng.uniform(0.0, 3.0), k % 3 == 0);
    const double eer = compute_eer(ts);
    EXPECT_NEAR(eer, oracle_eer(ts), 1e-9) << "set " << k;
    EXPECT_NEAR(compute_min_dcf(ts), oracle_min_dcf(ts, 0.01), 1e-9) << "set " << k;
    EXPECT_NEAR(compute_min_dcf(ts, {1, 1, 0.05}), oracle_min_dcf(ts, 0.05), 1e-9) << "set " << k;
    // The interpolated EER lies between the two error rates at some threshold.
    double lo = 100, hi = 100;
    for (double th : candidate_thresholds(ts)) {
      const Rates r = rates_at(ts, th);
      hi = std::min(hi, 100 * std::max(r.p_fa, r.p_fr));
      lo = std::min(lo, 100 * std::min(r.p_fa, r.p_fr));
    }
    EXPECT_LE(eer, hi + 1e-9);
    EXPECT_GE(eer, lo - 1e-9);
  }
}

TEST(Metrics, PerfectAndInvertedSeparation) {
  TrialSet ts;
  for (int i = 0; i < 10; ++i) ts.push_back({"a", "b", true, 1.0 + i});
  for (int i = 0; i < 30; ++i) ts.push_back({"a", "c", false, -1.0 - i});
  EXPECT_DOUBLE_EQ(compute_eer(ts), 0.0);
  EXPECT_DOUBLE_EQ(compute_min_dcf(ts), 0.0);
  for (auto& t : ts) t.score = -t.score;
  EXPECT_DOUBLE_EQ(compute_eer(ts), 100.0);
  EXPECT_DOUBLE_EQ(compute_min_dcf(ts), 1.0);  // never beats the trivial reject-all system
}

TEST(Metrics, DefaultCostNormalizer) {
  EXPECT_DOUBLE_EQ(DcfParams{}.c_default(), 0.01);
  EXPECT_DOUBLE_EQ((DcfParams{1, 1, 0.7}).c_default(), 0.3);
}

TEST(Metrics, InvariantUnderStrictlyIncreasingTransforms) {
  Rng rng(12);
  const auto ts = random_trials(rng, 50, 300, 1.5, false);
  auto mapped = ts;
  for (auto& t : mapped) t.score = std::exp(3.0 * t.score) + 7.0;
  EXPECT_NEAR(compute_eer(ts), compute_eer(mapped), 1e-12);
  EXPECT_NEAR(compute_min_dcf(ts), compute_min_dcf(mapped), 1e-12);
}

TEST(Metrics, AllTiedScoresGiveFiftyPercent) {
  TrialSet ts{{"a", "b", true, 0.3}, {"a", "c", false, 0.3}, {"a", "d", false, 0.3}};
  EXPECT_DOUBLE_EQ(compute_eer(ts), 50.0);
}

TEST(Metrics, RejectMissingClassesOrScores) {
  TrialSet only_targets{{"a", "b", true, 0.1}};
  EXPECT_THROW(compute_eer(only_targets), DataError);
  TrialSet unscored{{"a", "b", true}, {"a", "c", false, 0.0}};
  EXPECT_THROW(compute_min_dcf(unscored), DataError);
}

TEST(Det, MonotoneAndCollapsesDuplicates) {
  Rng rng(13);
  const auto ts = random_trials(rng, 40, 160, 1.0, true);
  const auto pts = det_points(ts);
  EXPECT_EQ(pts.size(), candidate_thresholds(ts).size() - 1);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_GT(pts[i].threshold, pts[i - 1].threshold);
    EXPECT_LE(pts[i].p_fa, pts[i - 1].p_fa);
    EXPECT_GE(pts[i].p_fr, pts[i - 1].p_fr);
  }
  EXPECT_DOUBLE_EQ(pts.front().p_fa, 1.0);
  EXPECT_DOUBLE_EQ(pts.front().p_fr, 0.0);
}

TEST(Parsing, TrialErrorsCarryLineNumbers) {
  std::istringstream ok("# comment\nspk1-a spk1-b target\n\nspk1-a spk2-a nontarget\n");
  const auto ts = parse_trials(ok);
  ASSERT_EQ(ts.size(), 2u);
  EXPECT_TRUE(ts[0].target);
  EXPECT_FALSE(ts[1].target);

  std::istringstream bad_label("a b target\na c maybe\n");
  try {
    parse_trials(bad_label, "list.txt");
    FAIL() << "accepted a bad label";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("list.txt:2:"), std::string::npos) << e.what();
  }
  std::istringstream bad_arity("a b target\n\na b\n");
  try {
    parse_trials(bad_arity, "list.txt");
    FAIL() << "accepted a short line";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("list.txt:3:"), std::string::npos) << e.what();
  }
}

TEST(Parsing, ScoreErrorsAndAttachment) {
  std::istringstream bad("a b 0.5\na c 0.5x\n");
  try {
    parse_scores(bad, "s.txt");
    FAIL() << "accepted a malformed score";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("s.txt:2:"), std::string::npos) << e.what();
  }
  std::istringstream nan_score("a b nan\n");
  EXPECT_THROW(parse_scores(nan_score), DataError);

  std::istringstream good("a b 0.25\na c -1e-3\n");
  const auto scores = parse_scores(good);
  TrialSet ts{{"a", "c", false}, {"a", "b", true}};
  const auto scored = attach_scores(ts, scores);
  EXPECT_DOUBLE_EQ(scored[0].score, -1e-3);
  EXPECT_DOUBLE_EQ(scored[1].score, 0.25);
  ts.push_back({"x", "y", true});
  EXPECT_THROW(attach_scores(ts, scores), DataError);
}

TEST(Parsing, ScoreFileRoundTripIsExact) {
  const auto path = (std::filesystem::temp_directory_path() / "rsknet_scores.txt").string();
  TrialSet ts{{"a", "b", true, 0.1 + 0.2}, {"a", "c", false, -1.0 / 3.0}};
  write_scores(path, ts);
  const auto back = attach_scores(ts, read_scores(path));
  EXPECT_EQ(back[0].score, ts[0].score);
  EXPECT_EQ(back[1].score, ts[1].score);
}

TEST(Postprocess, UnitNormAfterCentering) {
  Rng rng(14);
  for (int k = 0; k < 20; ++k) {
    std::vector<float> e(16), mean(16);
    fill_normal<float>(e, 3.0, rng);
    fill_normal<float>(mean, 1.0, rng);
    const auto p = postprocess<float>(e, mean);
    double n = 0;
    for (float v : p) n += double(v) * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_GT(p[i] * (e[i] - mean[i]), -1e-12);
  }
}

TEST(Postprocess, EmbeddingAtTheMeanIsAnError) {
  const std::vector<double> e{1, 2, 3};
  EXPECT_THROW(postprocess<double>(e, e), NumericalError);
  EXPECT_THROW(postprocess<double>(e, std::vector<double>{1, 2}), ShapeError);
}

TEST(Cosine, KnownCases) {
  const std::vector<double> a{1, 0, 0}, b{0, 2, 0}, c{-3, 0, 0}, d{1, 1, 0};
  EXPECT_DOUBLE_EQ(cosine_score<double>(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_score<double>(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine_score<double>(a, c), -1.0);
  EXPECT_NEAR(cosine_score<double>(a, d), std::sqrt(0.5), 1e-15);
  EXPECT_THROW(cosine_score<double>(a, std::vector<double>{0, 0, 0}), NumericalError);
}

TEST(Cosine, MeanEmbeddingAveragesComponents) {
  const std::vector<std::vector<float>> embs{{1, 2}, {3, 6}, {5, 1}};
  EXPECT_EQ(mean_embedding(embs), (std::vector<double>{3, 3}));
  EXPECT_THROW(mean_embedding(std::vector<std::vector<float>>{}), DataError);
}

}  // namespace
