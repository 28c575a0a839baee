#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rsknet/tensor.hpp"

namespace rsknet {

// ---------------------------------------------------------------------------
// Embedding post-processing and cosine scoring.

/// (e - mean) / ||e - mean||.
template <typename T>
std::vector<T> postprocess(std::span<const T> e, std::span<const T> mean) {
  if (e.size() != mean.size()) throw ShapeError("postprocess: embedding and mean differ in length");
  std::vector<double> c(e.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    c[i] = double(e[i]) - double(mean[i]);
    norm += c[i] * c[i];
  }
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw NumericalError("postprocess: embedding equals the centering mean");
  std::vector<T> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<T>(c[i] / norm);
  return out;
}

template <typename T>
std::vector<double> mean_embedding(const std::vector<std::vector<T>>& embs) {
  if (embs.empty()) throw DataError("mean_embedding: no embeddings");
  std::vector<double> m(embs.front().size(), 0.0);
  for (const auto& e : embs) {
    if (e.size() != m.size()) throw ShapeError("mean_embedding: ragged embeddings");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += e[i];
  }
  for (double& v : m) v /= double(embs.size());
  return m;
}

template <typename T>
double cosine_score(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_score: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericalError("cosine_score: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Trials.

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;
  double score = std::numeric_limits<double>::quiet_NaN();
};

using TrialSet = std::vector<Trial>;

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

inline bool blank_or_comment(const std::string& line) {
  const auto p = line.find_first_not_of(" \t\r");
  return p == std::string::npos || line[p] == '#';
}

}  // namespace detail

/// `<enroll_id> <test_id> <target|nontarget>` per line.
inline TrialSet parse_trials(std::istream& in, const std::string& source = "trials") {
  TrialSet out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (detail::blank_or_comment(line)) continue;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 3)
      throw DataError(source + ":" + std::to_string(n) + ": expected 3 fields, got " + std::to_string(tok.size()));
    if (tok[2] != "target" && tok[2] != "nontarget")
      throw DataError(source + ":" + std::to_string(n) + ": label must be 'target' or 'nontarget', got '" +
                      tok[2] + "'");
    out.push_back({tok[0], tok[1], tok[2] == "target"});
  }
  return out;
}

inline TrialSet read_trials(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trial list " + path);
  return parse_trials(in, path);
}

inline void write_trials(const std::string& path, const TrialSet& ts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trial list " + path);
  for (const auto& t : ts) out << t.enroll << ' ' << t.test << ' ' << (t.target ? "target" : "nontarget") << '\n';
}

using ScoreList = std::vector<std::pair<std::pair<std::string, std::string>, double>>;

/// `<enroll_id> <test_id> <score>` per line.
inline ScoreList parse_scores(std::istream& in, const std::string& source = "scores") {
  ScoreList out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (detail::blank_or_comment(line)) continue;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 3)
      throw DataError(source + ":" + std::to_string(n) + ": expected 3 fields, got " + std::to_string(tok.size()));
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(tok[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok[2].size() || !std::isfinite(v))
      throw DataError(source + ":" + std::to_string(n) + ": invalid score '" + tok[2] + "'");
    out.push_back({{tok[0], tok[1]}, v});
  }
  return out;
}

inline ScoreList read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file " + path);
  return parse_scores(in, path);
}

inline void write_scores(const std::string& path, const TrialSet& ts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write score file " + path);
  out.precision(17);
  for (const auto& t : ts) out << t.enroll << ' ' << t.test << ' ' << t.score << '\n';
}

/// Attaches scores to labelled trials by (enroll, test) key.
inline TrialSet attach_scores(TrialSet trials, const ScoreList& scores) {
  std::map<std::pair<std::string, std::string>, double> by_key;
  for (const auto& [k, v] : scores) by_key[k] = v;
  for (auto& t : trials) {
    auto it = by_key.find({t.enroll, t.test});
    if (it == by_key.end()) throw DataError("no score for trial " + t.enroll + " " + t.test);
    t.score = it->second;
  }
  return trials;
}

// ---------------------------------------------------------------------------
// Metrics. A trial is accepted when score >= threshold.

struct OperatingPoint {
  double threshold;
  double p_fa;
  double p_fr;
};

struct DcfParams {
  double c_fr = 1.0;
  double c_fa = 1.0;
  double p_target = 0.01;
  double c_default() const { return std::min(c_fr * p_target, c_fa * (1.0 - p_target)); }
};

namespace detail {

inline void check_scored(const TrialSet& ts) {
  std::size_t nt = 0, nn = 0;
  for (const auto& t : ts) {
    if (!std::isfinite(t.score)) throw DataError("trial " + t.enroll + " " + t.test + " has no finite score");
    (t.target ? nt : nn)++;
  }
  if (nt == 0 || nn == 0) throw DataError("metrics need at least one target and one nontarget trial");
}

}  // namespace detail

/// Operating points at every unique score (ascending), followed by +inf where
/// everything is rejected.
inline std::vector<OperatingPoint> sweep(const TrialSet& ts) {
  detail::check_scored(ts);
  std::vector<std::pair<double, bool>> s;
  s.reserve(ts.size());
  std::size_t nt = 0;
  for (const auto& t : ts) {
    s.push_back({t.score, t.target});
    nt += t.target;
  }
  const std::size_t nn = ts.size() - nt;
  std::sort(s.begin(), s.end());
  std::vector<OperatingPoint> pts;
  std::size_t below_t = 0, below_n = 0;  // trials with score < threshold
  for (std::size_t i = 0; i < s.size();) {
    const double th = s[i].first;
    pts.push_back({th, double(nn - below_n) / nn, double(below_t) / nt});
    for (; i < s.size() && s[i].first == th; ++i) (s[i].second ? below_t : below_n)++;
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return pts;
}

/// EER in percent. The crossing is the first operating point with
/// P_FR - P_FA >= 0; the value is interpolated linearly against the previous
/// point along the segment joining them.
inline double compute_eer(const TrialSet& ts) {
  const auto pts = sweep(ts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].p_fr - pts[i].p_fa;
    if (d < 0.0) continue;
    if (d == 0.0 || i == 0) return 100.0 * pts[i].p_fr;
    const double d0 = pts[i - 1].p_fr - pts[i - 1].p_fa;
    const double a = -d0 / (d - d0);
    return 100.0 * (pts[i - 1].p_fr + a * (pts[i].p_fr - pts[i - 1].p_fr));
  }
  return 100.0;  // unreachable: the +inf point always has P_FR - P_FA = 1
}

inline double detection_cost(const OperatingPoint& p, const DcfParams& dcf) {
  return dcf.c_fr * dcf.p_target * p.p_fr + dcf.c_fa * (1.0 - dcf.p_target) * p.p_fa;
}

/// Normalized minimum detection cost over all operating points.
inline double compute_min_dcf(const TrialSet& ts, const DcfParams& dcf = {}) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : sweep(ts)) best = std::min(best, detection_cost(p, dcf));
  return best / dcf.c_default();
}

/// One operating point per unique score.
inline std::vector<OperatingPoint> det_points(const TrialSet& ts) {
  auto pts = sweep(ts);
  pts.pop_back();
  return pts;
}

inline void write_det_csv(const std::string& path, const std::vector<OperatingPoint>& pts) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write DET file " + path);
  out.precision(17);
  out << "threshold,p_fa,p_fr\n";
  for (const auto& p : pts) out << p.threshold << ',' << p.p_fa << ',' << p.p_fr << '\n';
}

struct EvalReport {
  double eer = 0.0;      // percent
  double min_dcf = 0.0;  // normalized
  std::vector<OperatingPoint> det;
  DcfParams params;
};

inline EvalReport evaluate(const TrialSet& ts, const DcfParams& dcf = {}) {
  return {compute_eer(ts), compute_min_dcf(ts, dcf), det_points(ts), dcf};
}

}  // namespace rsknet
