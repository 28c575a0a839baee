#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rsknet/container.hpp"
#include "rsknet/frontend.hpp"
#include "rsknet/params.hpp"

namespace rsknet {

/// One manifest line: `<utt_id> <speaker_id> <wav_path>`.
struct ManifestEntry {
  std::string utt;
  std::string speaker;
  std::string path;
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& source,
                                                 const std::string& base_dir = {}) {
  std::vector<ManifestEntry> out;
  std::map<std::string, int> seen;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '#') continue;
    std::istringstream is(line);
    std::vector<std::string> tok;
    for (std::string t; is >> t;) tok.push_back(t);
    const std::string where = source + ":" + std::to_string(n) + ": ";
    if (tok.size() != 3)
      throw DataError(where + "expected '<utt_id> <speaker_id> <wav_path>', got " + std::to_string(tok.size()) +
                      " fields");
    if (auto it = seen.find(tok[0]); it != seen.end())
      throw DataError(where + "duplicate utterance id '" + tok[0] + "' (first on line " +
                      std::to_string(it->second) + ")");
    seen[tok[0]] = n;
    std::filesystem::path path(tok[2]);
    if (path.is_relative() && !base_dir.empty()) path = std::filesystem::path(base_dir) / path;
    out.push_back({tok[0], tok[1], path.string()});
  }
  if (out.empty()) throw DataError(source + ": manifest is empty");
  return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  return parse_manifest(in, path);
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& e : entries) out << e.utt << ' ' << e.speaker << ' ' << e.path << '\n';
}

/// Speaker ids in sorted order; the index is the class label.
inline std::vector<std::string> speaker_list(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> s;
  for (const auto& e : entries) s.push_back(e.speaker);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

struct Utterance {
  std::string id;
  std::string speaker;
  int label = -1;
  FeatureMatrix feats;
};

/// Reads and featurizes every manifest entry. Utterances with no frame left
/// after VAD are reported as data errors.
inline std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& entries,
                                              const FrontendOptions& fe) {
  const auto speakers = speaker_list(entries);
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Utterance u;
    u.id = e.utt;
    u.speaker = e.speaker;
    u.label = static_cast<int>(std::lower_bound(speakers.begin(), speakers.end(), e.speaker) - speakers.begin());
    u.feats = extract_features(read_wav(e.path), fe);
    if (u.feats.frames == 0) throw DataError(e.path + ": no voiced frames after VAD");
    out.push_back(std::move(u));
  }
  return out;
}

/// Feature cache: one T x F record per utterance, keyed by utterance id.
inline void write_feature_cache(const std::string& path, const std::vector<Utterance>& utts,
                                const std::string& header = {}) {
  Container c;
  c.header = header;
  for (const auto& u : utts)
    c.records.push_back({u.id, {std::uint32_t(u.feats.frames), std::uint32_t(u.feats.bins)}, u.feats.data});
  write_container(path, c);
}

inline std::map<std::string, FeatureMatrix> read_feature_cache(const std::string& path) {
  std::map<std::string, FeatureMatrix> out;
  for (const auto& r : read_container(path).records) {
    if (r.shape.size() != 2) throw DataError(path + ": feature record '" + r.key + "' is not 2-D");
    FeatureMatrix f(static_cast<int>(r.shape[0]), static_cast<int>(r.shape[1]));
    f.data = r.data;
    out[r.key] = std::move(f);
  }
  return out;
}

/// Deterministic per-speaker split: round(fraction * n) utterances of every
/// speaker (at least one, never all) go to validation.
inline void split_per_speaker(const std::vector<Utterance>& all, double fraction, std::uint64_t seed,
                              std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < all.size(); ++i) by_label[all[i].label].push_back(i);
  Rng rng(seed ^ 0x5EED5EEDull);
  train.clear();
  val.clear();
  for (auto& [label, idx] : by_label) {
    rng.shuffle(idx.begin(), idx.end());
    std::size_t nv = static_cast<std::size_t>(std::lround(fraction * double(idx.size())));
    nv = std::clamp<std::size_t>(nv, idx.size() > 1 ? 1 : 0, idx.size() > 1 ? idx.size() - 1 : 0);
    for (std::size_t k = 0; k < idx.size(); ++k) (k < nv ? val : train).push_back(idx[k]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
}

}  // namespace rsknet
