#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rsknet/backbone.hpp"
#include "rsknet/frontend.hpp"

namespace rsknet {

// ---------------------------------------------------------------------------
// INI: [section] headers, `key = value` lines, '#' or ';' comments.

struct IniValue {
  std::string value;
};

using IniSection = std::map<std::string, IniValue>;

struct IniDocument {
  std::string source = "config";
  std::map<std::string, IniSection> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parsed by Boost.PropertyTree; syntax errors carry their line number.
inline IniDocument parse_ini(std::istream& in, const std::string& source = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw DataError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  IniDocument doc;
  doc.source = source;
  for (const auto& [name, sec] : tree) {
    if (sec.empty() && !sec.data().empty()) throw DataError(source + ": key '" + name + "' outside of any section");
    auto& out = doc.sections[name];
    for (const auto& [key, v] : sec) out[key] = {detail::trim(v.data())};
  }
  return doc;
}

inline IniDocument parse_ini_string(const std::string& text, const std::string& source = "config") {
  std::istringstream in(text);
  return parse_ini(in, source);
}

inline IniDocument read_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  return parse_ini(in, path);
}

/// Typed, unknown-key-rejecting reader over one section.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, const std::string& name) : doc_(doc), name_(name) {
    auto it = doc.sections.find(name);
    if (it != doc.sections.end()) sec_ = &it->second;
  }

  template <typename F>
  void field(const std::string& key, F&& apply) {
    known_.push_back(key);
    if (!sec_) return;
    auto it = sec_->find(key);
    if (it == sec_->end()) return;
    try {
      apply(it->second.value);
    } catch (const std::exception& e) {
      throw DataError(where() + key + ": " + e.what());
    }
  }

  void integer(const std::string& key, int& out) {
    field(key, [&](const std::string& v) { out = parse_number<int>(v); });
  }
  void u64(const std::string& key, std::uint64_t& out) {
    field(key, [&](const std::string& v) { out = parse_number<std::uint64_t>(v); });
  }
  void real(const std::string& key, double& out) {
    field(key, [&](const std::string& v) { out = parse_number<double>(v); });
  }
  void text(const std::string& key, std::string& out) {
    field(key, [&](const std::string& v) { out = v; });
  }
  void ints4(const std::string& key, std::array<int, 4>& out) {
    field(key, [&](const std::string& v) {
      std::array<int, 4> tmp{};
      std::istringstream is(v);
      std::string tok;
      int i = 0;
      while (std::getline(is, tok, ',')) {
        if (i == 4) throw DataError("expected exactly 4 comma-separated integers");
        tmp[i++] = parse_number<int>(detail::trim(tok));
      }
      if (i != 4) throw DataError("expected exactly 4 comma-separated integers");
      out = tmp;
    });
  }

  /// Rejects any key not declared through the typed accessors.
  void finish() const {
    if (!sec_) return;
    for (const auto& [k, v] : *sec_) {
      bool ok = false;
      for (const auto& n : known_) ok = ok || n == k;
      if (!ok) throw DataError(doc_.source + ": unknown key '" + k + "' in section [" + name_ + "]");
    }
  }

  template <typename N>
  static N parse_number(const std::string& s) {
    N v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || s.empty()) throw DataError("invalid number '" + s + "'");
    return v;
  }

 private:
  std::string where() const { return doc_.source + ": [" + name_ + "] "; }
  const IniDocument& doc_;
  std::string name_;
  const IniSection* sec_ = nullptr;
  std::vector<std::string> known_;
};

// ---------------------------------------------------------------------------
// Enum names.

inline const char* to_string(Arch a) {
  switch (a) {
    case Arch::rsknet: return "rsknet";
    case Arch::resnet34: return "resnet34";
    case Arch::dresnet34_1: return "dresnet34_1";
    case Arch::dresnet34_2: return "dresnet34_2";
  }
  return "?";
}
inline const char* to_string(ConvKind k) {
  switch (k) {
    case ConvKind::standard: return "standard";
    case ConvKind::depthwise_separable: return "dsc";
    case ConvKind::grouped: return "grouped";
  }
  return "?";
}
inline const char* to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::mtsp: return "mtsp";
    case PoolingKind::sp: return "sp";
    case PoolingKind::gap: return "gap";
  }
  return "?";
}
inline const char* to_string(HeadKind k) { return k == HeadKind::full ? "full" : "low_rank"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "rsknet") return Arch::rsknet;
  if (s == "resnet34") return Arch::resnet34;
  if (s == "dresnet34_1") return Arch::dresnet34_1;
  if (s == "dresnet34_2") return Arch::dresnet34_2;
  throw DataError("unknown arch '" + s + "' (rsknet|resnet34|dresnet34_1|dresnet34_2)");
}
inline ConvKind parse_conv_kind(const std::string& s) {
  if (s == "standard") return ConvKind::standard;
  if (s == "dsc" || s == "depthwise_separable") return ConvKind::depthwise_separable;
  if (s == "grouped" || s == "gc") return ConvKind::grouped;
  throw DataError("unknown conv kind '" + s + "' (standard|dsc|grouped)");
}
inline PoolingKind parse_pooling(const std::string& s) {
  if (s == "mtsp") return PoolingKind::mtsp;
  if (s == "sp") return PoolingKind::sp;
  if (s == "gap") return PoolingKind::gap;
  throw DataError("unknown pooling '" + s + "' (mtsp|sp|gap)");
}
inline HeadKind parse_head(const std::string& s) {
  if (s == "full" || s == "full_fc") return HeadKind::full;
  if (s == "low_rank") return HeadKind::low_rank;
  throw DataError("unknown head '" + s + "' (full|low_rank)");
}

// ---------------------------------------------------------------------------
// Engine configuration.

struct TrainConfig {
  int batch_size = 128;
  double momentum = 0.9;
  double lr_init = 0.01;
  double lr_decay_factor = 10.0;
  double lr_floor = 1e-6;
  int patience = 3;
  int max_epochs = 30;
  std::uint64_t seed = 0;
  int crop_frames = 200;
  double val_fraction = 0.1;

  void validate() const {
    if (batch_size < 2) throw DataError("train.batch_size must be >= 2");
    if (!(lr_init > lr_floor)) throw DataError("train.lr_init must exceed train.lr_floor");
    if (!(lr_floor > 0.0)) throw DataError("train.lr_floor must be positive");
    if (!(lr_decay_factor > 1.0)) throw DataError("train.lr_decay_factor must be > 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("train.momentum must lie in [0, 1)");
    if (patience < 1) throw DataError("train.patience must be >= 1");
    if (max_epochs < 1) throw DataError("train.max_epochs must be >= 1");
    if (crop_frames < 16) throw DataError("train.crop_frames must be >= 16");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DataError("train.val_fraction must lie in (0, 1)");
  }
};

struct PathsConfig {
  std::string manifest;
  std::string checkpoint_dir = "checkpoints";
  std::string output;
};

struct EngineConfig {
  ModelConfig model{};
  FrontendOptions features{};
  TrainConfig train{};
  PathsConfig paths{};
};

inline void read_model_section(const IniDocument& doc, ModelConfig& m) {
  SectionReader r(doc, "model");
  r.field("arch", [&](const std::string& v) { m.arch = parse_arch(v); });
  r.ints4("depths", m.depths);
  r.ints4("widths", m.widths);
  r.field("conv", [&](const std::string& v) { m.conv.kind = parse_conv_kind(v); });
  r.integer("groups", m.conv.groups);
  r.field("pooling", [&](const std::string& v) { m.pooling = parse_pooling(v); });
  r.field("head", [&](const std::string& v) { m.head = parse_head(v); });
  r.integer("low_rank", m.low_rank);
  r.integer("embed_dim", m.embed_dim);
  r.integer("num_classes", m.num_classes);
  r.integer("n_mels", m.n_mels);
  r.real("am_scale", m.am_scale);
  r.real("am_margin", m.am_margin);
  r.finish();
}

inline void read_features_section(const IniDocument& doc, FrontendOptions& f) {
  SectionReader r(doc, "features");
  r.integer("n_mels", f.fbank.n_mels);
  r.real("frame_len_ms", f.fbank.frame_len_ms);
  r.real("frame_shift_ms", f.fbank.frame_shift_ms);
  r.real("preemph", f.fbank.preemph);
  r.real("log_floor", f.fbank.log_floor);
  r.real("vad_relative_db", f.vad.relative_db);
  r.real("vad_absolute_floor", f.vad.absolute_floor);
  r.integer("cmn_window", f.cmn_window);
  r.finish();
}

inline void read_train_section(const IniDocument& doc, TrainConfig& t) {
  SectionReader r(doc, "train");
  r.integer("batch_size", t.batch_size);
  r.real("momentum", t.momentum);
  r.real("lr_init", t.lr_init);
  r.real("lr_decay_factor", t.lr_decay_factor);
  r.real("lr_floor", t.lr_floor);
  r.integer("patience", t.patience);
  r.integer("max_epochs", t.max_epochs);
  r.u64("seed", t.seed);
  r.integer("crop_frames", t.crop_frames);
  r.real("val_fraction", t.val_fraction);
  r.finish();
}

inline void read_paths_section(const IniDocument& doc, PathsConfig& p) {
  SectionReader r(doc, "paths");
  r.text("manifest", p.manifest);
  r.text("checkpoint_dir", p.checkpoint_dir);
  r.text("output", p.output);
  r.finish();
}

/// Builds an EngineConfig on top of `base`; unknown sections or keys fail
/// with the offending name.
inline EngineConfig load_engine_config(const IniDocument& doc, EngineConfig base = {}) {
  for (const auto& [name, sec] : doc.sections)
    if (name != "model" && name != "features" && name != "train" && name != "paths")
      throw DataError(doc.source + ": unknown section [" + name + "]");
  read_model_section(doc, base.model);
  read_features_section(doc, base.features);
  read_train_section(doc, base.train);
  read_paths_section(doc, base.paths);
  return base;
}

// ---------------------------------------------------------------------------
// Serialization (checkpoint headers, `--dump-config`).

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join4(const std::array<int, 4>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," +
         std::to_string(a[3]);
}

inline std::string to_ini(const ModelConfig& m) {
  std::ostringstream o;
  o << "[model]\n"
    << "arch = " << to_string(m.arch) << "\n"
    << "depths = " << join4(m.depths) << "\n"
    << "widths = " << join4(m.widths) << "\n"
    << "conv = " << to_string(m.conv.kind) << "\n"
    << "groups = " << m.conv.groups << "\n"
    << "pooling = " << to_string(m.pooling) << "\n"
    << "head = " << to_string(m.head) << "\n"
    << "low_rank = " << m.low_rank << "\n"
    << "embed_dim = " << m.embed_dim << "\n"
    << "num_classes = " << m.num_classes << "\n"
    << "n_mels = " << m.n_mels << "\n"
    << "am_scale = " << format_double(m.am_scale) << "\n"
    << "am_margin = " << format_double(m.am_margin) << "\n";
  return o.str();
}

inline std::string to_ini(const FrontendOptions& f) {
  std::ostringstream o;
  o << "[features]\n"
    << "n_mels = " << f.fbank.n_mels << "\n"
    << "frame_len_ms = " << format_double(f.fbank.frame_len_ms) << "\n"
    << "frame_shift_ms = " << format_double(f.fbank.frame_shift_ms) << "\n"
    << "preemph = " << format_double(f.fbank.preemph) << "\n"
    << "log_floor = " << format_double(f.fbank.log_floor) << "\n"
    << "vad_relative_db = " << format_double(f.vad.relative_db) << "\n"
    << "vad_absolute_floor = " << format_double(f.vad.absolute_floor) << "\n"
    << "cmn_window = " << f.cmn_window << "\n";
  return o.str();
}

inline std::string to_ini(const TrainConfig& t) {
  std::ostringstream o;
  o << "[train]\n"
    << "batch_size = " << t.batch_size << "\n"
    << "momentum = " << format_double(t.momentum) << "\n"
    << "lr_init = " << format_double(t.lr_init) << "\n"
    << "lr_decay_factor = " << format_double(t.lr_decay_factor) << "\n"
    << "lr_floor = " << format_double(t.lr_floor) << "\n"
    << "patience = " << t.patience << "\n"
    << "max_epochs = " << t.max_epochs << "\n"
    << "seed = " << t.seed << "\n"
    << "crop_frames = " << t.crop_frames << "\n"
    << "val_fraction = " << format_double(t.val_fraction) << "\n";
  return o.str();
}

inline std::string to_ini(const EngineConfig& c) {
  std::ostringstream o;
  o << to_ini(c.model) << "\n" << to_ini(c.features) << "\n" << to_ini(c.train) << "\n"
    << "[paths]\n"
    << "manifest = " << c.paths.manifest << "\n"
    << "checkpoint_dir = " << c.paths.checkpoint_dir << "\n"
    << "output = " << c.paths.output << "\n";
  return o.str();
}

}  // namespace rsknet
