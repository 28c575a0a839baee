#pragma once

#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rsknet/backbone.hpp"
#include "rsknet/config.hpp"

namespace rsknet {

struct ParamRow {
  std::string path;
  std::vector<int> shape;
  std::size_t count = 0;
  ParamKind kind = ParamKind::conv;
};

/// Totals under the three counting conventions.
struct ParamTotals {
  std::size_t core = 0;                // conv + attention + linear (incl. head bias)
  std::size_t core_bn = 0;             // + BN affine parameters
  std::size_t core_bn_classifier = 0;  // + AM-Softmax class matrix
};

enum class CountConvention { core, core_bn, core_bn_classifier };

inline const char* to_string(CountConvention c) {
  switch (c) {
    case CountConvention::core: return "core";
    case CountConvention::core_bn: return "core+bn";
    case CountConvention::core_bn_classifier: return "core+bn+classifier";
  }
  return "?";
}

struct ParamReport {
  std::vector<ParamRow> rows;
  ParamTotals totals;

  std::size_t total(CountConvention c) const {
    switch (c) {
      case CountConvention::core: return totals.core;
      case CountConvention::core_bn: return totals.core_bn;
      case CountConvention::core_bn_classifier: return totals.core_bn_classifier;
    }
    return 0;
  }
  std::size_t by_kind(ParamKind k) const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.kind == k ? r.count : 0;
    return n;
  }
  std::size_t by_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.path.rfind(prefix, 0) == 0 ? r.count : 0;
    return n;
  }
};

/// Every learnable tensor of the store, in registration order. BN running
/// statistics are buffers and never counted.
template <typename T>
ParamReport count_params(const ParamStore<T>& store) {
  ParamReport rep;
  for (const auto& e : store) {
    if (!e.learnable()) continue;
    rep.rows.push_back({e.path, e.shape, e.count(), e.kind});
    switch (e.kind) {
      case ParamKind::bn: rep.totals.core_bn += e.count(); break;
      case ParamKind::classifier: rep.totals.core_bn_classifier += e.count(); break;
      default: rep.totals.core += e.count(); break;
    }
  }
  rep.totals.core_bn += rep.totals.core;
  rep.totals.core_bn_classifier += rep.totals.core_bn;
  return rep;
}

/// Parameter report of a freshly built network.
inline ParamReport count_params(const ModelConfig& cfg) {
  return count_params(build_network<float>(cfg, 0).params);
}

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;
  double value() const { return double(num) / double(den); }
  bool operator==(const Rational&) const = default;
};

inline Rational make_rational(std::int64_t num, std::int64_t den) {
  const std::int64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

/// Depthwise-separable over standard parameter ratio for a j x k kernel,
/// i input and o output channels: (j k i + i o) / (j k i o) = 1/o + 1/(j k).
inline Rational dsc_ratio(int j, int k, int i, int o) {
  if (j < 1 || k < 1 || i < 1 || o < 1) throw ShapeError("dsc_ratio: all arguments must be positive");
  const std::int64_t jk = std::int64_t(j) * k;
  return make_rational(jk * i + std::int64_t(i) * o, jk * i * o);
}

/// Weight savings of a rank-p head over a full n x m head.
inline std::int64_t low_rank_savings(std::int64_t m, std::int64_t n, std::int64_t p) {
  return n * m - (n * p + p * m);
}

// ---------------------------------------------------------------------------
// Reference model sizes (millions of parameters) from the published tables.

struct ReferenceModel {
  std::string name;
  ModelConfig config;
  double millions;
};

inline std::vector<ReferenceModel> reference_models() {
  ModelConfig rsk;
  ModelConfig resnet;
  resnet.arch = Arch::resnet34;
  resnet.pooling = PoolingKind::sp;

  auto with_conv = [](ModelConfig c, ConvKind k) {
    c.conv.kind = k;
    return c;
  };
  auto with_rank = [](ModelConfig c, int p) {
    c.head = HeadKind::low_rank;
    c.low_rank = p;
    return c;
  };
  return {
      {"RSKNet-MTSP", rsk, 13.9},
      {"ResNet34-SP", resnet, 6.0},
      {"RSKNet-MTSP (DSC)", with_conv(rsk, ConvKind::depthwise_separable), 4.9},
      {"RSKNet-MTSP (GC, g=4)", with_conv(rsk, ConvKind::grouped), 6.0},
      {"ResNet34-SP (DSC)", with_conv(resnet, ConvKind::depthwise_separable), 1.7},
      {"RSKNet-MTSP low-rank p=100", with_rank(rsk, 100), 12.3},
      {"RSKNet-MTSP low-rank p=150", with_rank(rsk, 150), 12.9},
      {"RSKNet-MTSP low-rank p=200", with_rank(rsk, 200), 13.4},
      {"RSKNet-MTSP-L (DSC + p=150)", with_rank(with_conv(rsk, ConvKind::depthwise_separable), 150), 3.8},
      {"lite RSKNet-MTSP", rsk.lite(), 3.5},
  };
}

inline bool within_band(std::size_t count, double millions, double band = 0.05) {
  const double ref = millions * 1e6;
  return double(count) >= ref * (1.0 - band) && double(count) <= ref * (1.0 + band);
}

// ---------------------------------------------------------------------------
// Report formatting.

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

inline std::string format_millions(std::size_t n) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << double(n) / 1e6 << "M";
  return o.str();
}

inline std::string report_text(const ParamReport& r, bool per_layer = false) {
  std::ostringstream o;
  if (per_layer) {
    std::size_t w = 5;
    for (const auto& row : r.rows) w = std::max(w, row.path.size());
    o << std::left << std::setw(int(w)) << "layer" << "  " << std::setw(18) << "shape" << std::setw(11)
      << "kind" << std::right << std::setw(12) << "count" << "\n";
    for (const auto& row : r.rows)
      o << std::left << std::setw(int(w)) << row.path << "  " << std::setw(18) << shape_string(row.shape)
        << std::setw(11) << to_string(row.kind) << std::right << std::setw(12) << row.count << "\n";
    o << "\n";
  }
  o << std::left << std::setw(22) << "convention" << std::right << std::setw(14) << "params" << std::setw(12)
    << "millions" << "\n";
  for (auto c : {CountConvention::core, CountConvention::core_bn, CountConvention::core_bn_classifier})
    o << std::left << std::setw(22) << to_string(c) << std::right << std::setw(14) << r.total(c)
      << std::setw(12) << format_millions(r.total(c)) << "\n";
  return o.str();
}

inline std::string report_csv(const ParamReport& r) {
  std::ostringstream o;
  o << "path,shape,kind,count\n";
  for (const auto& row : r.rows)
    o << row.path << ',' << shape_string(row.shape) << ',' << to_string(row.kind) << ',' << row.count << "\n";
  for (auto c : {CountConvention::core, CountConvention::core_bn, CountConvention::core_bn_classifier})
    o << "total:" << to_string(c) << ",,," << r.total(c) << "\n";
  return o.str();
}

}  // namespace rsknet
