#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsknet/params.hpp"
#include "rsknet/tensor.hpp"

namespace rsknet {

/// A named block of differentiable variables (an input tensor or a parameter).
struct GradVariable {
  std::string name;
  std::span<double> values;
};

/// Scalar objective plus its analytic gradient, both evaluated at the current
/// contents of `variables`.
struct GradProblem {
  std::vector<GradVariable> variables;
  std::function<double()> loss;
  std::function<std::vector<std::vector<double>>()> gradient;  // aligned with variables
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor: entries whose true gradient is below this are compared
  // on an absolute scale instead of a relative one.
  double floor = 1e-6;
  // Coordinates probed per variable; 0 probes every coordinate.
  std::size_t max_per_variable = 0;
  // With max_per_variable set: probe the largest-|gradient| coordinates
  // instead of a random subset.
  bool largest_first = false;
  std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of an analytic gradient.
inline GradCheckResult grad_check(GradProblem& problem, const GradCheckOptions& opt = {}) {
  const auto analytic = problem.gradient();
  if (analytic.size() != problem.variables.size())
    throw ShapeError("grad_check: gradient does not align with variables");
  Rng rng(opt.seed);
  GradCheckResult res;
  for (std::size_t v = 0; v < problem.variables.size(); ++v) {
    auto& var = problem.variables[v];
    if (analytic[v].size() != var.values.size())
      throw ShapeError("grad_check: gradient size mismatch for " + var.name);
    for (double g : analytic[v])
      if (!std::isfinite(g)) throw NumericalError("grad_check: non-finite analytic gradient in " + var.name);

    std::vector<std::size_t> idx(var.values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_per_variable && idx.size() > opt.max_per_variable) {
      if (opt.largest_first)
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
          return std::abs(analytic[v][a]) > std::abs(analytic[v][b]);
        });
      else
        rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_per_variable);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double keep = var.values[i];
      var.values[i] = keep + opt.step;
      const double up = problem.loss();
      var.values[i] = keep - opt.step;
      const double down = problem.loss();
      var.values[i] = keep;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("grad_check: non-finite loss while probing " + var.name);
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(analytic[v][i], numeric, opt.floor);
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        if (err >= res.max_rel_error) {
          res.max_rel_error = err;
          res.worst = var.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return res;
}

/// Fixed random projection used to turn a tensor-valued op into a scalar
/// objective: L = sum_i r_i y_i.
inline std::vector<double> projection_weights(std::size_t n, Rng& rng) {
  std::vector<double> r(n);
  for (double& x : r) x = rng.uniform(-1.0, 1.0);
  return r;
}

inline double project(const Batch<double>& ys, const std::vector<std::vector<double>>& r) {
  double acc = 0.0;
  for (std::size_t n = 0; n < ys.size(); ++n)
    for (std::size_t i = 0; i < ys[n].data.size(); ++i) acc += r[n][i] * ys[n].data[i];
  return acc;
}

/// Upstream gradient of `project` with respect to ys.
inline Batch<double> projection_grad(const Batch<double>& ys, const std::vector<std::vector<double>>& r) {
  Batch<double> g;
  for (std::size_t n = 0; n < ys.size(); ++n) {
    Tensor3<double> t(ys[n].t, ys[n].f, ys[n].c);
    std::copy(r[n].begin(), r[n].end(), t.data.begin());
    g.push_back(std::move(t));
  }
  return g;
}

inline std::vector<std::vector<double>> projection_for(const Batch<double>& ys, Rng& rng) {
  std::vector<std::vector<double>> r;
  for (const auto& y : ys) r.push_back(projection_weights(y.data.size(), rng));
  return r;
}

/// Grad problem for a batch-to-batch layer: variables are every trainable
/// entry of `store` (buffers excluded) plus every input tensor.
/// `fwd(ctx, xs, cache)` and `bwd(ctx, cache, gy, grads)` follow the layer API.
template <typename Layer>
GradProblem layer_problem(const Layer& layer, ParamStore<double>& store, Batch<double>& xs,
                          Mode mode, std::uint64_t seed) {
  using Cache = typename Layer::Cache;
  Rng rng(seed);
  const Ctx<double> ctx{&store, nullptr, mode};
  const auto r = projection_for(layer.forward(ctx, xs, nullptr), rng);

  GradProblem p;
  std::vector<int> ids;
  for (int id = 0; id < static_cast<int>(store.size()); ++id) {
    if (store.entry(id).kind == ParamKind::buffer) continue;
    ids.push_back(id);
    p.variables.push_back({store.entry(id).path, store.value(id)});
  }
  for (std::size_t n = 0; n < xs.size(); ++n)
    p.variables.push_back({"input" + std::to_string(n), std::span<double>(xs[n].data)});

  p.loss = [&layer, &xs, ctx, r] { return project(layer.forward(ctx, xs, nullptr), r); };
  p.gradient = [&layer, &store, &xs, ctx, r, ids] {
    Cache cache;
    const Batch<double> y = layer.forward(ctx, xs, &cache);
    GradStore<double> grads(store);
    const Batch<double> gx = layer.backward(ctx, cache, projection_grad(y, r), grads);
    std::vector<std::vector<double>> out;
    for (int id : ids) {
      auto g = grads[id];
      out.emplace_back(g.begin(), g.end());
    }
    for (const auto& t : gx) out.push_back(t.data);
    return out;
  };
  return p;
}

}  // namespace rsknet
