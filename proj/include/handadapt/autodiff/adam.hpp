#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "handadapt/autodiff/tensor.hpp"

namespace handadapt {

struct AdamState {
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One parameter block as seen by the optimizer. The gradient is read from
// tensor->grad(); an absent gradient counts as zero. Frozen blocks are left
// untouched, moments included.
struct OptimParam {
  std::string name;
  Tensor* tensor = nullptr;
  bool frozen = false;
};

/// Bias-corrected Adam. Moments are created on first use and must keep
/// their shapes afterwards.
inline void adam_step(std::span<const OptimParam> params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->numel(), 0.0);
      state.v.emplace_back(p.tensor->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " blocks, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto& p = params[b];
    if (state.m[b].size() != p.tensor->numel()) throw ShapeError("adam_step: moment shape mismatch for " + p.name);
    const auto& g = p.tensor->grad();
    if (g && g->size() != p.tensor->numel()) throw ShapeError("adam_step: gradient shape mismatch for " + p.name);
    if (g) {
      for (double x : *g) {
        if (!std::isfinite(x)) throw NumericalError("adam_step: non-finite gradient in " + p.name);
      }
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto& p = params[b];
    if (p.frozen) continue;
    auto& m = state.m[b];
    auto& v = state.v[b];
    auto w = p.tensor->data();
    const auto& g = p.tensor->grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace handadapt
