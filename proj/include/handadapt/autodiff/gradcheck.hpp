#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "handadapt/autodiff/errors.hpp"

namespace handadapt {

/// Central-difference gradient estimate (f(p+h e_i) - f(p-h e_i)) / 2h.
/// Used as the independent oracle for Graph::backward.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> params, double step) {
  if (!(step > 0)) throw ConfigError("finite_diff_grad: step must be positive");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double fp = f(p);
    p[i] = orig - step;
    const double fm = f(p);
    p[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero pairs from
// reporting huge relative errors.
inline double relative_error(double a, double b, double floor = 1e-8) {
  const double den = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / den;
}

}  // namespace handadapt
