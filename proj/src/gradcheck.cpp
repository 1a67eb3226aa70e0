// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stpt/error.hpp"

namespace stpt {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> point, double h) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be > 0");
  std::vector<double> p(point.begin(), point.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = f(p);
    p[i] = orig - h;
    const double down = f(p);
    p[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value while differentiating coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace stpt
