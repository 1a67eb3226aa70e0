// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

namespace stpt {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for each coordinate.
/// Throws NumericError naming the coordinate if f is non-finite.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> point, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor), Euclidean norms.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace stpt
