// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/tensor.hpp"

namespace stpt {

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "float32") return DType::f32;
  if (s == "f64" || s == "float64") return DType::f64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

std::string to_string(const Extent3& e) {
  return std::to_string(e.t) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}

std::string to_string(const ClipDims& d) {
  return "(" + std::to_string(d.t) + "," + std::to_string(d.h) + "," + std::to_string(d.w) + "," +
         std::to_string(d.c) + ")";
}

}  // namespace stpt
