// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

namespace stpt {

/// Time interval in seconds; valid when start < end.
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool valid() const { return start < end; }
};

inline double intersection(const Segment& a, const Segment& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

/// |a ∩ b| / |a ∪ b|; 0 when the union is empty.
inline double tiou(const Segment& a, const Segment& b) {
  const double inter = intersection(a, b);
  const double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace stpt
