// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "stpt/ops.hpp"
#include "stpt/tensor.hpp"

namespace stpt {

class Rng;

/// Window extents in tokens along (T, H, W).
struct WindowSpec {
  Extent3 extent{8, 8, 8};

  void validate() const;
};

/// Per-axis window extents clamped to the feature-map extents.
Extent3 effective_window(const WindowSpec& w, Extent3 map);

/// Geometry of a windowed partition: which map it came from, the window
/// extents actually used, and the number of windows per axis.
struct WindowGrid {
  ClipDims original;
  Extent3 window;
  Extent3 counts;

  std::size_t num_windows() const { return counts.volume(); }
  std::size_t tokens_per_window() const { return window.volume(); }
  Extent3 padded() const { return {counts.t * window.t, counts.h * window.h, counts.w * window.w}; }
};

WindowGrid make_window_grid(ClipDims dims, const WindowSpec& w);

/// num_windows x tokens_per_window x channels, windows in T-major, then H,
/// then W order; tokens inside a window in the same order.
template <typename T>
struct WindowBatch {
  WindowGrid grid;
  std::vector<T> data;

  std::size_t channels() const { return grid.original.c; }
  std::span<T> window(std::size_t i) {
    const std::size_t n = grid.tokens_per_window() * channels();
    return {data.data() + i * n, n};
  }
  std::span<const T> window(std::size_t i) const {
    const std::size_t n = grid.tokens_per_window() * channels();
    return {data.data() + i * n, n};
  }
};

template <typename T>
WindowBatch<T> partition_windows(const Clip<T>& x, const WindowSpec& w);

/// Inverse of partition_windows; pad tokens are dropped.
template <typename T>
Clip<T> merge_windows(const WindowBatch<T>& windows, ClipDims original, const WindowSpec& w);

/// Half-open index range [begin, end).
struct AxisRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Reduced positions j whose stride cell [j*ratio, (j+1)*ratio) overlaps
/// window [i*extent, (i+1)*extent), clipped to the reduced length. Never
/// empty for a window that starts inside the map.
AxisRange kv_range(std::size_t window_index, std::size_t extent, std::size_t ratio, std::size_t reduced_len);

/// ceil(extent / ratio) per axis.
Extent3 reduced_extent(Extent3 map, Extent3 ratios);

enum class KvRole { key, value };

/// Two independent depth-wise 3x3x3 reductions, stride = ratios, padding 1.
template <typename T>
struct ReductionSpec {
  Extent3 ratios{1, 1, 1};
  Conv3D<T> key;
  Conv3D<T> value;

  static ReductionSpec random(std::size_t channels, Extent3 ratios, Rng& rng);
  static ReductionSpec identity(std::size_t channels, Extent3 ratios);
  static Conv3D<T> make_operator(std::size_t channels, Extent3 ratios);

  void validate(std::size_t channels) const;

  template <typename U>
  ReductionSpec<U> cast() const {
    return {ratios, key.template cast<U>(), value.template cast<U>()};
  }
};

template <typename T>
Clip<T> reduce_kv(const Clip<T>& x, const ReductionSpec<T>& r, KvRole role);

enum class AttentionKind { local, global };

template <typename T>
struct AttentionParams {
  std::size_t channels = 0;
  std::size_t heads = 1;
  AttentionKind kind = AttentionKind::global;
  WindowSpec window;
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> proj;
  ReductionSpec<T> reduction;

  static AttentionParams random(std::size_t channels, std::size_t heads, AttentionKind kind, WindowSpec window,
                                Extent3 ratios, Rng& rng);

  std::size_t head_dim() const { return channels / heads; }
  double scale() const;
  void validate() const;

  template <typename U>
  AttentionParams<U> cast() const {
    AttentionParams<U> out;
    out.channels = channels;
    out.heads = heads;
    out.kind = kind;
    out.window = window;
    out.query = query.template cast<U>();
    out.key = key.template cast<U>();
    out.value = value.template cast<U>();
    out.proj = proj.template cast<U>();
    out.reduction = reduction.template cast<U>();
    return out;
  }
};

/// Optional probe filled by the attention kernels.
struct AttentionStats {
  double max_row_sum_error = 0.0;
  std::size_t rows = 0;
};

/// Local attention: queries of each window attend to the reduced keys and
/// values belonging to that window.
template <typename T>
Clip<T> lsta_forward(const Clip<T>& x, const AttentionParams<T>& p, AttentionStats* stats = nullptr);

/// Global attention: every query attends to the whole reduced key/value map.
template <typename T>
Clip<T> gsta_forward(const Clip<T>& x, const AttentionParams<T>& p, AttentionStats* stats = nullptr);

template <typename T>
Clip<T> attention_forward(const Clip<T>& x, const AttentionParams<T>& p, AttentionStats* stats = nullptr) {
  return p.kind == AttentionKind::local ? lsta_forward(x, p, stats) : gsta_forward(x, p, stats);
}

}  // namespace stpt
