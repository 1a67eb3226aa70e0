// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <utility>
#include <vector>

#include "stpt/ops.hpp"
#include "stpt/tensor.hpp"

namespace stpt {

class Rng;

struct HeadConfig {
  std::size_t channels = 256;  // shared pyramid width
  std::size_t levels = 6;
  std::size_t num_classes = 20;
  std::size_t tower_layers = 2;
  std::size_t tower_kernel = 3;
  bool share_tower = true;
  double fps = 10.0;

  void validate() const;
};

/// Temporal sequences are length x channels matrices; 1D convolutions are
/// Conv3D kernels of extent (k, 1, 1).
template <typename T>
Matrix<T> conv1d(const Matrix<T>& x, const Conv3D<T>& w);

template <typename T>
Conv3D<T> conv1d_weights(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

template <typename T>
struct FeaturePyramid {
  std::vector<Matrix<T>> levels;
  std::vector<std::size_t> frame_stride;
  double fps = 10.0;

  std::size_t num_levels() const { return levels.size(); }
  std::size_t anchors() const;
  double clip_seconds() const;
  /// Centre time of position `i` on level `m`.
  double anchor_time(std::size_t m, std::size_t i) const;
};

template <typename T>
struct PyramidWeights {
  Conv3D<T> collapse_a;  // kernel (1, H, W) over the earlier stage
  Conv3D<T> collapse_b;  // kernel (1, H, W) over the later stage
  std::vector<Conv3D<T>> downsample;

  static PyramidWeights init(const HeadConfig& cfg, ClipDims stage_a, ClipDims stage_b, Rng& rng);

  template <typename U>
  PyramidWeights<U> cast() const {
    PyramidWeights<U> w;
    w.collapse_a = collapse_a.template cast<U>();
    w.collapse_b = collapse_b.template cast<U>();
    for (const auto& d : downsample) w.downsample.push_back(d.template cast<U>());
    return w;
  }
};

template <typename T>
struct TowerWeights {
  std::vector<Conv3D<T>> cls_layers;
  std::vector<Conv3D<T>> loc_layers;
  Conv3D<T> cls_out;  // channels -> num_classes
  Conv3D<T> loc_out;  // channels -> 2

  static TowerWeights init(const HeadConfig& cfg, Rng& rng);

  template <typename U>
  TowerWeights<U> cast() const {
    TowerWeights<U> w;
    for (const auto& c : cls_layers) w.cls_layers.push_back(c.template cast<U>());
    for (const auto& c : loc_layers) w.loc_layers.push_back(c.template cast<U>());
    w.cls_out = cls_out.template cast<U>();
    w.loc_out = loc_out.template cast<U>();
    return w;
  }
};

template <typename T>
struct RefineWeights {
  Linear<T> hidden;  // 6 * channels -> channels
  Linear<T> out;     // channels -> 3 + num_classes: [d_start, d_end, quality, classes...]

  static RefineWeights init(const HeadConfig& cfg, Rng& rng);

  template <typename U>
  RefineWeights<U> cast() const {
    return {hidden.template cast<U>(), out.template cast<U>()};
  }
};

template <typename T>
struct HeadWeights {
  PyramidWeights<T> pyramid;
  std::vector<TowerWeights<T>> towers;  // one when shared, else one per level
  RefineWeights<T> refine;

  static HeadWeights init(const HeadConfig& cfg, ClipDims stage_a, ClipDims stage_b, Rng& rng);
  const TowerWeights<T>& tower(std::size_t level) const { return towers.size() == 1 ? towers[0] : towers.at(level); }

  template <typename U>
  HeadWeights<U> cast() const {
    HeadWeights<U> w;
    w.pyramid = pyramid.template cast<U>();
    for (const auto& t : towers) w.towers.push_back(t.template cast<U>());
    w.refine = refine.template cast<U>();
    return w;
  }
};

/// Per-level coarse outputs, row-major per position.
struct CoarseLevel {
  std::size_t length = 0;
  std::vector<double> logits;     // length x num_classes
  std::vector<double> distances;  // length x 2, seconds, > 0
};

struct CoarsePrediction {
  std::size_t num_classes = 0;
  std::vector<CoarseLevel> levels;

  std::size_t anchors() const;
};

struct RefinedLevel {
  std::vector<double> offsets;  // length x 2, in units of half the coarse length
  std::vector<double> logits;   // length x num_classes
  std::vector<double> quality;  // length, in [0, 1]
  std::vector<char> clamped;    // length, 1 when the coarse segment leaves the clip
};

struct RefinedPrediction {
  std::size_t num_classes = 0;
  std::vector<RefinedLevel> levels;
};

struct DetectionCandidate {
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t class_id = 0;
  double score = 0.0;
  std::size_t level = 0;
  std::size_t position = 0;
};

template <typename T>
FeaturePyramid<T> build_pyramid(const Clip<T>& stage_a, const Clip<T>& stage_b, const PyramidWeights<T>& w,
                                const HeadConfig& cfg, std::size_t stride_a, std::size_t stride_b);

template <typename T>
CoarsePrediction predict_coarse(const FeaturePyramid<T>& p, const HeadWeights<T>& w, const HeadConfig& cfg);

/// Absolute provisional boundaries (start, end) of anchor (m, i).
template <typename T>
std::pair<double, double> coarse_segment(const FeaturePyramid<T>& p, const CoarsePrediction& c, std::size_t m,
                                         std::size_t i);

template <typename T>
RefinedPrediction refine(const FeaturePyramid<T>& p, const CoarsePrediction& coarse, const RefineWeights<T>& w,
                         const HeadConfig& cfg);

/// Boundary update from absolute coarse boundaries and dimensionless offsets.
std::pair<double, double> refine_boundaries(double coarse_start, double coarse_end, double d_start, double d_end);
/// Inverse of refine_boundaries for a target segment.
std::pair<double, double> boundary_offsets(double coarse_start, double coarse_end, double target_start,
                                           double target_end);
double combine_scores(double coarse_prob, double refined_prob, double quality);

double sigmoid(double x);
double softplus(double x);

/// One candidate per anchor (argmax class), level-major, position-minor;
/// candidates with start >= end are dropped.
std::vector<DetectionCandidate> decode(const CoarsePrediction& coarse, const RefinedPrediction& refined,
                                       const std::vector<std::size_t>& frame_stride, double fps);

void write_candidates_jsonl(std::ostream& out, const std::vector<DetectionCandidate>& cands);

}  // namespace stpt
