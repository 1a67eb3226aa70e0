// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stpt/head.hpp"
#include "stpt/segment.hpp"

namespace stpt {

class Rng;

inline constexpr double kProbEps = 1e-7;

struct LossConfig {
  double cls_weight = 1.0;
  double loc_weight = 10.0;
  double quality_weight = 1.0;
  double gamma = 2.0;
  double alpha = 0.25;

  static LossConfig thumos();
  static LossConfig anet();
  static LossConfig profile(std::string_view name);
  void validate() const;
};

/// Scalar loss and its gradient with respect to the differentiated input.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// Sigmoid focal loss over an anchors x classes logit block. `labels[a]` is
/// the positive class of anchor a, or nullopt for a background anchor. The
/// sum over all entries is divided by the anchor count; the gradient is
/// with respect to the logits. Log arguments are floored at kProbEps.
LossValue focal_loss(std::span<const double> logits, std::span<const std::optional<std::size_t>> labels,
                     std::size_t num_classes, double gamma, double alpha);

struct TiouLoss {
  LossValue loss;  // gradient over [start_0, end_0, start_1, end_1, ...]
  std::size_t skipped = 0;
};

/// Mean of 1 - tIoU over anchors whose target is non-degenerate. At kinks the
/// derivative is the one-sided derivative from the right.
TiouLoss tiou_loss(std::span<const double> pred, std::span<const Segment> targets);

/// Mean absolute error over all offset values; gradient sign / count.
LossValue l1_offset_loss(std::span<const double> pred, std::span<const double> target);

/// Binary cross-entropy of quality predictions against detached tIoU
/// targets, averaged over anchors; gradient with respect to quality.
LossValue quality_loss(std::span<const double> quality, std::span<const Segment> pred,
                       std::span<const Segment> target);

struct LossTerms {
  double focal_coarse = 0.0;
  double focal_refined = 0.0;
  double tiou_coarse = 0.0;
  double l1_refined = 0.0;
  double quality = 0.0;
};

struct LossReport {
  LossTerms terms;
  double cls = 0.0;
  double loc = 0.0;
  double quality = 0.0;
  double total = 0.0;
  std::size_t positives = 0;
  std::size_t skipped = 0;

  /// One `name=value` line per term.
  std::string to_text() const;
};

LossReport total_loss(const LossTerms& terms, const LossConfig& cfg);

struct GtSegment {
  Segment segment;
  std::size_t class_id = 0;
};

struct AnchorTarget {
  bool positive = false;
  std::size_t gt_index = 0;
  std::size_t class_id = 0;
  Segment segment;
  double offset_start = 0.0;
  double offset_end = 0.0;
};

/// Level-major, position-minor; one entry per anchor.
struct MatchedTargets {
  std::vector<AnchorTarget> anchors;
  std::size_t positives = 0;
};

/// Anchor centre time for position `i` at `frame_stride` frames per position.
double anchor_center(std::size_t i, std::size_t frame_stride, double fps);

/// An anchor is positive for the instance that contains its centre and has
/// the highest tIoU with the anchor's span of +-2 positions; ties go to the
/// earliest instance. Refinement offsets invert the boundary update against
/// the coarse segment.
MatchedTargets match_anchors(const CoarsePrediction& coarse, const std::vector<std::size_t>& frame_stride,
                             double fps, std::span<const GtSegment> gts);

LossReport clip_loss(const CoarsePrediction& coarse, const RefinedPrediction& refined,
                     const std::vector<std::size_t>& frame_stride, double fps, const MatchedTargets& targets,
                     const LossConfig& cfg);

/// A differentiable loss instance at one point.
struct GradProblem {
  std::vector<double> point;
  std::function<LossValue(std::span<const double>)> fn;
};

/// Generator of random problems for one loss term, sampled away from kinks
/// and clamps.
struct GradTerm {
  std::string name;
  std::function<GradProblem(Rng&)> make;
};

std::vector<GradTerm> loss_grad_terms(const LossConfig& cfg = LossConfig::thumos());

/// Wraps a term so its analytic gradient is negated.
GradTerm with_sign_error(GradTerm term);

struct GradTermResult {
  std::string name;
  std::size_t points = 0;
  double max_rel_error = 0.0;
  bool finite = true;
  bool passed = false;
};

std::vector<GradTermResult> run_gradcheck(const std::vector<GradTerm>& terms, std::size_t points, Rng& rng,
                                          double tolerance = 1e-4, double h = 1e-5);

}  // namespace stpt
