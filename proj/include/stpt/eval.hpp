// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stpt/head.hpp"
#include "stpt/segment.hpp"

namespace stpt {

class Rng;

enum class SoftNmsMode { linear, gaussian };

struct EvalConfig {
  std::vector<double> thresholds;
  std::vector<double> display;  // subset of thresholds shown in the text table
  double nms_threshold = 0.5;
  SoftNmsMode nms_mode = SoftNmsMode::linear;
  double nms_sigma = 0.5;
  std::size_t top_k = 200;

  static EvalConfig thumos();
  static EvalConfig anet();
  static EvalConfig profile(std::string_view name);
  void validate() const;
};

struct GroundTruthInstance {
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t class_id = 0;

  Segment segment() const { return {t_start, t_end}; }
};

struct Prediction {
  std::string video_id;
  DetectionCandidate det;

  Segment segment() const { return {det.t_start, det.t_end}; }
};

/// Per-class score decay over candidates of one video. Returns every
/// candidate with its decayed score, sorted by score descending, then
/// earlier start, then input order.
std::vector<DetectionCandidate> soft_nms(const std::vector<DetectionCandidate>& cands, const EvalConfig& cfg);

/// Per-video soft-NMS followed by a per-video top-k cut; video order follows
/// first appearance.
std::vector<Prediction> postprocess(const std::vector<Prediction>& preds, const EvalConfig& cfg);

/// All-point interpolated AP of one class. Predictions are ranked internally
/// (score desc, start asc, input order); each ground truth matches at most
/// once, to the highest-tIoU unmatched instance of the same video.
double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruthInstance>& gts,
                         double threshold);

struct MapTable {
  std::vector<double> thresholds;
  std::vector<double> display;
  std::vector<double> map;                   // per threshold
  std::vector<std::size_t> classes;          // evaluated classes, ascending
  std::vector<std::vector<double>> class_ap;  // [threshold][class]
  std::vector<std::size_t> classes_without_gt;
  double average = 0.0;

  std::string to_text() const;
  std::string to_csv() const;
};

/// Applies the top-k cut only; callers run postprocess() beforehand when
/// suppression is wanted.
MapTable evaluate(const std::vector<Prediction>& preds, const std::vector<GroundTruthInstance>& gts,
                  const EvalConfig& cfg);

struct SynthClip {
  std::string video_id;
  double duration = 0.0;
};

struct SynthDataset {
  std::size_t num_classes = 0;
  std::vector<SynthClip> clips;
  std::vector<GroundTruthInstance> gts;
};

/// Non-overlapping instances, one per equal slot of each clip.
SynthDataset synth_dataset(Rng& rng, std::size_t n_videos, std::size_t n_classes, std::size_t instances_per_video,
                           double duration = 25.6);

struct OracleNoise {
  double jitter = 0.0;       // boundary noise std as a fraction of instance length
  double score_noise = 0.0;  // scores drawn from [1 - score_noise, 1]
};

/// One prediction per instance with noisy boundaries and scores.
std::vector<Prediction> oracle_predictions(const SynthDataset& data, const OracleNoise& noise, Rng& rng);

struct OracleHeadOutputs {
  CoarsePrediction coarse;
  RefinedPrediction refined;
};

/// Head outputs for one clip whose decode reproduces the (jittered)
/// instances: each instance owns the finest-level anchor nearest its
/// midpoint, with a deliberately loose coarse segment corrected by the
/// refinement offsets. Other anchors carry near-zero scores.
OracleHeadOutputs oracle_head_outputs(const std::vector<GroundTruthInstance>& clip_gts,
                                      const std::vector<std::size_t>& level_lengths,
                                      const std::vector<std::size_t>& frame_stride, double fps,
                                      std::size_t num_classes, const OracleNoise& noise, Rng& rng);

void write_gts_jsonl(std::ostream& out, const std::vector<GroundTruthInstance>& gts);
void write_predictions_jsonl(std::ostream& out, const std::vector<Prediction>& preds);
/// Throws InputError naming the 1-based record number on schema violations.
std::vector<GroundTruthInstance> read_gts_jsonl(std::istream& in);
std::vector<Prediction> read_predictions_jsonl(std::istream& in);

}  // namespace stpt
