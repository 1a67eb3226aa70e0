// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stpt/config.hpp"

namespace stpt {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitInput = 3, kExitNumeric = 4 };

/// Pyramid level lengths implied by a configuration, without running it.
std::vector<std::size_t> pyramid_lengths(const RunConfig& cfg);

void cmd_describe(const RunConfig& cfg, std::ostream& out);

struct FlopsOptions {
  bool include_head = true;
  double mac_flops = 2.0;
  std::string csv_path;  // empty: no CSV file
};
void cmd_flops(const RunConfig& cfg, const FlopsOptions& opt, std::ostream& out);

struct ForwardSummary {
  std::vector<ClipDims> stages;
  std::size_t detections = 0;
  std::vector<std::string> files;  // relative to the output directory
};
/// Writes stageN.stpt, detections.jsonl and manifest.json into cfg.output_dir.
ForwardSummary cmd_forward(const RunConfig& cfg, std::ostream& out);

struct GradcheckOptions {
  std::string inject_sign_error;  // term name, empty: none
};
/// Returns kExitOk iff every term passes.
int cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt, std::ostream& out);

struct EvalOptions {
  std::string preds_path;
  std::string gts_path;
  bool soft_nms = false;
  std::string csv_path;
};
MapTable cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out);

struct SynthOptions {
  std::size_t videos = 4;
  std::size_t instances = 5;
  double jitter = 0.0;
  double score_noise = 0.0;
  bool through_head = false;  // predictions via head outputs, decode and soft-NMS
};
/// Writes gts.jsonl and preds.jsonl into cfg.output_dir.
void cmd_synth(const RunConfig& cfg, const SynthOptions& opt, std::ostream& out);

/// Full command-line entry point; maps errors to ExitCode values.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stpt
