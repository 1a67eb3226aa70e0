// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stpt/attention.hpp"
#include "stpt/backbone.hpp"
#include "stpt/head.hpp"

namespace stpt {

/// FLOPs charged per multiply-accumulate.
inline constexpr double kMacFlops = 2.0;
/// FLOPs charged per element for softmax, normalisation and activations.
inline constexpr double kPointwiseFlops = 5.0;

struct AttentionCost {
  double qkv = 0.0;
  double reduction = 0.0;
  double scores = 0.0;  // QK^T and attention-weighted sum
  double softmax = 0.0;
  double proj = 0.0;

  double total() const { return qkv + reduction + scores + softmax + proj; }
};

/// Query/key pairs scored by one attention layer, summed over windows.
/// `window` is ignored for Global attention.
double attention_pairs(AttentionKind kind, Extent3 dims, Extent3 window, Extent3 reduction);

AttentionCost attention_cost(AttentionKind kind, Extent3 dims, Extent3 window, std::size_t channels,
                             Extent3 reduction, std::size_t heads, double mac_flops = kMacFlops);

struct CostEntry {
  std::string group;  // "stage1".."stageN" or "head"
  std::string name;
  double flops = 0.0;
  double params = 0.0;
};

struct CostReport {
  std::vector<CostEntry> entries;
  double mac_flops = kMacFlops;

  double total() const;
  double group_total(const std::string& group) const;
  double backbone_total() const;
  std::vector<std::string> groups() const;

  /// Aligned table with per-entry rows, group subtotals and totals, in GFLOPs.
  std::string to_text() const;
  /// `group,name,flops,params` with exact counts.
  std::string to_csv() const;
};

/// Closed-form cost of one forward pass: PatchEmbed, CPE, attention, MLP and
/// residuals per block, plus the pyramid, towers and refinement head when
/// `include_head` is set.
CostReport model_cost(const ModelConfig& cfg, const HeadConfig& head, bool include_head = true,
                      double mac_flops = kMacFlops);

}  // namespace stpt
