// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stpt/attention.hpp"
#include "stpt/ops.hpp"
#include "stpt/tensor.hpp"

namespace stpt {

class Rng;

enum class BlockKind { local, global };

char to_char(BlockKind k);

struct StageSpec {
  Extent3 patch{3, 3, 3};
  Extent3 stride{1, 1, 1};
  std::size_t channels = 96;
  std::size_t depth = 1;
  BlockKind kind = BlockKind::global;
  std::vector<Extent3> windows;  // one per block, Local stages only
  Extent3 reduction{1, 1, 1};
  double mlp_ratio = 4.0;
  std::size_t heads = 0;  // 0: channels / 96

  void validate(std::size_t index) const;
};

struct ModelConfig {
  std::vector<StageSpec> stages;
  ClipDims input{256, 96, 96, 3};
  bool cpe_enabled = true;
  DType dtype = DType::f32;

  /// The four-stage architecture with 96/192/384/768 channels and depths 1/2/11/2.
  static ModelConfig base();
  /// Desk-scale variant: 32x24x24 input, depths 1/1/2/1.
  static ModelConfig toy();

  /// Sets stage block kinds from a string such as "LLGG". Stages turned
  /// Local get windows of 8 x H_s x W_s unless they already carry windows.
  void apply_variant(std::string_view variant);
  std::string variant() const;
  /// Overrides the temporal extent of every Local block window, in order.
  void set_temporal_windows(const std::vector<std::size_t>& extents);

  void validate() const;

  std::size_t heads(std::size_t stage) const;
  std::size_t stage_in_channels(std::size_t stage) const;
  Extent3 patch_padding(std::size_t stage) const;
  /// Spatial extents of every stage output.
  std::vector<ClipDims> stage_dims() const;
  /// Frames per temporal position of a stage output.
  std::size_t temporal_stride(std::size_t stage) const;
};

template <typename T>
struct BlockWeights {
  Conv3D<T> cpe;
  LayerNormWeights<T> norm1;
  AttentionParams<T> attention;
  LayerNormWeights<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;

  template <typename U>
  BlockWeights<U> cast() const {
    BlockWeights<U> b;
    b.cpe = cpe.template cast<U>();
    b.norm1 = norm1.template cast<U>();
    b.attention = attention.template cast<U>();
    b.norm2 = norm2.template cast<U>();
    b.fc1 = fc1.template cast<U>();
    b.fc2 = fc2.template cast<U>();
    return b;
  }
};

template <typename T>
struct StageWeights {
  Conv3D<T> embed;                          // depth-wise patch kernel at the stage stride
  std::optional<Conv3D<T>> embed_pointwise;  // 1x1x1 projection to the stage width when the input width differs
  std::vector<BlockWeights<T>> blocks;

  template <typename U>
  StageWeights<U> cast() const {
    StageWeights<U> s;
    s.embed = embed.template cast<U>();
    if (embed_pointwise) s.embed_pointwise = embed_pointwise->template cast<U>();
    for (const auto& b : blocks) s.blocks.push_back(b.template cast<U>());
    return s;
  }
};

template <typename T>
struct BackboneWeights {
  std::vector<StageWeights<T>> stages;

  static BackboneWeights init(const ModelConfig& cfg, Rng& rng);

  template <typename U>
  BackboneWeights<U> cast() const {
    BackboneWeights<U> w;
    for (const auto& s : stages) w.stages.push_back(s.template cast<U>());
    return w;
  }
};

template <typename T>
struct BackboneOutput {
  std::vector<Clip<T>> stages;
};

template <typename T>
Clip<T> patch_embed(const Clip<T>& x, const StageWeights<T>& stage);

/// Depth-wise positional convolution; the block adds the result residually.
template <typename T>
Clip<T> cpe(const Clip<T>& x, const Conv3D<T>& kernel);

template <typename T>
Clip<T> stpt_block(const Clip<T>& x, const BlockWeights<T>& w, bool cpe_enabled);

template <typename T>
BackboneOutput<T> backbone_forward(const Clip<T>& x, const ModelConfig& cfg, const BackboneWeights<T>& w);

}  // namespace stpt
