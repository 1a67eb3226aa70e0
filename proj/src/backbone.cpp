// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "stpt/rng.hpp"

namespace stpt {

char to_char(BlockKind k) { return k == BlockKind::local ? 'L' : 'G'; }

void StageSpec::validate(std::size_t index) const {
  const std::string where = "stage" + std::to_string(index + 1);
  if (depth == 0) throw ConfigError(where + ".depth must be >= 1");
  if (channels == 0) throw ConfigError(where + ".channels must be >= 1");
  if (!(mlp_ratio > 0.0)) throw ConfigError(where + ".mlp_ratio must be > 0");
  if (patch.volume() == 0 || stride.volume() == 0) throw ConfigError(where + ".patch/stride extents must be >= 1");
  if (reduction.volume() == 0) throw ConfigError(where + ".reduction ratios must be >= 1");
  if (kind == BlockKind::local) {
    if (windows.size() != depth) {
      throw ConfigError(where + ".windows: local stage needs " + std::to_string(depth) + " window specs, got " +
                        std::to_string(windows.size()));
    }
    for (const auto& w : windows) WindowSpec{w}.validate();
  }
}

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.stages = {
      {{3, 7, 7}, {2, 4, 4}, 96, 1, BlockKind::local, {{8, 8, 8}}, {2, 8, 8}, 4.0, 0},
      {{3, 3, 3}, {1, 2, 2}, 192, 2, BlockKind::local, {{8, 6, 6}, {16, 4, 4}}, {2, 2, 2}, 4.0, 0},
      {{3, 3, 3}, {2, 2, 2}, 384, 11, BlockKind::global, {}, {2, 2, 2}, 4.0, 0},
      {{3, 3, 3}, {2, 2, 2}, 768, 2, BlockKind::global, {}, {1, 1, 1}, 4.0, 0},
  };
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c = base();
  c.input = {32, 24, 24, 3};
  c.stages[1].depth = 1;
  c.stages[1].windows = {{8, 6, 6}};
  c.stages[2].depth = 2;
  c.stages[3].depth = 1;
  return c;
}

void ModelConfig::apply_variant(std::string_view variant) {
  if (variant.size() != stages.size()) {
    throw ConfigError("variant '" + std::string(variant) + "' must have one letter per stage (" +
                      std::to_string(stages.size()) + ")");
  }
  const auto dims = stage_dims();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const char ch = variant[s];
    if (ch == 'L') {
      stages[s].kind = BlockKind::local;
      if (stages[s].windows.size() != stages[s].depth) {
        stages[s].windows.assign(stages[s].depth, Extent3{8, dims[s].h, dims[s].w});
      }
    } else if (ch == 'G') {
      stages[s].kind = BlockKind::global;
    } else {
      throw ConfigError("variant letter '" + std::string(1, ch) + "' is not L or G");
    }
  }
}

std::string ModelConfig::variant() const {
  std::string v;
  for (const auto& s : stages) v += to_char(s.kind);
  return v;
}

void ModelConfig::set_temporal_windows(const std::vector<std::size_t>& extents) {
  std::size_t k = 0;
  for (auto& s : stages) {
    if (s.kind != BlockKind::local) continue;
    for (auto& w : s.windows) {
      if (k >= extents.size()) throw ConfigError("too few temporal window extents for the local blocks");
      w.t = extents[k++];
    }
  }
  if (k != extents.size()) throw ConfigError("more temporal window extents than local blocks");
}

void ModelConfig::validate() const {
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  if (input.t == 0 || input.h == 0 || input.w == 0 || input.c == 0) throw ConfigError("input dims must be >= 1");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    stages[s].validate(s);
    if (s > 0 && stages[s].channels < stages[s - 1].channels) {
      throw ConfigError("stage channel sequence must be non-decreasing");
    }
    const std::size_t h = heads(s);
    if (h == 0 || stages[s].channels % h != 0) {
      throw ConfigError("stage" + std::to_string(s + 1) + ".heads must divide the channel count");
    }
  }
  (void)stage_dims();
}

std::size_t ModelConfig::heads(std::size_t stage) const {
  const auto& s = stages.at(stage);
  if (s.heads != 0) return s.heads;
  return std::max<std::size_t>(1, s.channels / 96);
}

std::size_t ModelConfig::stage_in_channels(std::size_t stage) const {
  return stage == 0 ? input.c : stages.at(stage - 1).channels;
}

Extent3 ModelConfig::patch_padding(std::size_t stage) const {
  const auto& p = stages.at(stage).patch;
  return {p.t / 2, p.h / 2, p.w / 2};
}

std::vector<ClipDims> ModelConfig::stage_dims() const {
  std::vector<ClipDims> out;
  Extent3 cur = input.spatial();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const Extent3 pad = patch_padding(s);
    Extent3 next;
    for (std::size_t a = 0; a < 3; ++a) {
      const std::size_t padded = cur[a] + 2 * pad[a];
      if (padded < st.patch[a]) {
        throw ConfigError("stage" + std::to_string(s + 1) + " patch " + to_string(st.patch) +
                          " does not fit input " + to_string(cur));
      }
      next[a] = (padded - st.patch[a]) / st.stride[a] + 1;
    }
    cur = next;
    out.push_back({cur.t, cur.h, cur.w, st.channels});
  }
  return out;
}

std::size_t ModelConfig::temporal_stride(std::size_t stage) const {
  std::size_t s = 1;
  for (std::size_t i = 0; i <= stage; ++i) s *= stages.at(i).stride.t;
  return s;
}

template <typename T>
BackboneWeights<T> BackboneWeights<T>::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneWeights w;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageSpec& spec = cfg.stages[s];
    Rng srng = rng.split("stage" + std::to_string(s + 1));
    StageWeights<T> sw;
    const std::size_t in = cfg.stage_in_channels(s);
    Rng er = srng.split("embed");
    sw.embed = Conv3D<T>::random(in, in, spec.patch, spec.stride, cfg.patch_padding(s), in, er);
    if (in != spec.channels) {
      Rng pr = srng.split("embed_pointwise");
      sw.embed_pointwise = Conv3D<T>::random(in, spec.channels, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1, pr);
    }
    const std::size_t c = spec.channels;
    const auto hidden = static_cast<std::size_t>(std::llround(spec.mlp_ratio * static_cast<double>(c)));
    for (std::size_t b = 0; b < spec.depth; ++b) {
      Rng br = srng.split("block" + std::to_string(b));
      BlockWeights<T> bw;
      Rng cr = br.split("cpe");
      bw.cpe = Conv3D<T>::random(c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, c, cr);
      bw.norm1 = LayerNormWeights<T>(c);
      const auto kind = spec.kind == BlockKind::local ? AttentionKind::local : AttentionKind::global;
      const WindowSpec window{spec.kind == BlockKind::local ? spec.windows[b] : Extent3{1, 1, 1}};
      Rng ar = br.split("attention");
      bw.attention = AttentionParams<T>::random(c, cfg.heads(s), kind, window, spec.reduction, ar);
      bw.norm2 = LayerNormWeights<T>(c);
      Rng f1 = br.split("fc1"), f2 = br.split("fc2");
      bw.fc1 = Linear<T>::random(c, hidden, f1);
      bw.fc2 = Linear<T>::random(hidden, c, f2);
      sw.blocks.push_back(std::move(bw));
    }
    w.stages.push_back(std::move(sw));
  }
  return w;
}

template <typename T>
Clip<T> patch_embed(const Clip<T>& x, const StageWeights<T>& stage) {
  Clip<T> y = conv3d(x, stage.embed);
  if (stage.embed_pointwise) y = conv3d(y, *stage.embed_pointwise);
  return y;
}

template <typename T>
Clip<T> cpe(const Clip<T>& x, const Conv3D<T>& kernel) {
  if (!kernel.depthwise() || kernel.stride != Extent3{1, 1, 1} ||
      kernel.padding != Extent3{kernel.kernel.t / 2, kernel.kernel.h / 2, kernel.kernel.w / 2}) {
    throw ConfigError("cpe kernel must be depth-wise, stride 1, with size-preserving zero padding");
  }
  return conv3d(x, kernel);
}

template <typename T>
Clip<T> stpt_block(const Clip<T>& x_in, const BlockWeights<T>& w, bool cpe_enabled) {
  const Extent3 sp = x_in.dims().spatial();
  Clip<T> x = x_in;
  if (cpe_enabled) {
    const Clip<T> pos = cpe(x, w.cpe);
    add_inplace<T>(x.data(), pos.data());
  }
  {
    const Matrix<T> normed = layer_norm(x.to_matrix(), w.norm1);
    const Clip<T> attn = attention_forward(std::move(Matrix<T>(normed)).to_clip(sp), w.attention);
    add_inplace<T>(x.data(), attn.data());
  }
  const Matrix<T> xm = std::move(x).to_matrix();
  Matrix<T> hidden = linear(layer_norm(xm, w.norm2), w.fc1);
  gelu_inplace<T>(hidden.data());
  Matrix<T> out = linear(hidden, w.fc2);
  if (out.cols() != xm.cols()) throw ShapeError("block MLP must preserve the channel count");
  add_inplace<T>(out.data(), xm.data());
  return std::move(out).to_clip(sp);
}

template <typename T>
BackboneOutput<T> backbone_forward(const Clip<T>& x, const ModelConfig& cfg, const BackboneWeights<T>& w) {
  cfg.validate();
  if (!(x.dims() == cfg.input)) {
    throw ShapeError("backbone input " + to_string(x.dims()) + " does not match configured " + to_string(cfg.input));
  }
  if (w.stages.size() != cfg.stages.size()) throw ShapeError("weights do not match the stage count");
  BackboneOutput<T> out;
  Clip<T> cur = x;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    cur = patch_embed(cur, w.stages[s]);
    for (const auto& block : w.stages[s].blocks) cur = stpt_block(cur, block, cfg.cpe_enabled);
    out.stages.push_back(cur);
  }
  return out;
}

#define STPT_INSTANTIATE_BACKBONE(T)                                                                      \
  template struct BackboneWeights<T>;                                                                     \
  template Clip<T> patch_embed<T>(const Clip<T>&, const StageWeights<T>&);                                \
  template Clip<T> cpe<T>(const Clip<T>&, const Conv3D<T>&);                                              \
  template Clip<T> stpt_block<T>(const Clip<T>&, const BlockWeights<T>&, bool);                           \
  template BackboneOutput<T> backbone_forward<T>(const Clip<T>&, const ModelConfig&, const BackboneWeights<T>&);

STPT_INSTANTIATE_BACKBONE(float)
STPT_INSTANTIATE_BACKBONE(double)

#undef STPT_INSTANTIATE_BACKBONE

}  // namespace stpt
