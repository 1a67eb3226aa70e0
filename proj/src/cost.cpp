// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/cost.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "stpt/error.hpp"

namespace stpt {

namespace {

double dbl(std::size_t x) { return static_cast<double>(x); }

// Sum over windows along one axis of (real queries x reduced kv positions).
double axis_pairs(std::size_t n, std::size_t window, std::size_t ratio) {
  const std::size_t e = std::min(window, n);
  const std::size_t reduced = (n + ratio - 1) / ratio;
  const std::size_t count = (n + e - 1) / e;
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t queries = std::min(e, n - i * e);
    sum += dbl(queries) * dbl(kv_range(i, e, ratio, reduced).size());
  }
  return sum;
}

}  // namespace

double attention_pairs(AttentionKind kind, Extent3 dims, Extent3 window, Extent3 reduction) {
  if (kind == AttentionKind::global) return dbl(dims.volume()) * dbl(reduced_extent(dims, reduction).volume());
  return axis_pairs(dims.t, window.t, reduction.t) * axis_pairs(dims.h, window.h, reduction.h) *
         axis_pairs(dims.w, window.w, reduction.w);
}

AttentionCost attention_cost(AttentionKind kind, Extent3 dims, Extent3 window, std::size_t d, Extent3 reduction,
                             std::size_t heads, double mac) {
  const double n = dbl(dims.volume());
  const double dd = dbl(d);
  const double pairs = attention_pairs(kind, dims, window, reduction);
  AttentionCost c;
  c.qkv = mac * 3.0 * n * dd * dd;
  c.reduction = mac * 2.0 * dbl(reduced_extent(dims, reduction).volume()) * dd * 27.0;
  c.scores = mac * 2.0 * pairs * dd;
  c.softmax = kPointwiseFlops * dbl(heads) * pairs;
  c.proj = mac * n * dd * dd;
  return c;
}

double CostReport::total() const {
  double s = 0.0;
  for (const auto& e : entries) s += e.flops;
  return s;
}

double CostReport::group_total(const std::string& group) const {
  double s = 0.0;
  for (const auto& e : entries) {
    if (e.group == group) s += e.flops;
  }
  return s;
}

double CostReport::backbone_total() const {
  double s = 0.0;
  for (const auto& e : entries) {
    if (e.group != "head") s += e.flops;
  }
  return s;
}

std::vector<std::string> CostReport::groups() const {
  std::vector<std::string> g;
  for (const auto& e : entries) {
    if (std::find(g.begin(), g.end(), e.group) == g.end()) g.push_back(e.group);
  }
  return g;
}

std::string CostReport::to_text() const {
  std::string out = fmt::format("{:<8} {:<28} {:>12} {:>12}\n", "group", "entry", "GFLOPs", "params(M)");
  for (const auto& g : groups()) {
    double params = 0.0;
    for (const auto& e : entries) {
      if (e.group != g) continue;
      params += e.params;
      out += fmt::format("{:<8} {:<28} {:>12.4f} {:>12.4f}\n", e.group, e.name, e.flops / 1e9, e.params / 1e6);
    }
    out += fmt::format("{:<8} {:<28} {:>12.4f} {:>12.4f}\n", g, "subtotal", group_total(g) / 1e9, params / 1e6);
  }
  double params = 0.0;
  for (const auto& e : entries) params += e.params;
  out += fmt::format("{:<8} {:<28} {:>12.4f}\n", "total", "backbone", backbone_total() / 1e9);
  out += fmt::format("{:<8} {:<28} {:>12.4f}\n", "total", "head", group_total("head") / 1e9);
  out += fmt::format("{:<8} {:<28} {:>12.4f} {:>12.4f}\n", "total", "model", total() / 1e9, params / 1e6);
  out += fmt::format("convention: {} FLOPs per multiply-accumulate\n", mac_flops);
  return out;
}

std::string CostReport::to_csv() const {
  std::string out = "group,name,flops,params\n";
  for (const auto& e : entries) out += fmt::format("{},{},{:.17g},{:.17g}\n", e.group, e.name, e.flops, e.params);
  return out;
}

namespace {

double conv_flops(double mac, double out_positions, std::size_t in, std::size_t out, std::size_t groups,
                  Extent3 kernel) {
  return mac * out_positions * dbl(in / groups) * dbl(kernel.volume()) * dbl(out);
}

double conv_params(std::size_t in, std::size_t out, std::size_t groups, Extent3 kernel) {
  return dbl(in / groups) * dbl(kernel.volume()) * dbl(out) + dbl(out);
}

double linear_params(std::size_t in, std::size_t out) { return dbl(in) * dbl(out) + dbl(out); }

void add_head(CostReport& r, const ModelConfig& cfg, const HeadConfig& head, double mac) {
  head.validate();
  if (cfg.stages.size() < 2) throw ConfigError("the detection head needs at least two backbone stages");
  const auto dims = cfg.stage_dims();
  const ClipDims a = dims[dims.size() - 2], b = dims.back();
  const std::size_t c = head.channels, k = head.tower_kernel, classes = head.num_classes;
  const auto push = [&](std::string name, double flops, double params) {
    r.entries.push_back({"head", std::move(name), flops, params});
  };
  push("pyramid.collapse_a", mac * dbl(a.t) * dbl(a.c * a.h * a.w) * dbl(c) + kPointwiseFlops * dbl(a.t * c),
       conv_params(a.c, c, 1, {1, a.h, a.w}));
  push("pyramid.collapse_b", mac * dbl(b.t) * dbl(b.c * b.h * b.w) * dbl(c) + kPointwiseFlops * dbl(b.t * c),
       conv_params(b.c, c, 1, {1, b.h, b.w}));
  std::vector<std::size_t> lengths = {a.t, b.t};
  for (std::size_t m = 2; m < head.levels; ++m) {
    const std::size_t len = (lengths.back() + 1) / 2;
    lengths.push_back(len);
    push(fmt::format("pyramid.down{}", m), conv_flops(mac, dbl(len), c, c, 1, {3, 1, 1}) + kPointwiseFlops * dbl(len * c),
         conv_params(c, c, 1, {3, 1, 1}));
  }
  double anchors = 0.0;
  for (const std::size_t l : lengths) anchors += dbl(l);
  const double per_layer = conv_params(c, c, 1, {k, 1, 1});
  const double towers = head.share_tower ? 1.0 : dbl(head.levels);
  push("tower.layers",
       2.0 * dbl(head.tower_layers) * (conv_flops(mac, anchors, c, c, 1, {k, 1, 1}) + kPointwiseFlops * anchors * dbl(c)),
       towers * 2.0 * dbl(head.tower_layers) * per_layer);
  push("tower.cls_out", conv_flops(mac, anchors, c, classes, 1, {k, 1, 1}), towers * conv_params(c, classes, 1, {k, 1, 1}));
  push("tower.loc_out", conv_flops(mac, anchors, c, 2, 1, {k, 1, 1}) + kPointwiseFlops * anchors * 2.0,
       towers * conv_params(c, 2, 1, {k, 1, 1}));
  push("refine.sample", 3.0 * anchors * 6.0 * dbl(c), 0.0);
  push("refine.hidden", mac * anchors * 6.0 * dbl(c) * dbl(c) + kPointwiseFlops * anchors * dbl(c),
       linear_params(6 * c, c));
  push("refine.out", mac * anchors * dbl(c) * dbl(3 + classes) + kPointwiseFlops * anchors,
       linear_params(c, 3 + classes));
}

}  // namespace

CostReport model_cost(const ModelConfig& cfg, const HeadConfig& head, bool include_head, double mac) {
  cfg.validate();
  if (!(mac > 0.0)) throw ConfigError("FLOPs per multiply-accumulate must be > 0");
  CostReport r;
  r.mac_flops = mac;
  const auto dims = cfg.stage_dims();
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageSpec& st = cfg.stages[s];
    const std::string group = fmt::format("stage{}", s + 1);
    const Extent3 sp = dims[s].spatial();
    const double n = dbl(sp.volume());
    const std::size_t in = cfg.stage_in_channels(s), c = st.channels;
    const auto push = [&](std::string name, double flops, double params) {
      r.entries.push_back({group, std::move(name), flops, params});
    };
    push("patch_embed", conv_flops(mac, n, in, in, in, st.patch), conv_params(in, in, in, st.patch));
    if (in != c) push("patch_embed.pointwise", conv_flops(mac, n, in, c, 1, {1, 1, 1}), conv_params(in, c, 1, {1, 1, 1}));
    const auto hidden = static_cast<std::size_t>(std::llround(st.mlp_ratio * dbl(c)));
    const std::size_t heads = cfg.heads(s);
    for (std::size_t b = 0; b < st.depth; ++b) {
      const std::string blk = fmt::format("block{:02d}", b);
      if (cfg.cpe_enabled) {
        push(blk + ".cpe", conv_flops(mac, n, c, c, c, {3, 3, 3}) + n * dbl(c), conv_params(c, c, c, {3, 3, 3}));
      }
      const AttentionKind kind = st.kind == BlockKind::local ? AttentionKind::local : AttentionKind::global;
      const Extent3 window = st.kind == BlockKind::local ? st.windows[b] : sp;
      push(blk + ".attention", attention_cost(kind, sp, window, c, st.reduction, heads, mac).total(),
           4.0 * linear_params(c, c) + 2.0 * conv_params(c, c, c, {3, 3, 3}));
      push(blk + ".norm", 2.0 * kPointwiseFlops * n * dbl(c), 4.0 * dbl(c));
      push(blk + ".mlp", mac * n * 2.0 * dbl(c) * dbl(hidden) + kPointwiseFlops * n * dbl(hidden),
           linear_params(c, hidden) + linear_params(hidden, c));
      push(blk + ".residual", 2.0 * n * dbl(c), 0.0);
    }
  }
  if (include_head) add_head(r, cfg, head, mac);
  return r;
}

}  // namespace stpt
