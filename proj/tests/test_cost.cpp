// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "stpt/backbone.hpp"
#include "stpt/cost.hpp"
#include "stpt/error.hpp"

using namespace stpt;

namespace {

// Counts scored (query, reduced key) pairs one by one.
double pairs_oracle(AttentionKind kind, Extent3 d, Extent3 win, Extent3 r) {
  const Extent3 red{(d.t + r.t - 1) / r.t, (d.h + r.h - 1) / r.h, (d.w + r.w - 1) / r.w};
  const Extent3 e{std::min(win.t, d.t), std::min(win.h, d.h), std::min(win.w, d.w)};
  double n = 0.0;
  for (std::size_t t = 0; t < d.t; ++t)
    for (std::size_t h = 0; h < d.h; ++h)
      for (std::size_t w = 0; w < d.w; ++w)
        for (std::size_t a = 0; a < red.t; ++a)
          for (std::size_t b = 0; b < red.h; ++b)
            for (std::size_t c = 0; c < red.w; ++c) {
              if (kind == AttentionKind::global || (oracle::cell_in_window(a, t / e.t, e.t, r.t) &&
                                                    oracle::cell_in_window(b, h / e.h, e.h, r.h) &&
                                                    oracle::cell_in_window(c, w / e.w, e.w, r.w)))
                n += 1.0;
            }
  return n;
}

double total(const std::string& variant) {
  ModelConfig c = ModelConfig::base();
  c.apply_variant(variant);
  return model_cost(c, HeadConfig{}).total();
}

}  // namespace

TEST_CASE("attention pair counts match enumeration") {
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const Extent3 d{1 + rng.below(9), 1 + rng.below(7), 1 + rng.below(7)};
    const Extent3 win{1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6)};
    const Extent3 r{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    for (const auto kind : {AttentionKind::local, AttentionKind::global}) {
      CAPTURE(trial);
      CHECK(attention_pairs(kind, d, win, r) == pairs_oracle(kind, d, win, r));
    }
  }
}

TEST_CASE("local cost is linear in the temporal extent") {
  const Extent3 win{8, 6, 6}, red{2, 2, 2};
  for (const std::size_t t : {16, 32, 64}) {
    const double a = attention_cost(AttentionKind::local, {t, 12, 12}, win, 96, red, 1).total();
    const double b = attention_cost(AttentionKind::local, {2 * t, 12, 12}, win, 96, red, 1).total();
    CHECK(b == 2.0 * a);
  }
}

TEST_CASE("global score term is quadratic in tokens") {
  const AttentionCost a = attention_cost(AttentionKind::global, {4, 6, 6}, {}, 64, {1, 1, 1}, 1);
  const AttentionCost b = attention_cost(AttentionKind::global, {16, 6, 6}, {}, 64, {1, 1, 1}, 1);
  CHECK(b.scores == 16.0 * a.scores);
  CHECK(b.qkv == 4.0 * a.qkv);
  CHECK(a.scores == 2.0 * 2.0 * 144.0 * 144.0 * 64.0);
}

TEST_CASE("full-window local cost equals global cost") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const Extent3 d{1 + rng.below(16), 1 + rng.below(12), 1 + rng.below(12)};
    const Extent3 r{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
    const Extent3 full{d.t + rng.below(3), d.h + rng.below(3), d.w + rng.below(3)};
    CHECK(attention_cost(AttentionKind::local, d, full, 96, r, 2).total() ==
          attention_cost(AttentionKind::global, d, {1, 1, 1}, 96, r, 2).total());
  }
}

TEST_CASE("report totals are sums of non-negative entries") {
  const CostReport r = model_cost(ModelConfig::base(), HeadConfig{});
  double sum = 0.0, bb = 0.0;
  for (const auto& e : r.entries) {
    CHECK(e.flops >= 0.0);
    CHECK(e.params >= 0.0);
    sum += e.flops;
    if (e.group != "head") bb += e.flops;
  }
  CHECK(r.total() == sum);
  CHECK(r.backbone_total() == bb);
  CHECK(r.groups() == std::vector<std::string>{"stage1", "stage2", "stage3", "stage4", "head"});
  double g = 0.0;
  for (const auto& name : r.groups()) g += r.group_total(name);
  CHECK(g == doctest::Approx(sum).epsilon(1e-15));
  const CostReport no_head = model_cost(ModelConfig::base(), HeadConfig{}, false);
  CHECK(no_head.total() == doctest::Approx(bb).epsilon(1e-15));
  CHECK(no_head.group_total("head") == 0.0);
}

TEST_CASE("removing a block removes exactly its entries") {
  ModelConfig big = ModelConfig::base();
  ModelConfig small = big;
  small.stages[2].depth -= 1;
  if (small.stages[2].kind == BlockKind::local) small.stages[2].windows.pop_back();
  const CostReport rb = model_cost(big, HeadConfig{});
  const CostReport rs = model_cost(small, HeadConfig{});
  const std::string last = "block" + std::string(big.stages[2].depth - 1 < 10 ? "0" : "") +
                           std::to_string(big.stages[2].depth - 1) + ".";
  double block = 0.0;
  for (const auto& e : rb.entries)
    if (e.group == "stage3" && e.name.rfind(last, 0) == 0) block += e.flops;
  CHECK(block > 0.0);
  CHECK(rb.total() - rs.total() == doctest::Approx(block).epsilon(1e-12));
}

TEST_CASE("variant cost ordering and ratio") {
  const double l4 = total("LLLL"), l3g = total("LLLG"), l2g2 = total("LLGG"), lg3 = total("LGGG"),
               g4 = total("GGGG");
  CHECK(l4 < l3g);
  CHECK(l3g < l2g2);
  CHECK(l2g2 < lg3);
  CHECK(lg3 < g4);
  const double target = 167.6 / 111.4;
  CHECK(g4 / l2g2 > 0.9 * target);
  CHECK(g4 / l2g2 < 1.1 * target);
}

TEST_CASE("window sweep moves the total by under one percent") {
  ModelConfig lo = ModelConfig::base();
  ModelConfig hi = lo;
  lo.set_temporal_windows({1, 1, 1});
  hi.set_temporal_windows({16, 16, 16});
  const double a = model_cost(lo, HeadConfig{}).total(), b = model_cost(hi, HeadConfig{}).total();
  CHECK(a < b);
  CHECK((b - a) / a < 0.01);
  CHECK_THROWS_AS(lo.set_temporal_windows({1, 1}), ConfigError);
}

TEST_CASE("positional encoding adds a small positive cost") {
  ModelConfig on = ModelConfig::base();
  ModelConfig off = on;
  off.cpe_enabled = false;
  const double a = model_cost(on, HeadConfig{}).total(), b = model_cost(off, HeadConfig{}).total();
  CHECK(a > b);
  CHECK((a - b) / a < 0.02);
}

TEST_CASE("cost is affine in the multiply-accumulate weight") {
  const ModelConfig c = ModelConfig::base();
  const double f1 = model_cost(c, HeadConfig{}, true, 1.0).total();
  const double f2 = model_cost(c, HeadConfig{}, true, 2.0).total();
  const double f3 = model_cost(c, HeadConfig{}, true, 3.0).total();
  CHECK(f3 - f2 == doctest::Approx(f2 - f1).epsilon(1e-12));
  CHECK(f2 < 2.0 * f1);
  CHECK_THROWS_AS(model_cost(c, HeadConfig{}, true, 0.0), ConfigError);
}

TEST_CASE("shared towers are counted once for parameters only") {
  HeadConfig shared, split;
  split.share_tower = false;
  const CostReport a = model_cost(ModelConfig::base(), shared);
  const CostReport b = model_cost(ModelConfig::base(), split);
  CHECK(a.total() == b.total());
  double pa = 0.0, pb = 0.0;
  for (const auto& e : a.entries) pa += e.params;
  for (const auto& e : b.entries) pb += e.params;
  CHECK(pb > pa);
}

TEST_CASE("text and CSV rendering") {
  const CostReport r = model_cost(ModelConfig::toy(), HeadConfig{});
  const std::string text = r.to_text();
  CHECK(text.find("subtotal") != std::string::npos);
  CHECK(text.find("model") != std::string::npos);
  CHECK(text.find("convention: 2 FLOPs per multiply-accumulate") != std::string::npos);

  std::istringstream csv(r.to_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "group,name,flops,params");
  double sum = 0.0;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
    sum += std::stod(line.substr(b + 1, c - b - 1));
    ++rows;
  }
  CHECK(rows == r.entries.size());
  CHECK(sum == doctest::Approx(r.total()).epsilon(1e-15));
}
