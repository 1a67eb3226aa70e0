// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion; with arguments,
// runs only the named criteria. Exit status is 0 iff every selected
// criterion passed.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>

#include "oracles.hpp"
#include "stpt/backbone.hpp"
#include "stpt/cli.hpp"
#include "stpt/config.hpp"
#include "stpt/cost.hpp"
#include "stpt/eval.hpp"
#include "stpt/head.hpp"
#include "stpt/losses.hpp"
#include "stpt/rng.hpp"

using namespace stpt;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  std::function<Verdict()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Verdict full_forward_shapes() {
  const ModelConfig cfg = ModelConfig::base();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  Clip<float> x(cfg.input);
  Rng in = rng.split("input");
  for (float& v : x.data()) v = static_cast<float>(in.normal());
  Rng wr = rng.split("backbone");
  const auto w = BackboneWeights<float>::init(cfg, wr);
  const auto out = backbone_forward(x, cfg, w);
  const double secs = seconds_since(t0);
  const std::vector<ClipDims> want{{128, 24, 24, 96}, {128, 12, 12, 192}, {64, 6, 6, 384}, {32, 3, 3, 768}};
  bool ok = out.stages.size() == want.size();
  std::string shapes;
  for (std::size_t s = 0; ok && s < want.size(); ++s) {
    const ClipDims d = out.stages[s].dims();
    ok = ok && d == want[s] && out.stages[s].all_finite();
    shapes += fmt::format("{}({},{},{},{})", s ? " " : "", d.t, d.h, d.w, d.c);
  }
  return {ok && secs < 300.0, fmt::format("{} in {:.1f} s (limit 300 s)", shapes, secs)};
}

Verdict local_equals_global() {
  double worst = 0.0;
  Rng dims_rng(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    // The last input uses the largest admitted dims.
    const ClipDims d = seed == 19 ? ClipDims{16, 12, 12, 96}
                                  : ClipDims{1 + dims_rng.below(16), 1 + dims_rng.below(12), 1 + dims_rng.below(12), 96};
    Rng rng(100 + seed);
    const auto p = AttentionParams<float>::random(96, 1 + dims_rng.below(2), AttentionKind::local,
                                                  WindowSpec{d.spatial()}, {2, 2, 2}, rng);
    auto g = p;
    g.kind = AttentionKind::global;
    Clip<float> x(d);
    for (float& v : x.data()) v = static_cast<float>(rng.normal());
    const auto a = lsta_forward(x, p), b = gsta_forward(x, g);
    for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, double(std::abs(a.data()[i] - b.data()[i])));
  }
  return {worst <= 1e-5, fmt::format("max |lsta - gsta| = {:.3e} over 20 inputs (limit 1e-5)", worst)};
}

Verdict locality() {
  const ClipDims d{8, 8, 8, 16};
  const Extent3 win{4, 4, 4}, ratios{2, 2, 2};
  Rng rng(3);
  const auto p = AttentionParams<float>::random(16, 2, AttentionKind::local, WindowSpec{win}, ratios, rng);
  Clip<float> x(d);
  for (float& v : x.data()) v = static_cast<float>(rng.normal());
  const auto y = lsta_forward(x, p);
  const Extent3 reduced = reduced_extent(d.spatial(), ratios);
  // Input positions feeding the query window: the window itself plus the
  // 3-tap reduction support [j*r - 1, j*r + 1] of its key/value cells.
  const auto in_field = [&](std::size_t pos, std::size_t q, std::size_t axis) {
    const std::size_t r = ratios[axis], e = win[axis];
    if (pos / e == q / e) return true;
    const AxisRange a = kv_range(q / e, e, r, reduced[axis]);
    for (std::size_t j = a.begin; j < a.end; ++j)
      if (pos + 1 >= j * r && pos <= j * r + 1) return true;
    return false;
  };
  int exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t qt = rng.below(8), qh = rng.below(8), qw = rng.below(8);
    std::size_t pt, ph, pw;
    do {
      pt = rng.below(8), ph = rng.below(8), pw = rng.below(8);
    } while (in_field(pt, qt, 0) && in_field(ph, qh, 1) && in_field(pw, qw, 2));
    Clip<float> xp = x;
    for (std::size_t c = 0; c < d.c; ++c) xp.at(pt, ph, pw, c) += static_cast<float>(10.0 * rng.normal());
    const auto yp = lsta_forward(xp, p);
    bool same = true;
    for (std::size_t c = 0; c < d.c; ++c) same = same && yp.at(qt, qh, qw, c) == y.at(qt, qh, qw, c);
    exact += same;
  }
  return {exact == 50, fmt::format("{}/50 perturbations left the query bit-identical", exact)};
}

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2026);
  const auto results = run_gradcheck(loss_grad_terms(LossConfig::thumos()), 100, rng);
  const double secs = seconds_since(t0);
  bool ok = results.size() == 5;
  std::string detail;
  for (const auto& r : results) {
    ok = ok && r.passed && r.points == 100;
    detail += fmt::format("{}={:.1e} ", r.name, r.max_rel_error);
  }
  return {ok && secs < 60.0, detail + fmt::format("in {:.2f} s (limit 1e-4, 60 s)", secs)};
}

const std::vector<std::string> kVariants{"LLLL", "LLLG", "LLGG", "LGGG", "GGGG"};
const std::vector<double> kReferenceGflops{101.8, 102.7, 111.4, 151.4, 167.6};

std::vector<double> variant_gflops() {
  std::vector<double> out;
  for (const auto& v : kVariants) {
    ModelConfig c = ModelConfig::base();
    c.apply_variant(v);
    out.push_back(model_cost(c, HeadConfig{}).total() / 1e9);
  }
  return out;
}

Verdict cost_ordering() {
  const auto g = variant_gflops();
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i > 0) ok = ok && g[i - 1] < g[i];
    detail += fmt::format("{}{}={:.2f}", i ? " < " : "", kVariants[i], g[i]);
  }
  return {ok, detail + " GFLOPs"};
}

Verdict cost_ratio() {
  const auto g = variant_gflops();
  const double target = 167.6 / 111.4, ratio = g[4] / g[2];
  return {std::abs(ratio / target - 1.0) <= 0.10,
          fmt::format("GGGG/LLGG = {:.4f}, target {:.4f}, deviation {:+.1f}% (limit 10%)", ratio, target,
                      100.0 * (ratio / target - 1.0))};
}

Verdict cost_absolute() {
  const auto g = variant_gflops();
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dev = g[i] / kReferenceGflops[i] - 1.0;
    ok = ok && std::abs(dev) <= 0.15;
    detail += fmt::format("{} {:+.0f}% ", kVariants[i], 100.0 * dev);
  }
  return {ok, detail + "(limit 15%, MAC = 2 FLOPs)"};
}

Verdict window_sweep() {
  double lo = HUGE_VAL, hi = 0.0;
  for (const std::size_t t : {1, 2, 4, 8, 16}) {
    ModelConfig c = ModelConfig::base();
    c.cpe_enabled = false;
    c.set_temporal_windows({t, t, t});
    const double g = model_cost(c, HeadConfig{}).total() / 1e9;
    lo = std::min(lo, g);
    hi = std::max(hi, g);
  }
  const double spread = (hi - lo) / lo;
  return {spread < 0.01, fmt::format("{:.3f}..{:.3f} GFLOPs, spread {:.2f}% (limit 1%)", lo, hi, 100.0 * spread)};
}

double pipeline_map(const RunConfig& cfg, double jitter, std::uint64_t seed) {
  const std::size_t n = cfg.model.stages.size();
  std::vector<std::size_t> strides{cfg.model.temporal_stride(n - 2), cfg.model.temporal_stride(n - 1)};
  while (strides.size() < cfg.head.levels) strides.push_back(2 * strides.back());
  const auto lengths = pyramid_lengths(cfg);
  Rng root(seed);
  Rng dr = root.split("dataset");
  const SynthDataset data = synth_dataset(dr, 4, cfg.head.num_classes, 5,
                                          static_cast<double>(cfg.model.input.t) / cfg.head.fps);
  Rng pr = root.split("predictions");
  std::vector<Prediction> preds;
  for (const auto& clip : data.clips) {
    std::vector<GroundTruthInstance> gts;
    for (const auto& g : data.gts)
      if (g.video_id == clip.video_id) gts.push_back(g);
    const auto o = oracle_head_outputs(gts, lengths, strides, cfg.head.fps, cfg.head.num_classes, {jitter, 0.0}, pr);
    for (const auto& d : decode(o.coarse, o.refined, strides, cfg.head.fps)) preds.push_back({clip.video_id, d});
  }
  const MapTable t = evaluate(postprocess(preds, cfg.eval), data.gts, cfg.eval);
  for (const double m : t.map)
    if (jitter == 0.0 && m != 1.0) return m;
  return t.average;
}

Verdict pipeline_closure() {
  bool ok = true;
  std::string detail;
  for (const char* profile : {"thumos", "anet"}) {
    std::istringstream empty;
    const RunConfig cfg = parse_config(empty, "<acceptance>", {{"detection.profile", profile}});
    double clean_min = 1.0, noisy = 0.0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      clean_min = std::min(clean_min, pipeline_map(cfg, 0.0, seed));
      noisy += pipeline_map(cfg, 0.1, seed) / 30.0;
    }
    ok = ok && clean_min == 1.0 && noisy < 1.0;
    detail += fmt::format("{}: jitter 0 min mAP {:.4f}, jitter 0.1 mean {:.4f}; ", profile, clean_min, noisy);
  }
  return {ok, detail + "30 seeds"};
}

Verdict soft_nms_reference() {
  Rng rng(8);
  std::size_t sets = 0;
  double worst = 0.0;
  bool same_order = true;
  EvalConfig gauss = EvalConfig::thumos();
  gauss.nms_mode = SoftNmsMode::gaussian;
  for (const EvalConfig& cfg : {EvalConfig::thumos(), EvalConfig::anet(), gauss}) {
    for (std::size_t n = 0; n <= 10; ++n) {
      for (int rep = 0; rep < 100; ++rep) {
        std::vector<DetectionCandidate> c;
        for (std::size_t i = 0; i < n; ++i) {
          DetectionCandidate d;
          d.t_start = rng.below(4) == 0 && !c.empty() ? c[rng.below(c.size())].t_start : rng.uniform(0.0, 20.0);
          d.t_end = d.t_start + rng.uniform(0.5, 8.0);
          d.score = rng.below(4) == 0 ? 0.5 : rng.uniform(0.01, 1.0);
          d.class_id = rng.below(2);
          c.push_back(d);
        }
        const auto got = soft_nms(c, cfg), want = oracle::soft_nms(c, cfg);
        same_order = same_order && got.size() == want.size();
        for (std::size_t i = 0; same_order && i < got.size(); ++i) {
          worst = std::max(worst, std::abs(got[i].score - want[i].score));
          same_order = got[i].t_start == want[i].t_start && got[i].t_end == want[i].t_end &&
                       got[i].class_id == want[i].class_id;
        }
        ++sets;
      }
    }
  }
  return {same_order && worst <= 1e-12,
          fmt::format("{} sets of size 0..10, linear and gaussian, max score diff {:.1e} (limit 1e-12)", sets, worst)};
}

Verdict decode_examples() {
  const auto z = refine_boundaries(10.0, 20.0, 0.0, 0.0);
  const auto s = refine_boundaries(10.0, 20.0, 0.2, 0.0);
  const double score = combine_scores(0.8, 0.6, 0.5);
  // Same numbers through decode: one level, stride 10 frames at 10 fps, so
  // anchor 14 sits at 14.5 s with coarse segment (10, 20).
  CoarsePrediction c;
  c.num_classes = 1;
  c.levels.push_back({20, std::vector<double>(20, -30.0), std::vector<double>(40, 0.5)});
  c.levels[0].distances[28] = 4.5;
  c.levels[0].distances[29] = 5.5;
  c.levels[0].logits[14] = std::log(0.8 / 0.2);
  RefinedPrediction r;
  r.num_classes = 1;
  r.levels.push_back({std::vector<double>(40, 0.0), std::vector<double>(20, -30.0), std::vector<double>(20, 0.5),
                      std::vector<char>(20, 0)});
  r.levels[0].offsets[28] = 0.2;
  r.levels[0].logits[14] = std::log(0.6 / 0.4);
  const auto d = decode(c, r, {10}, 10.0);
  const bool via_decode = d.size() == 20 && d[14].t_start == 11.0 && d[14].t_end == 20.0 &&
                          std::abs(d[14].score - 0.35) < 1e-15;
  const bool ok = z.first == 10.0 && z.second == 20.0 && s.first == 11.0 && score == 0.35 && via_decode;
  return {ok, fmt::format("zero offset ({}, {}), start {}, score {}, decode start {} score {:.17g}", z.first, z.second,
                          s.first, score, d.size() > 14 ? d[14].t_start : -1.0, d.size() > 14 ? d[14].score : -1.0)};
}

Verdict forward_determinism() {
  const fs::path root = fs::temp_directory_path() / ("stpt_acceptance_" + std::to_string(::getpid()));
  const auto run = [&](const std::string& name, std::uint64_t seed) {
    std::istringstream empty;
    RunConfig cfg = parse_config(empty, "<acceptance>",
                                 {{"model.preset", "toy"}, {"run.seed", std::to_string(seed)},
                                  {"io.output_dir", (root / name).string()}});
    std::ostringstream sink;
    return cmd_forward(cfg, sink).files;
  };
  const auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  };
  const auto files = run("a", 7);
  run("b", 7);
  run("c", 8);
  std::size_t identical = 0, changed = 0;
  for (const auto& f : files) {
    identical += slurp(root / "a" / f) == slurp(root / "b" / f);
    changed += slurp(root / "a" / f) != slurp(root / "c" / f);
  }
  fs::remove_all(root);
  // Every file depends on the seed: tensors, detections, canonical config, manifest.
  return {identical == files.size() && changed == files.size(),
          fmt::format("{}/{} files identical for equal seeds, {}/{} differ for another seed", identical, files.size(),
                      changed, files.size())};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"1", "full-size f32 forward shapes and runtime", full_forward_shapes},
      {"2", "local attention with full windows equals global attention", local_equals_global},
      {"3", "local attention ignores tokens outside the receptive field", locality},
      {"4", "analytic loss gradients match finite differences", gradients},
      {"5a", "variant cost ordering", cost_ordering},
      {"5b", "GGGG/LLGG cost ratio", cost_ratio},
      {"5c", "absolute variant costs", cost_absolute},
      {"6", "temporal window sweep cost stability", window_sweep},
      {"7", "synthetic pipeline closure", pipeline_closure},
      {"8", "soft-NMS equals the brute-force reference", soft_nms_reference},
      {"9", "decode examples", decode_examples},
      {"10", "forward determinism", forward_determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> only(argv + 1, argv + argc);
  bool all_pass = true;
  std::size_t ran = 0;
  for (const Criterion& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << fmt::format("{} criterion {}: {} | {}\n", v.pass ? "PASS" : "FAIL", c.id, c.title, v.detail)
              << std::flush;
    all_pass = all_pass && v.pass;
    ++ran;
  }
  if (ran == 0) {
    std::cerr << "no criterion matched\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
