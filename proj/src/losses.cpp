// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/losses.hpp"

#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "stpt/error.hpp"
#include "stpt/gradcheck.hpp"
#include "stpt/rng.hpp"

namespace stpt {

LossConfig LossConfig::thumos() { return {}; }

LossConfig LossConfig::anet() {
  LossConfig c;
  c.loc_weight = 1.0;
  return c;
}

LossConfig LossConfig::profile(std::string_view name) {
  if (name == "thumos") return thumos();
  if (name == "anet") return anet();
  throw ConfigError("unknown loss profile '" + std::string(name) + "' (expected thumos or anet)");
}

void LossConfig::validate() const {
  if (!(cls_weight >= 0.0) || !(loc_weight >= 0.0) || !(quality_weight >= 0.0)) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal alpha must lie in (0, 1)");
}

LossValue focal_loss(std::span<const double> logits, std::span<const std::optional<std::size_t>> labels,
                     std::size_t num_classes, double gamma, double alpha) {
  if (logits.size() != labels.size() * num_classes) throw ShapeError("focal_loss: logits do not match labels");
  LossValue out;
  out.grad.assign(logits.size(), 0.0);
  if (labels.empty()) return out;
  const double norm = 1.0 / static_cast<double>(labels.size());
  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      const std::size_t idx = a * num_classes + k;
      const double p = sigmoid(logits[idx]);
      double loss = 0.0, grad = 0.0;
      if (labels[a] && *labels[a] == k) {
        const double lp = std::log(std::max(p, kProbEps));
        const double w = alpha * std::pow(1.0 - p, gamma);
        loss = -w * lp;
        grad = w * (gamma * p * lp - (p >= kProbEps ? 1.0 - p : 0.0));
      } else {
        const double lq = std::log(std::max(1.0 - p, kProbEps));
        const double w = (1.0 - alpha) * std::pow(p, gamma);
        loss = -w * lq;
        grad = w * ((1.0 - p >= kProbEps ? p : 0.0) - gamma * (1.0 - p) * lq);
      }
      out.value += loss * norm;
      out.grad[idx] = grad * norm;
    }
  }
  return out;
}

TiouLoss tiou_loss(std::span<const double> pred, std::span<const Segment> targets) {
  if (pred.size() != 2 * targets.size()) throw ShapeError("tiou_loss: predictions do not match targets");
  TiouLoss out;
  out.loss.grad.assign(pred.size(), 0.0);
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].valid()) {
      used.push_back(i);
    } else {
      ++out.skipped;
    }
  }
  if (used.empty()) return out;
  const double norm = 1.0 / static_cast<double>(used.size());
  for (const std::size_t i : used) {
    const double s = pred[2 * i], e = pred[2 * i + 1];
    const Segment& t = targets[i];
    const double inter = intersection({s, e}, t);
    const double uni = (e - s) + t.length() - inter;
    if (!(uni > 0.0)) throw NumericError("tiou_loss: empty union");
    out.loss.value += (1.0 - inter / uni) * norm;
    const bool overlap = inter > 0.0;
    const double di_ds = overlap && s >= t.start ? -1.0 : 0.0;
    const double di_de = overlap && e < t.end ? 1.0 : 0.0;
    const double du_ds = -1.0 - di_ds;
    const double du_de = 1.0 - di_de;
    out.loss.grad[2 * i] = -(di_ds * uni - inter * du_ds) / (uni * uni) * norm;
    out.loss.grad[2 * i + 1] = -(di_de * uni - inter * du_de) / (uni * uni) * norm;
  }
  return out;
}

LossValue l1_offset_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("l1_offset_loss: length mismatch");
  LossValue out;
  out.grad.assign(pred.size(), 0.0);
  if (pred.empty()) return out;
  const double norm = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += std::abs(d) * norm;
    out.grad[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) * norm;
  }
  return out;
}

LossValue quality_loss(std::span<const double> quality, std::span<const Segment> pred,
                       std::span<const Segment> target) {
  if (quality.size() != pred.size() || pred.size() != target.size()) {
    throw ShapeError("quality_loss: length mismatch");
  }
  LossValue out;
  out.grad.assign(quality.size(), 0.0);
  if (quality.empty()) return out;
  const double norm = 1.0 / static_cast<double>(quality.size());
  for (std::size_t i = 0; i < quality.size(); ++i) {
    const double q = quality[i];
    const double t = tiou(pred[i], target[i]);
    double loss = 0.0, grad = 0.0;
    if (t > 0.0) {
      loss -= t * std::log(std::max(q, kProbEps));
      if (q >= kProbEps) grad -= t / q;
    }
    if (t < 1.0) {
      loss -= (1.0 - t) * std::log(std::max(1.0 - q, kProbEps));
      if (1.0 - q >= kProbEps) grad += (1.0 - t) / (1.0 - q);
    }
    out.value += loss * norm;
    out.grad[i] = grad * norm;
  }
  return out;
}

std::string LossReport::to_text() const {
  std::string s;
  const auto line = [&](std::string_view k, double v) { s += fmt::format("{}={:.17g}\n", k, v); };
  line("focal_coarse", terms.focal_coarse);
  line("focal_refined", terms.focal_refined);
  line("tiou_coarse", terms.tiou_coarse);
  line("l1_refined", terms.l1_refined);
  line("quality", terms.quality);
  line("cls", cls);
  line("loc", loc);
  line("q", quality);
  line("total", total);
  s += fmt::format("positives={}\nskipped={}\n", positives, skipped);
  return s;
}

LossReport total_loss(const LossTerms& terms, const LossConfig& cfg) {
  cfg.validate();
  LossReport r;
  r.terms = terms;
  r.cls = terms.focal_coarse + terms.focal_refined;
  r.loc = terms.tiou_coarse + terms.l1_refined;
  r.quality = terms.quality;
  r.total = cfg.cls_weight * r.cls + cfg.loc_weight * r.loc + cfg.quality_weight * r.quality;
  return r;
}

double anchor_center(std::size_t i, std::size_t frame_stride, double fps) {
  return (static_cast<double>(i) + 0.5) * static_cast<double>(frame_stride) / fps;
}

MatchedTargets match_anchors(const CoarsePrediction& coarse, const std::vector<std::size_t>& frame_stride,
                             double fps, std::span<const GtSegment> gts) {
  if (coarse.levels.size() != frame_stride.size()) throw ShapeError("match_anchors: level count mismatch");
  MatchedTargets out;
  for (std::size_t m = 0; m < coarse.levels.size(); ++m) {
    const CoarseLevel& lvl = coarse.levels[m];
    const double radius = 2.0 * static_cast<double>(frame_stride[m]) / fps;
    for (std::size_t i = 0; i < lvl.length; ++i) {
      const double s = anchor_center(i, frame_stride[m], fps);
      const Segment span{s - radius, s + radius};
      AnchorTarget a;
      double best = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const Segment& seg = gts[g].segment;
        if (!seg.valid() || s < seg.start || s > seg.end) continue;
        const double v = tiou(span, seg);
        if (v > best) {
          best = v;
          a.positive = true;
          a.gt_index = g;
        }
      }
      if (a.positive) {
        a.class_id = gts[a.gt_index].class_id;
        a.segment = gts[a.gt_index].segment;
        const double bs = s - lvl.distances[2 * i], be = s + lvl.distances[2 * i + 1];
        std::tie(a.offset_start, a.offset_end) = boundary_offsets(bs, be, a.segment.start, a.segment.end);
        ++out.positives;
      }
      out.anchors.push_back(a);
    }
  }
  return out;
}

LossReport clip_loss(const CoarsePrediction& coarse, const RefinedPrediction& refined,
                     const std::vector<std::size_t>& frame_stride, double fps, const MatchedTargets& targets,
                     const LossConfig& cfg) {
  if (targets.anchors.size() != coarse.anchors()) throw ShapeError("clip_loss: targets do not cover every anchor");
  const std::size_t k = coarse.num_classes;
  std::vector<std::optional<std::size_t>> labels;
  std::vector<double> coarse_logits, refined_logits, coarse_seg, refined_off, target_off, quality;
  std::vector<Segment> gt_seg, refined_seg;
  std::size_t a = 0;
  for (std::size_t m = 0; m < coarse.levels.size(); ++m) {
    const CoarseLevel& c = coarse.levels[m];
    const RefinedLevel& r = refined.levels.at(m);
    coarse_logits.insert(coarse_logits.end(), c.logits.begin(), c.logits.end());
    refined_logits.insert(refined_logits.end(), r.logits.begin(), r.logits.end());
    for (std::size_t i = 0; i < c.length; ++i, ++a) {
      const AnchorTarget& t = targets.anchors[a];
      labels.push_back(t.positive ? std::optional<std::size_t>(t.class_id) : std::nullopt);
      if (!t.positive) continue;
      const double s = anchor_center(i, frame_stride[m], fps);
      const double bs = s - c.distances[2 * i], be = s + c.distances[2 * i + 1];
      coarse_seg.insert(coarse_seg.end(), {bs, be});
      refined_off.insert(refined_off.end(), {r.offsets[2 * i], r.offsets[2 * i + 1]});
      target_off.insert(target_off.end(), {t.offset_start, t.offset_end});
      const auto [ts, te] = refine_boundaries(bs, be, r.offsets[2 * i], r.offsets[2 * i + 1]);
      refined_seg.push_back({ts, te});
      quality.push_back(r.quality[i]);
      gt_seg.push_back(t.segment);
    }
  }
  LossTerms terms;
  terms.focal_coarse = focal_loss(coarse_logits, labels, k, cfg.gamma, cfg.alpha).value;
  terms.focal_refined = focal_loss(refined_logits, labels, k, cfg.gamma, cfg.alpha).value;
  const TiouLoss tl = tiou_loss(coarse_seg, gt_seg);
  terms.tiou_coarse = tl.loss.value;
  terms.l1_refined = l1_offset_loss(refined_off, target_off).value;
  terms.quality = quality_loss(quality, refined_seg, gt_seg).value;
  LossReport rep = total_loss(terms, cfg);
  rep.positives = targets.positives;
  rep.skipped = tl.skipped;
  return rep;
}

namespace {

constexpr double kKinkMargin = 1e-3;

GradTerm focal_term(std::string name, const LossConfig& cfg) {
  return {std::move(name), [cfg](Rng& rng) {
            const std::size_t anchors = 6, classes = 4;
            GradProblem p;
            std::vector<std::optional<std::size_t>> labels(anchors);
            for (auto& l : labels) {
              const auto c = rng.below(classes + 1);
              if (c < classes) l = c;
            }
            for (std::size_t i = 0; i < anchors * classes; ++i) p.point.push_back(rng.uniform(-4.0, 4.0));
            p.fn = [labels, classes, cfg](std::span<const double> x) {
              return focal_loss(x, labels, classes, cfg.gamma, cfg.alpha);
            };
            return p;
          }};
}

GradTerm tiou_term() {
  return {"tiou_coarse", [](Rng& rng) {
            const std::size_t n = 4;
            std::vector<Segment> targets;
            GradProblem p;
            for (std::size_t i = 0; i < n; ++i) {
              const double s = rng.uniform(0.0, 10.0);
              const Segment t{s, s + rng.uniform(2.0, 6.0)};
              targets.push_back(t);
              const auto jitter = [&](double base) {
                double v;
                do {
                  v = base + rng.uniform(-1.0, 1.0);
                } while (std::abs(v - base) < kKinkMargin);
                return v;
              };
              p.point.push_back(jitter(t.start));
              p.point.push_back(jitter(t.end));
            }
            p.fn = [targets](std::span<const double> x) { return tiou_loss(x, targets).loss; };
            return p;
          }};
}

GradTerm l1_term() {
  return {"l1_refined", [](Rng& rng) {
            const std::size_t n = 8;
            std::vector<double> target;
            GradProblem p;
            for (std::size_t i = 0; i < n; ++i) {
              const double t = rng.uniform(-1.0, 1.0);
              double v;
              do {
                v = rng.uniform(-1.5, 1.5);
              } while (std::abs(v - t) < kKinkMargin);
              target.push_back(t);
              p.point.push_back(v);
            }
            p.fn = [target](std::span<const double> x) { return l1_offset_loss(x, target); };
            return p;
          }};
}

GradTerm quality_term() {
  return {"quality", [](Rng& rng) {
            const std::size_t n = 5;
            std::vector<Segment> pred, target;
            GradProblem p;
            for (std::size_t i = 0; i < n; ++i) {
              const double s = rng.uniform(0.0, 10.0);
              target.push_back({s, s + rng.uniform(2.0, 6.0)});
              pred.push_back({s + rng.uniform(-1.0, 1.0), target.back().end + rng.uniform(-1.0, 1.0)});
              p.point.push_back(rng.uniform(0.05, 0.95));
            }
            p.fn = [pred, target](std::span<const double> x) { return quality_loss(x, pred, target); };
            return p;
          }};
}

}  // namespace

std::vector<GradTerm> loss_grad_terms(const LossConfig& cfg) {
  cfg.validate();
  return {focal_term("focal_coarse", cfg), focal_term("focal_refined", cfg), tiou_term(), l1_term(), quality_term()};
}

GradTerm with_sign_error(GradTerm term) {
  auto make = term.make;
  term.make = [make](Rng& rng) {
    GradProblem p = make(rng);
    auto fn = p.fn;
    p.fn = [fn](std::span<const double> x) {
      LossValue v = fn(x);
      for (double& g : v.grad) g = -g;
      return v;
    };
    return p;
  };
  return term;
}

std::vector<GradTermResult> run_gradcheck(const std::vector<GradTerm>& terms, std::size_t points, Rng& rng,
                                          double tolerance, double h) {
  std::vector<GradTermResult> out;
  for (const GradTerm& term : terms) {
    Rng stream = rng.split(term.name);
    GradTermResult r;
    r.name = term.name;
    for (std::size_t n = 0; n < points; ++n) {
      const GradProblem p = term.make(stream);
      const LossValue v = p.fn(p.point);
      bool finite = std::isfinite(v.value);
      for (const double g : v.grad) finite = finite && std::isfinite(g);
      if (!finite) {
        r.finite = false;
        break;
      }
      const auto fd = finite_diff_grad([&](std::span<const double> x) { return p.fn(x).value; }, p.point, h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(v.grad, fd));
      ++r.points;
    }
    r.passed = r.finite && r.points == points && r.max_rel_error < tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace stpt
