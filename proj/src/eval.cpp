// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

#include "stpt/error.hpp"
#include "stpt/rng.hpp"

namespace stpt {

EvalConfig EvalConfig::thumos() {
  EvalConfig c;
  c.thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
  c.display = c.thresholds;
  c.nms_threshold = 0.5;
  return c;
}

EvalConfig EvalConfig::anet() {
  EvalConfig c;
  for (int i = 0; i < 10; ++i) c.thresholds.push_back((50.0 + 5.0 * i) / 100.0);
  c.display = {0.5, 0.75, 0.95};
  c.nms_threshold = 0.85;
  return c;
}

EvalConfig EvalConfig::profile(std::string_view name) {
  if (name == "thumos") return thumos();
  if (name == "anet") return anet();
  throw ConfigError("unknown evaluation profile '" + std::string(name) + "' (expected thumos or anet)");
}

void EvalConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("evaluation needs at least one tIoU threshold");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw ConfigError("tIoU thresholds must lie in (0, 1)");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("tIoU thresholds must ascend strictly");
  }
  for (const double d : display) {
    if (std::find(thresholds.begin(), thresholds.end(), d) == thresholds.end()) {
      throw ConfigError(fmt::format("display threshold {} is not an evaluated threshold", d));
    }
  }
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) throw ConfigError("soft-NMS threshold must lie in [0, 1]");
  if (!(nms_sigma > 0.0)) throw ConfigError("soft-NMS sigma must be > 0");
  if (top_k == 0) throw ConfigError("top_k must be >= 1");
}

namespace {

Segment seg(const DetectionCandidate& d) { return {d.t_start, d.t_end}; }

/// Strict ranking: score desc, start asc, earlier index.
struct RankBefore {
  const std::vector<double>& score;
  const std::vector<double>& start;
  bool operator()(std::size_t a, std::size_t b) const {
    if (score[a] != score[b]) return score[a] > score[b];
    if (start[a] != start[b]) return start[a] < start[b];
    return a < b;
  }
};

std::vector<std::size_t> ranked(const std::vector<double>& score, const std::vector<double>& start) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), RankBefore{score, start});
  return idx;
}

std::vector<std::vector<std::size_t>> group_by_video(const std::vector<Prediction>& preds) {
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto [it, fresh] = slot.emplace(preds[i].video_id, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

}  // namespace

std::vector<DetectionCandidate> soft_nms(const std::vector<DetectionCandidate>& cands, const EvalConfig& cfg) {
  const std::size_t n = cands.size();
  std::vector<double> score(n), start(n);
  for (std::size_t i = 0; i < n; ++i) {
    score[i] = cands[i].score;
    start[i] = cands[i].t_start;
  }
  const RankBefore before{score, start};
  std::vector<char> done(n, 0);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!done[i] && (best == n || before(i, best))) best = i;
    }
    done[best] = 1;
    for (std::size_t r = 0; r < n; ++r) {
      if (done[r] || cands[r].class_id != cands[best].class_id) continue;
      const double t = tiou(seg(cands[best]), seg(cands[r]));
      if (cfg.nms_mode == SoftNmsMode::linear) {
        if (t > cfg.nms_threshold) score[r] *= 1.0 - t;
      } else {
        score[r] *= std::exp(-t * t / cfg.nms_sigma);
      }
    }
  }
  std::vector<DetectionCandidate> out;
  out.reserve(n);
  for (const std::size_t i : ranked(score, start)) {
    out.push_back(cands[i]);
    out.back().score = score[i];
  }
  return out;
}

std::vector<Prediction> postprocess(const std::vector<Prediction>& preds, const EvalConfig& cfg) {
  std::vector<Prediction> out;
  for (const auto& group : group_by_video(preds)) {
    std::vector<DetectionCandidate> cands;
    for (const std::size_t i : group) cands.push_back(preds[i].det);
    const auto kept = soft_nms(cands, cfg);
    const std::size_t n = std::min(kept.size(), cfg.top_k);
    for (std::size_t i = 0; i < n; ++i) out.push_back({preds[group[0]].video_id, kept[i]});
  }
  return out;
}

double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruthInstance>& gts,
                         double threshold) {
  if (gts.empty()) return 0.0;
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < gts.size(); ++g) by_video[gts[g].video_id].push_back(g);
  std::vector<double> score(preds.size()), start(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    score[i] = preds[i].det.score;
    start[i] = preds[i].det.t_start;
  }
  std::vector<char> matched(gts.size(), 0);
  std::vector<char> is_tp;
  for (const std::size_t i : ranked(score, start)) {
    std::size_t best = gts.size();
    double best_iou = -1.0;
    const auto it = by_video.find(preds[i].video_id);
    if (it != by_video.end()) {
      for (const std::size_t g : it->second) {
        if (matched[g]) continue;
        const double v = tiou(preds[i].segment(), gts[g].segment());
        if (v >= threshold && v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
    }
    if (best < gts.size()) matched[best] = 1;
    is_tp.push_back(best < gts.size() ? 1 : 0);
  }
  const std::size_t n = is_tp.size();
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += is_tp[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  double envelope = 0.0, sum = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    envelope = std::max(envelope, precision[k]);
    if (is_tp[k]) sum += envelope;
  }
  return sum / static_cast<double>(gts.size());
}

MapTable evaluate(const std::vector<Prediction>& preds, const std::vector<GroundTruthInstance>& gts,
                  const EvalConfig& cfg) {
  cfg.validate();
  MapTable t;
  t.thresholds = cfg.thresholds;
  t.display = cfg.display;
  std::map<std::size_t, std::vector<GroundTruthInstance>> gt_by_class;
  for (const auto& g : gts) gt_by_class[g.class_id].push_back(g);
  std::map<std::size_t, std::vector<Prediction>> pred_by_class;
  for (const auto& group : group_by_video(preds)) {
    std::vector<double> score, start;
    for (const std::size_t i : group) {
      score.push_back(preds[i].det.score);
      start.push_back(preds[i].det.t_start);
    }
    const auto order = ranked(score, start);
    const std::size_t n = std::min(order.size(), cfg.top_k);
    for (std::size_t k = 0; k < n; ++k) {
      const Prediction& p = preds[group[order[k]]];
      pred_by_class[p.det.class_id].push_back(p);
    }
  }
  for (const auto& [c, _] : gt_by_class) t.classes.push_back(c);
  for (const auto& [c, _] : pred_by_class) {
    if (!gt_by_class.count(c)) t.classes_without_gt.push_back(c);
  }
  for (const double thr : cfg.thresholds) {
    std::vector<double> aps;
    for (const std::size_t c : t.classes) {
      const auto it = pred_by_class.find(c);
      aps.push_back(it == pred_by_class.end() ? 0.0 : average_precision(it->second, gt_by_class[c], thr));
    }
    const double m =
        aps.empty() ? 0.0 : std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
    t.class_ap.push_back(std::move(aps));
    t.map.push_back(m);
  }
  t.average = std::accumulate(t.map.begin(), t.map.end(), 0.0) / static_cast<double>(t.map.size());
  return t;
}

std::string MapTable::to_text() const {
  std::string head = fmt::format("{:<6}", "tIoU");
  std::string row = fmt::format("{:<6}", "mAP");
  for (const double d : display) {
    const auto i = static_cast<std::size_t>(std::find(thresholds.begin(), thresholds.end(), d) - thresholds.begin());
    head += fmt::format(" {:>7.2f}", d);
    row += fmt::format(" {:>7.4f}", map.at(i));
  }
  head += fmt::format(" {:>7}", "Avg");
  row += fmt::format(" {:>7.4f}", average);
  std::string out = head + "\n" + row + "\n";
  for (const std::size_t c : classes_without_gt) out += fmt::format("note: class {} has no ground truth; excluded\n", c);
  return out;
}

std::string MapTable::to_csv() const {
  std::string out = "tiou,map\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) out += fmt::format("{},{:.17g}\n", thresholds[i], map[i]);
  out += fmt::format("avg,{:.17g}\n", average);
  return out;
}

SynthDataset synth_dataset(Rng& rng, std::size_t n_videos, std::size_t n_classes, std::size_t per_video,
                           double duration) {
  if (n_videos == 0 || n_classes == 0 || per_video == 0) throw ConfigError("synth counts must be >= 1");
  if (!(duration > 0.0)) throw ConfigError("synth clip duration must be > 0");
  SynthDataset d;
  d.num_classes = n_classes;
  const double slot = duration / static_cast<double>(per_video);
  for (std::size_t v = 0; v < n_videos; ++v) {
    Rng vr = rng.split(v);
    const std::string id = fmt::format("video_{:04d}", v);
    d.clips.push_back({id, duration});
    for (std::size_t k = 0; k < per_video; ++k) {
      const double len = vr.uniform(0.3, 0.9) * slot;
      const double begin = static_cast<double>(k) * slot + vr.uniform(0.0, slot - len);
      d.gts.push_back({id, begin, begin + len, static_cast<std::size_t>(vr.below(n_classes))});
    }
  }
  return d;
}

namespace {

Segment jittered(const GroundTruthInstance& g, double jitter, Rng& rng) {
  const double len = g.t_end - g.t_start;
  for (;;) {
    const double s = g.t_start + jitter * len * rng.normal();
    const double e = g.t_end + jitter * len * rng.normal();
    if (s < e) return {s, e};
  }
}

double noisy_score(double noise, Rng& rng) { return 1.0 - noise * rng.uniform(); }

}  // namespace

std::vector<Prediction> oracle_predictions(const SynthDataset& data, const OracleNoise& noise, Rng& rng) {
  std::vector<Prediction> out;
  for (const auto& g : data.gts) {
    const Segment s = jittered(g, noise.jitter, rng);
    out.push_back({g.video_id, {s.start, s.end, g.class_id, noisy_score(noise.score_noise, rng), 0, 0}});
  }
  return out;
}

OracleHeadOutputs oracle_head_outputs(const std::vector<GroundTruthInstance>& clip_gts,
                                      const std::vector<std::size_t>& level_lengths,
                                      const std::vector<std::size_t>& frame_stride, double fps,
                                      std::size_t num_classes, const OracleNoise& noise, Rng& rng) {
  constexpr double kOn = 12.0, kOff = -12.0, kLoose = 0.25;
  if (level_lengths.empty() || level_lengths.size() != frame_stride.size()) {
    throw ShapeError("oracle head outputs need one stride per level");
  }
  OracleHeadOutputs o;
  o.coarse.num_classes = o.refined.num_classes = num_classes;
  for (std::size_t m = 0; m < level_lengths.size(); ++m) {
    const std::size_t len = level_lengths[m];
    const double unit = static_cast<double>(frame_stride[m]) / fps;
    CoarseLevel c{len, std::vector<double>(len * num_classes, kOff), std::vector<double>(2 * len, unit)};
    RefinedLevel r{std::vector<double>(2 * len, 0.0), std::vector<double>(len * num_classes, kOff),
                   std::vector<double>(len, 0.5), std::vector<char>(len, 0)};
    o.coarse.levels.push_back(std::move(c));
    o.refined.levels.push_back(std::move(r));
  }
  const double unit = static_cast<double>(frame_stride[0]) / fps;
  std::vector<char> owned(level_lengths[0], 0);
  for (const auto& g : clip_gts) {
    if (g.class_id >= num_classes) throw InputError("instance class exceeds the class count");
    const double mid = 0.5 * (g.t_start + g.t_end);
    const double pos = std::clamp(std::floor(mid / unit), 0.0, static_cast<double>(level_lengths[0] - 1));
    const auto i = static_cast<std::size_t>(pos);
    const double s = (static_cast<double>(i) + 0.5) * unit;
    if (owned[i] || s < g.t_start || s > g.t_end) {
      throw InputError(fmt::format("instance [{}, {}] cannot own a free finest-level anchor", g.t_start, g.t_end));
    }
    owned[i] = 1;
    const double len = g.t_end - g.t_start;
    const double bs = g.t_start - kLoose * len, be = g.t_end + kLoose * len;
    CoarseLevel& c = o.coarse.levels[0];
    RefinedLevel& r = o.refined.levels[0];
    c.distances[2 * i] = s - bs;
    c.distances[2 * i + 1] = be - s;
    const Segment target = jittered(g, noise.jitter, rng);
    std::tie(r.offsets[2 * i], r.offsets[2 * i + 1]) = boundary_offsets(bs, be, target.start, target.end);
    c.logits[i * num_classes + g.class_id] = kOn;
    r.logits[i * num_classes + g.class_id] = kOn;
    r.quality[i] = noisy_score(noise.score_noise, rng);
  }
  return o;
}

namespace {

using Json = nlohmann::json;

Json parse_record(const std::string& line, std::size_t record) {
  try {
    Json j = Json::parse(line);
    if (!j.is_object()) throw InputError(fmt::format("record {}: expected a JSON object", record));
    return j;
  } catch (const Json::parse_error& e) {
    throw InputError(fmt::format("record {}: malformed JSON ({})", record, e.what()));
  }
}

double number_field(const Json& j, const char* key, std::size_t record) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw InputError(fmt::format("record {}: field '{}' must be a number", record, key));
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw InputError(fmt::format("record {}: field '{}' must be finite", record, key));
  return v;
}

std::size_t index_field(const Json& j, const char* key, std::size_t record, bool required = true) {
  const auto it = j.find(key);
  if (it == j.end() && !required) return 0;
  if (it == j.end() || !it->is_number_unsigned()) {
    throw InputError(fmt::format("record {}: field '{}' must be a non-negative integer", record, key));
  }
  return it->get<std::size_t>();
}

std::string string_field(const Json& j, const char* key, std::size_t record) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw InputError(fmt::format("record {}: field '{}' must be a string", record, key));
  return it->get<std::string>();
}

template <typename F>
void for_each_record(std::istream& in, F&& f) {
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++record;
    f(parse_record(line, record), record);
  }
}

}  // namespace

void write_gts_jsonl(std::ostream& out, const std::vector<GroundTruthInstance>& gts) {
  for (const auto& g : gts) {
    nlohmann::ordered_json j;
    j["video_id"] = g.video_id;
    j["t_start"] = g.t_start;
    j["t_end"] = g.t_end;
    j["class_id"] = g.class_id;
    out << j.dump() << '\n';
  }
}

void write_predictions_jsonl(std::ostream& out, const std::vector<Prediction>& preds) {
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["video_id"] = p.video_id;
    j["t_start"] = p.det.t_start;
    j["t_end"] = p.det.t_end;
    j["class_id"] = p.det.class_id;
    j["score"] = p.det.score;
    j["level"] = p.det.level;
    j["position"] = p.det.position;
    out << j.dump() << '\n';
  }
}

std::vector<GroundTruthInstance> read_gts_jsonl(std::istream& in) {
  std::vector<GroundTruthInstance> out;
  for_each_record(in, [&](const Json& j, std::size_t r) {
    GroundTruthInstance g{string_field(j, "video_id", r), number_field(j, "t_start", r), number_field(j, "t_end", r),
                          index_field(j, "class_id", r)};
    if (!(g.t_start < g.t_end)) throw InputError(fmt::format("record {}: t_start must be < t_end", r));
    out.push_back(std::move(g));
  });
  return out;
}

std::vector<Prediction> read_predictions_jsonl(std::istream& in) {
  std::vector<Prediction> out;
  for_each_record(in, [&](const Json& j, std::size_t r) {
    Prediction p;
    p.video_id = string_field(j, "video_id", r);
    p.det.t_start = number_field(j, "t_start", r);
    p.det.t_end = number_field(j, "t_end", r);
    p.det.class_id = index_field(j, "class_id", r);
    p.det.score = number_field(j, "score", r);
    p.det.level = index_field(j, "level", r, false);
    p.det.position = index_field(j, "position", r, false);
    if (!(p.det.t_start < p.det.t_end)) throw InputError(fmt::format("record {}: t_start must be < t_end", r));
    if (!(p.det.score >= 0.0 && p.det.score <= 1.0)) throw InputError(fmt::format("record {}: score must lie in [0, 1]", r));
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace stpt
