// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/head.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "stpt/error.hpp"
#include "stpt/rng.hpp"

namespace stpt {

void HeadConfig::validate() const {
  if (channels == 0) throw ConfigError("head.channels must be >= 1");
  if (levels < 2) throw ConfigError("head.levels must be >= 2");
  if (num_classes == 0) throw ConfigError("head.num_classes must be >= 1");
  if (tower_kernel == 0 || tower_kernel % 2 == 0) throw ConfigError("head.tower_kernel must be odd");
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("head.fps must be > 0");
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

template <typename T>
Matrix<T> conv1d(const Matrix<T>& x, const Conv3D<T>& w) {
  if (w.kernel.h != 1 || w.kernel.w != 1) throw ConfigError("1D convolution needs a (k, 1, 1) kernel");
  Clip<T> c = Matrix<T>(x).to_clip({x.rows(), 1, 1});
  return conv3d(c, w).to_matrix();
}

template <typename T>
Conv3D<T> conv1d_weights(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng) {
  return Conv3D<T>::random(in, out, {kernel, 1, 1}, {stride, 1, 1}, {kernel / 2, 0, 0}, 1, rng);
}

template <typename T>
std::size_t FeaturePyramid<T>::anchors() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.rows();
  return n;
}

template <typename T>
double FeaturePyramid<T>::clip_seconds() const {
  return static_cast<double>(levels.at(0).rows() * frame_stride.at(0)) / fps;
}

template <typename T>
double FeaturePyramid<T>::anchor_time(std::size_t m, std::size_t i) const {
  return (static_cast<double>(i) + 0.5) * static_cast<double>(frame_stride.at(m)) / fps;
}

template <typename T>
PyramidWeights<T> PyramidWeights<T>::init(const HeadConfig& cfg, ClipDims a, ClipDims b, Rng& rng) {
  cfg.validate();
  PyramidWeights w;
  Rng ra = rng.split("collapse_a"), rb = rng.split("collapse_b");
  w.collapse_a = Conv3D<T>::random(a.c, cfg.channels, {1, a.h, a.w}, {1, 1, 1}, {0, 0, 0}, 1, ra);
  w.collapse_b = Conv3D<T>::random(b.c, cfg.channels, {1, b.h, b.w}, {1, 1, 1}, {0, 0, 0}, 1, rb);
  for (std::size_t m = 2; m < cfg.levels; ++m) {
    Rng rd = rng.split("downsample" + std::to_string(m));
    w.downsample.push_back(conv1d_weights<T>(cfg.channels, cfg.channels, 3, 2, rd));
  }
  return w;
}

template <typename T>
TowerWeights<T> TowerWeights<T>::init(const HeadConfig& cfg, Rng& rng) {
  TowerWeights w;
  const std::size_t c = cfg.channels, k = cfg.tower_kernel;
  for (std::size_t l = 0; l < cfg.tower_layers; ++l) {
    Rng rc = rng.split("cls" + std::to_string(l)), rl = rng.split("loc" + std::to_string(l));
    w.cls_layers.push_back(conv1d_weights<T>(c, c, k, 1, rc));
    w.loc_layers.push_back(conv1d_weights<T>(c, c, k, 1, rl));
  }
  Rng rc = rng.split("cls_out"), rl = rng.split("loc_out");
  w.cls_out = conv1d_weights<T>(c, cfg.num_classes, k, 1, rc);
  w.loc_out = conv1d_weights<T>(c, 2, k, 1, rl);
  return w;
}

template <typename T>
RefineWeights<T> RefineWeights<T>::init(const HeadConfig& cfg, Rng& rng) {
  Rng rh = rng.split("hidden"), ro = rng.split("out");
  return {Linear<T>::random(6 * cfg.channels, cfg.channels, rh), Linear<T>::random(cfg.channels, 3 + cfg.num_classes, ro)};
}

template <typename T>
HeadWeights<T> HeadWeights<T>::init(const HeadConfig& cfg, ClipDims a, ClipDims b, Rng& rng) {
  HeadWeights w;
  Rng rp = rng.split("pyramid");
  w.pyramid = PyramidWeights<T>::init(cfg, a, b, rp);
  const std::size_t n = cfg.share_tower ? 1 : cfg.levels;
  for (std::size_t m = 0; m < n; ++m) {
    Rng rt = cfg.share_tower ? rng.split("tower") : rng.split("tower" + std::to_string(m));
    w.towers.push_back(TowerWeights<T>::init(cfg, rt));
  }
  Rng rr = rng.split("refine");
  w.refine = RefineWeights<T>::init(cfg, rr);
  return w;
}

std::size_t CoarsePrediction::anchors() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.length;
  return n;
}

namespace {

template <typename T>
Matrix<T> collapse(const Clip<T>& x, const Conv3D<T>& w, const char* which) {
  const ClipDims d = x.dims();
  if (w.kernel != Extent3{1, d.h, d.w} || w.padding != Extent3{0, 0, 0} || w.in_channels != d.c) {
    throw ConfigError(std::string("pyramid collapse kernel for ") + which + " cannot reduce " + to_string(d) +
                      " to spatial extent 1");
  }
  Clip<T> y = conv3d(x, w);
  relu_inplace<T>(y.data());
  return std::move(y).to_matrix();
}

template <typename T>
Matrix<T> relu_conv1d(const Matrix<T>& x, const Conv3D<T>& w) {
  Matrix<T> y = conv1d(x, w);
  relu_inplace<T>(y.data());
  return y;
}

template <typename T>
void sample_into(const Matrix<T>& level, double pos, double* dst) {
  const std::size_t len = level.rows();
  pos = std::clamp(pos, 0.0, static_cast<double>(len - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(pos));
  const std::size_t i1 = std::min(i0 + 1, len - 1);
  const double f = pos - static_cast<double>(i0);
  const auto a = level.row(i0);
  const auto b = level.row(i1);
  for (std::size_t c = 0; c < level.cols(); ++c) {
    dst[c] = (1.0 - f) * static_cast<double>(a[c]) + f * static_cast<double>(b[c]);
  }
}

}  // namespace

template <typename T>
FeaturePyramid<T> build_pyramid(const Clip<T>& a, const Clip<T>& b, const PyramidWeights<T>& w,
                                const HeadConfig& cfg, std::size_t stride_a, std::size_t stride_b) {
  cfg.validate();
  if (w.downsample.size() + 2 != cfg.levels) throw ConfigError("pyramid weights do not match head.levels");
  if (b.dims().t != (a.dims().t + 1) / 2) {
    throw ShapeError("pyramid inputs must halve in length: " + to_string(a.dims()) + " then " + to_string(b.dims()));
  }
  FeaturePyramid<T> p;
  p.fps = cfg.fps;
  p.levels.push_back(collapse(a, w.collapse_a, "the earlier stage"));
  p.levels.push_back(collapse(b, w.collapse_b, "the later stage"));
  p.frame_stride = {stride_a, stride_b};
  for (const auto& d : w.downsample) {
    p.levels.push_back(relu_conv1d(p.levels.back(), d));
    p.frame_stride.push_back(p.frame_stride.back() * 2);
  }
  return p;
}

template <typename T>
CoarsePrediction predict_coarse(const FeaturePyramid<T>& p, const HeadWeights<T>& w, const HeadConfig& cfg) {
  CoarsePrediction out;
  out.num_classes = cfg.num_classes;
  for (std::size_t m = 0; m < p.num_levels(); ++m) {
    const TowerWeights<T>& tw = w.tower(m);
    Matrix<T> cls = p.levels[m];
    for (const auto& l : tw.cls_layers) cls = relu_conv1d(cls, l);
    Matrix<T> loc = p.levels[m];
    for (const auto& l : tw.loc_layers) loc = relu_conv1d(loc, l);
    const Matrix<T> logits = conv1d(cls, tw.cls_out);
    const Matrix<T> raw = conv1d(loc, tw.loc_out);
    CoarseLevel lvl;
    lvl.length = p.levels[m].rows();
    lvl.logits.assign(logits.data().begin(), logits.data().end());
    const double unit = static_cast<double>(p.frame_stride[m]) / p.fps;
    lvl.distances.resize(raw.data().size());
    for (std::size_t k = 0; k < raw.data().size(); ++k) {
      lvl.distances[k] = softplus(static_cast<double>(raw.data()[k])) * unit;
    }
    out.levels.push_back(std::move(lvl));
  }
  return out;
}

template <typename T>
std::pair<double, double> coarse_segment(const FeaturePyramid<T>& p, const CoarsePrediction& c, std::size_t m,
                                         std::size_t i) {
  const double s = p.anchor_time(m, i);
  const auto& d = c.levels.at(m).distances;
  return {s - d[2 * i], s + d[2 * i + 1]};
}

template <typename T>
RefinedPrediction refine(const FeaturePyramid<T>& p, const CoarsePrediction& coarse, const RefineWeights<T>& w,
                         const HeadConfig& cfg) {
  if (coarse.levels.size() != p.num_levels()) throw ShapeError("coarse prediction does not match the pyramid");
  const std::size_t c = cfg.channels, k = cfg.num_classes;
  const double clip_end = p.clip_seconds();
  RefinedPrediction out;
  out.num_classes = k;
  for (std::size_t m = 0; m < p.num_levels(); ++m) {
    const Matrix<T>& level = p.levels[m];
    const std::size_t len = level.rows();
    const double per_second = p.fps / static_cast<double>(p.frame_stride[m]);
    std::vector<double> feats(len * 6 * c);
    RefinedLevel r;
    r.clamped.assign(len, 0);
    for (std::size_t i = 0; i < len; ++i) {
      const auto [ts, te] = coarse_segment(p, coarse, m, i);
      r.clamped[i] = (ts < 0.0 || te > clip_end) ? 1 : 0;
      const double bounds[2] = {ts, te};
      for (std::size_t side = 0; side < 2; ++side) {
        const double pos = bounds[side] * per_second - 0.5;
        for (int off = -1; off <= 1; ++off) {
          sample_into(level, pos + off, feats.data() + (i * 6 + side * 3 + static_cast<std::size_t>(off + 1)) * c);
        }
      }
    }
    Matrix<T> x(len, 6 * c, std::vector<T>(feats.begin(), feats.end()));
    Matrix<T> h = linear(x, w.hidden);
    relu_inplace<T>(h.data());
    const Matrix<T> y = linear(h, w.out);
    r.offsets.resize(2 * len);
    r.logits.resize(len * k);
    r.quality.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      const auto row = y.row(i);
      r.offsets[2 * i] = static_cast<double>(row[0]);
      r.offsets[2 * i + 1] = static_cast<double>(row[1]);
      r.quality[i] = sigmoid(static_cast<double>(row[2]));
      for (std::size_t j = 0; j < k; ++j) r.logits[i * k + j] = static_cast<double>(row[3 + j]);
    }
    out.levels.push_back(std::move(r));
  }
  return out;
}

std::pair<double, double> refine_boundaries(double bs, double be, double ds, double de) {
  const double half = 0.5 * (be - bs);
  return {bs + half * ds, be + half * de};
}

std::pair<double, double> boundary_offsets(double bs, double be, double ts, double te) {
  const double half = 0.5 * (be - bs);
  if (!(half > 0.0)) throw NumericError("coarse segment has non-positive length");
  return {(ts - bs) / half, (te - be) / half};
}

double combine_scores(double pc, double pr, double q) { return 0.5 * (pc + pr) * q; }

std::vector<DetectionCandidate> decode(const CoarsePrediction& coarse, const RefinedPrediction& refined,
                                       const std::vector<std::size_t>& frame_stride, double fps) {
  if (coarse.levels.size() != refined.levels.size() || coarse.levels.size() != frame_stride.size() ||
      coarse.num_classes != refined.num_classes) {
    throw ShapeError("coarse and refined predictions cover different anchor sets");
  }
  const std::size_t k = coarse.num_classes;
  std::vector<DetectionCandidate> out;
  for (std::size_t m = 0; m < coarse.levels.size(); ++m) {
    const CoarseLevel& c = coarse.levels[m];
    const RefinedLevel& r = refined.levels[m];
    for (std::size_t i = 0; i < c.length; ++i) {
      const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(frame_stride[m]) / fps;
      const double bs = s - c.distances[2 * i], be = s + c.distances[2 * i + 1];
      const auto [ts, te] = refine_boundaries(bs, be, r.offsets[2 * i], r.offsets[2 * i + 1]);
      std::size_t best = 0;
      double best_score = -1.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double sc = combine_scores(sigmoid(c.logits[i * k + j]), sigmoid(r.logits[i * k + j]), r.quality[i]);
        if (sc > best_score) {
          best_score = sc;
          best = j;
        }
      }
      if (!(ts < te)) continue;
      out.push_back({ts, te, best, best_score, m, i});
    }
  }
  return out;
}

void write_candidates_jsonl(std::ostream& out, const std::vector<DetectionCandidate>& cands) {
  for (const auto& d : cands) {
    nlohmann::ordered_json j;
    j["t_start"] = d.t_start;
    j["t_end"] = d.t_end;
    j["class_id"] = d.class_id;
    j["score"] = d.score;
    j["level"] = d.level;
    j["position"] = d.position;
    out << j.dump() << '\n';
  }
}

#define STPT_INSTANTIATE_HEAD(T)                                                                                   \
  template Matrix<T> conv1d<T>(const Matrix<T>&, const Conv3D<T>&);                                              \
  template Conv3D<T> conv1d_weights<T>(std::size_t, std::size_t, std::size_t, std::size_t, Rng&);                \
  template struct FeaturePyramid<T>;                                                                             \
  template struct PyramidWeights<T>;                                                                             \
  template struct TowerWeights<T>;                                                                               \
  template struct RefineWeights<T>;                                                                              \
  template struct HeadWeights<T>;                                                                                \
  template FeaturePyramid<T> build_pyramid<T>(const Clip<T>&, const Clip<T>&, const PyramidWeights<T>&,          \
                                              const HeadConfig&, std::size_t, std::size_t);                      \
  template CoarsePrediction predict_coarse<T>(const FeaturePyramid<T>&, const HeadWeights<T>&, const HeadConfig&); \
  template std::pair<double, double> coarse_segment<T>(const FeaturePyramid<T>&, const CoarsePrediction&,        \
                                                       std::size_t, std::size_t);                                \
  template RefinedPrediction refine<T>(const FeaturePyramid<T>&, const CoarsePrediction&, const RefineWeights<T>&, \
                                       const HeadConfig&);

STPT_INSTANTIATE_HEAD(float)
STPT_INSTANTIATE_HEAD(double)

#undef STPT_INSTANTIATE_HEAD

}  // namespace stpt
