// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/attention.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "stpt/parallel.hpp"
#include "stpt/rng.hpp"

namespace stpt {

void WindowSpec::validate() const {
  if (extent.t == 0 || extent.h == 0 || extent.w == 0) {
    throw ConfigError("window extents must be >= 1, got " + to_string(extent));
  }
}

Extent3 effective_window(const WindowSpec& w, Extent3 map) {
  w.validate();
  return {std::min(w.extent.t, map.t), std::min(w.extent.h, map.h), std::min(w.extent.w, map.w)};
}

WindowGrid make_window_grid(ClipDims dims, const WindowSpec& w) {
  WindowGrid g;
  g.original = dims;
  g.window = effective_window(w, dims.spatial());
  for (std::size_t a = 0; a < 3; ++a) g.counts[a] = (dims.spatial()[a] + g.window[a] - 1) / g.window[a];
  return g;
}

template <typename T>
WindowBatch<T> partition_windows(const Clip<T>& x, const WindowSpec& w) {
  WindowBatch<T> b;
  b.grid = make_window_grid(x.dims(), w);
  const auto& g = b.grid;
  const std::size_t c = x.channels();
  b.data.assign(g.num_windows() * g.tokens_per_window() * c, T{0});
  std::size_t win = 0;
  for (std::size_t wt = 0; wt < g.counts.t; ++wt) {
    for (std::size_t wh = 0; wh < g.counts.h; ++wh) {
      for (std::size_t ww = 0; ww < g.counts.w; ++ww, ++win) {
        T* dst = b.window(win).data();
        for (std::size_t lt = 0; lt < g.window.t; ++lt) {
          const std::size_t t = wt * g.window.t + lt;
          for (std::size_t lh = 0; lh < g.window.h; ++lh) {
            const std::size_t h = wh * g.window.h + lh;
            for (std::size_t lw = 0; lw < g.window.w; ++lw, dst += c) {
              const std::size_t ww_ = ww * g.window.w + lw;
              if (t >= x.dims().t || h >= x.dims().h || ww_ >= x.dims().w) continue;
              auto src = x.token(x.offset(t, h, ww_) / c);
              std::copy(src.begin(), src.end(), dst);
            }
          }
        }
      }
    }
  }
  return b;
}

template <typename T>
Clip<T> merge_windows(const WindowBatch<T>& windows, ClipDims original, const WindowSpec& w) {
  const WindowGrid g = make_window_grid(original, w);
  if (!(g.original == windows.grid.original) || !(g.window == windows.grid.window) ||
      windows.data.size() != g.num_windows() * g.tokens_per_window() * original.c) {
    throw ShapeError("merge_windows: window batch does not match dims " + to_string(original) + " window " +
                     to_string(w.extent));
  }
  Clip<T> out(original);
  const std::size_t c = original.c;
  std::size_t win = 0;
  for (std::size_t wt = 0; wt < g.counts.t; ++wt) {
    for (std::size_t wh = 0; wh < g.counts.h; ++wh) {
      for (std::size_t ww = 0; ww < g.counts.w; ++ww, ++win) {
        const T* src = windows.window(win).data();
        for (std::size_t lt = 0; lt < g.window.t; ++lt) {
          const std::size_t t = wt * g.window.t + lt;
          for (std::size_t lh = 0; lh < g.window.h; ++lh) {
            const std::size_t h = wh * g.window.h + lh;
            for (std::size_t lw = 0; lw < g.window.w; ++lw, src += c) {
              const std::size_t x = ww * g.window.w + lw;
              if (t >= original.t || h >= original.h || x >= original.w) continue;
              std::copy(src, src + c, out.data().data() + out.offset(t, h, x));
            }
          }
        }
      }
    }
  }
  return out;
}

AxisRange kv_range(std::size_t window_index, std::size_t extent, std::size_t ratio, std::size_t reduced_len) {
  const std::size_t lo = window_index * extent / ratio;
  const std::size_t hi_cell = ((window_index + 1) * extent + ratio - 1) / ratio;
  AxisRange r{lo, std::min(reduced_len, std::max(lo + 1, hi_cell))};
  if (r.begin >= r.end) throw ConfigError("window has an empty reduced key/value range");
  return r;
}

Extent3 reduced_extent(Extent3 map, Extent3 ratios) {
  return {(map.t + ratios.t - 1) / ratios.t, (map.h + ratios.h - 1) / ratios.h, (map.w + ratios.w - 1) / ratios.w};
}

template <typename T>
Conv3D<T> ReductionSpec<T>::make_operator(std::size_t channels, Extent3 ratios) {
  return Conv3D<T>(channels, channels, {3, 3, 3}, ratios, {1, 1, 1}, channels);
}

template <typename T>
ReductionSpec<T> ReductionSpec<T>::random(std::size_t channels, Extent3 ratios, Rng& rng) {
  Rng rk = rng.split("key");
  Rng rv = rng.split("value");
  return {ratios, Conv3D<T>::random(channels, channels, {3, 3, 3}, ratios, {1, 1, 1}, channels, rk),
          Conv3D<T>::random(channels, channels, {3, 3, 3}, ratios, {1, 1, 1}, channels, rv)};
}

template <typename T>
ReductionSpec<T> ReductionSpec<T>::identity(std::size_t channels, Extent3 ratios) {
  return {ratios, Conv3D<T>::depthwise_identity(channels, {3, 3, 3}, ratios, {1, 1, 1}),
          Conv3D<T>::depthwise_identity(channels, {3, 3, 3}, ratios, {1, 1, 1})};
}

template <typename T>
void ReductionSpec<T>::validate(std::size_t channels) const {
  if (ratios.t == 0 || ratios.h == 0 || ratios.w == 0) throw ConfigError("reduction ratios must be >= 1");
  for (const Conv3D<T>* op : {&key, &value}) {
    op->validate();
    if (!op->depthwise() || op->in_channels != channels || op->stride != ratios) {
      throw ConfigError("reduction operator must be depth-wise over " + std::to_string(channels) +
                        " channels with stride " + to_string(ratios));
    }
  }
}

template <typename T>
Clip<T> reduce_kv(const Clip<T>& x, const ReductionSpec<T>& r, KvRole role) {
  r.validate(x.channels());
  return conv3d(x, role == KvRole::key ? r.key : r.value);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::random(std::size_t channels, std::size_t heads, AttentionKind kind,
                                              WindowSpec window, Extent3 ratios, Rng& rng) {
  AttentionParams p;
  p.channels = channels;
  p.heads = heads;
  p.kind = kind;
  p.window = window;
  Rng rq = rng.split("query"), rk = rng.split("key"), rv = rng.split("value"), rp = rng.split("proj");
  Rng rr = rng.split("reduction");
  p.query = Linear<T>::random(channels, channels, rq);
  p.key = Linear<T>::random(channels, channels, rk);
  p.value = Linear<T>::random(channels, channels, rv);
  p.proj = Linear<T>::random(channels, channels, rp);
  p.reduction = ReductionSpec<T>::random(channels, ratios, rr);
  p.validate();
  return p;
}

template <typename T>
double AttentionParams<T>::scale() const {
  return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

template <typename T>
void AttentionParams<T>::validate() const {
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw ConfigError("attention channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  for (const Linear<T>* l : {&query, &key, &value, &proj}) {
    l->validate();
    if (l->in_channels != channels || l->out_channels != channels) {
      throw ShapeError("attention projections must be " + std::to_string(channels) + "->" + std::to_string(channels));
    }
  }
  reduction.validate(channels);
  if (kind == AttentionKind::local) window.validate();
}

namespace {

class StatsSink {
 public:
  explicit StatsSink(AttentionStats* out) : out_(out) {}
  bool enabled() const { return out_ != nullptr; }
  void merge(double err, std::size_t rows) {
    std::lock_guard lock(mu_);
    out_->max_row_sum_error = std::max(out_->max_row_sum_error, err);
    out_->rows += rows;
  }

 private:
  AttentionStats* out_;
  std::mutex mu_;
};

// Multi-head scaled dot-product attention of nq query rows against nk
// key/value rows, all with row stride d.
template <typename T>
void attend(const T* q, std::size_t nq, const T* k, const T* v, std::size_t nk, std::size_t d, std::size_t heads,
            double scale, T* out, double* max_err) {
  const std::size_t dh = d / heads;
  std::vector<double> scores(nk), acc(dh), qs(dh);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qi = q + i * d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) qs[c] = static_cast<double>(qi[c]) * scale;
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < nk; ++j) {
        const T* kj = k + j * d + h * dh;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qs[c] * static_cast<double>(kj[c]);
        scores[j] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      double row_sum = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        const double pj = scores[j] / sum;
        row_sum += pj;
        const T* vj = v + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) acc[c] += pj * static_cast<double>(vj[c]);
      }
      if (max_err != nullptr) *max_err = std::max(*max_err, std::abs(row_sum - 1.0));
      T* oi = out + i * d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) oi[c] = static_cast<T>(acc[c]);
    }
  }
}

template <typename T>
struct Projected {
  Clip<T> q;
  Clip<T> k_reduced;
  Clip<T> v_reduced;
};

template <typename T>
Projected<T> project(const Clip<T>& x, const AttentionParams<T>& p) {
  p.validate();
  if (x.channels() != p.channels) {
    throw ShapeError("attention input has " + std::to_string(x.channels()) + " channels, params expect " +
                     std::to_string(p.channels));
  }
  const Extent3 sp = x.dims().spatial();
  const Matrix<T> tokens = x.to_matrix();
  Clip<T> q = linear(tokens, p.query).to_clip(sp);
  Clip<T> k = linear(tokens, p.key).to_clip(sp);
  Clip<T> v = linear(tokens, p.value).to_clip(sp);
  return {std::move(q), reduce_kv(k, p.reduction, KvRole::key), reduce_kv(v, p.reduction, KvRole::value)};
}

template <typename T>
Clip<T> output_projection(Clip<T> y, const AttentionParams<T>& p) {
  const Extent3 sp = y.dims().spatial();
  return linear(std::move(y).to_matrix(), p.proj).to_clip(sp);
}

}  // namespace

template <typename T>
Clip<T> gsta_forward(const Clip<T>& x, const AttentionParams<T>& p, AttentionStats* stats) {
  if (p.kind != AttentionKind::global) throw ConfigError("gsta_forward requires global attention params");
  Projected<T> pr = project(x, p);
  const std::size_t d = p.channels;
  const std::size_t nq = pr.q.tokens();
  const std::size_t nk = pr.k_reduced.tokens();
  Clip<T> y(x.dims());
  StatsSink sink(stats);
  parallel_for(nq, [&](std::size_t b, std::size_t e) {
    double err = 0.0;
    attend(pr.q.data().data() + b * d, e - b, pr.k_reduced.data().data(), pr.v_reduced.data().data(), nk, d, p.heads,
           p.scale(), y.data().data() + b * d, sink.enabled() ? &err : nullptr);
    if (sink.enabled()) sink.merge(err, (e - b) * p.heads);
  });
  return output_projection(std::move(y), p);
}

template <typename T>
Clip<T> lsta_forward(const Clip<T>& x, const AttentionParams<T>& p, AttentionStats* stats) {
  if (p.kind != AttentionKind::local) throw ConfigError("lsta_forward requires local attention params");
  Projected<T> pr = project(x, p);
  const std::size_t d = p.channels;
  const WindowBatch<T> qw = partition_windows(pr.q, p.window);
  const WindowGrid& g = qw.grid;
  const Extent3 rmap = pr.k_reduced.dims().spatial();
  const std::size_t per_window = g.tokens_per_window();

  WindowBatch<T> out{g, std::vector<T>(qw.data.size(), T{0})};
  StatsSink sink(stats);
  parallel_for(g.num_windows(), [&](std::size_t b, std::size_t e) {
    std::vector<T> kbuf, vbuf;
    double err = 0.0;
    for (std::size_t win = b; win < e; ++win) {
      const std::size_t wt = win / (g.counts.h * g.counts.w);
      const std::size_t wh = (win / g.counts.w) % g.counts.h;
      const std::size_t ww = win % g.counts.w;
      const AxisRange rt = kv_range(wt, g.window.t, p.reduction.ratios.t, rmap.t);
      const AxisRange rh = kv_range(wh, g.window.h, p.reduction.ratios.h, rmap.h);
      const AxisRange rw = kv_range(ww, g.window.w, p.reduction.ratios.w, rmap.w);
      const std::size_t nk = rt.size() * rh.size() * rw.size();
      kbuf.resize(nk * d);
      vbuf.resize(nk * d);
      std::size_t j = 0;
      for (std::size_t t = rt.begin; t < rt.end; ++t) {
        for (std::size_t h = rh.begin; h < rh.end; ++h) {
          for (std::size_t w = rw.begin; w < rw.end; ++w, ++j) {
            const std::size_t off = pr.k_reduced.offset(t, h, w);
            std::copy_n(pr.k_reduced.data().data() + off, d, kbuf.data() + j * d);
            std::copy_n(pr.v_reduced.data().data() + off, d, vbuf.data() + j * d);
          }
        }
      }
      attend(qw.window(win).data(), per_window, kbuf.data(), vbuf.data(), nk, d, p.heads, p.scale(),
             out.window(win).data(), sink.enabled() ? &err : nullptr);
    }
    if (sink.enabled()) sink.merge(err, (e - b) * per_window * p.heads);
  });
  return output_projection(merge_windows(out, x.dims(), p.window), p);
}

#define STPT_INSTANTIATE_ATTENTION(T)                                                            \
  template struct ReductionSpec<T>;                                                              \
  template struct AttentionParams<T>;                                                            \
  template WindowBatch<T> partition_windows<T>(const Clip<T>&, const WindowSpec&);               \
  template Clip<T> merge_windows<T>(const WindowBatch<T>&, ClipDims, const WindowSpec&);         \
  template Clip<T> reduce_kv<T>(const Clip<T>&, const ReductionSpec<T>&, KvRole);                \
  template Clip<T> lsta_forward<T>(const Clip<T>&, const AttentionParams<T>&, AttentionStats*); \
  template Clip<T> gsta_forward<T>(const Clip<T>&, const AttentionParams<T>&, AttentionStats*);

STPT_INSTANTIATE_ATTENTION(float)
STPT_INSTANTIATE_ATTENTION(double)

#undef STPT_INSTANTIATE_ATTENTION

}  // namespace stpt
