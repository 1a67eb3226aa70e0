// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stpt/parallel.hpp"
#include "stpt/rng.hpp"

namespace stpt {

// ---------------------------------------------------------------------------
// Weight containers

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out)
    : in_channels(in), out_channels(out), weight(in * out, T{0}), bias(out, T{0}) {
  if (in == 0 || out == 0) throw ConfigError("linear layer needs in/out channels >= 1");
}

template <typename T>
Linear<T> Linear<T>::identity(std::size_t channels) {
  Linear l(channels, channels);
  for (std::size_t i = 0; i < channels; ++i) l.w(i, i) = T{1};
  return l;
}

template <typename T>
Linear<T> Linear<T>::random(std::size_t in, std::size_t out, Rng& rng) {
  Linear l(in, out);
  for (auto& v : l.weight) v = static_cast<T>(rng.truncated_normal(kInitStd));
  return l;
}

template <typename T>
void Linear<T>::validate() const {
  if (weight.size() != in_channels * out_channels || bias.size() != out_channels) {
    throw ShapeError("linear weights inconsistent with " + std::to_string(in_channels) + "->" +
                     std::to_string(out_channels));
  }
}

template <typename T>
Conv3D<T>::Conv3D(std::size_t in, std::size_t out, Extent3 k, Extent3 s, Extent3 p, std::size_t g)
    : kernel(k), stride(s), padding(p), groups(g), in_channels(in), out_channels(out) {
  if (g == 0 || in == 0 || out == 0 || in % g != 0 || out % g != 0) {
    throw ConfigError("conv3d channels " + std::to_string(in) + "->" + std::to_string(out) +
                      " not divisible by groups " + std::to_string(g));
  }
  if (k.volume() == 0 || s.volume() == 0) throw ConfigError("conv3d kernel and stride extents must be >= 1");
  weight.assign(out * (in / g) * k.volume(), T{0});
  bias.assign(out, T{0});
}

template <typename T>
Conv3D<T> Conv3D<T>::random(std::size_t in, std::size_t out, Extent3 k, Extent3 s, Extent3 p, std::size_t g,
                            Rng& rng) {
  Conv3D c(in, out, k, s, p, g);
  for (auto& v : c.weight) v = static_cast<T>(rng.truncated_normal(kInitStd));
  return c;
}

template <typename T>
Conv3D<T> Conv3D<T>::depthwise_identity(std::size_t channels, Extent3 k, Extent3 s, Extent3 p) {
  Conv3D c(channels, channels, k, s, p, channels);
  for (std::size_t ch = 0; ch < channels; ++ch) c.weight[c.weight_index(ch, 0, k.t / 2, k.h / 2, k.w / 2)] = T{1};
  return c;
}

template <typename T>
void Conv3D<T>::validate() const {
  if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv3d channels not divisible by groups");
  }
  if (kernel.volume() == 0 || stride.volume() == 0) throw ConfigError("conv3d extents must be >= 1");
  if (weight.size() != out_channels * in_per_group() * kernel.volume() || bias.size() != out_channels) {
    throw ShapeError("conv3d weight buffer inconsistent with declared geometry");
  }
}

template <typename T>
Extent3 Conv3D<T>::output_extent(Extent3 input) const {
  Extent3 out;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t padded = input[a] + 2 * padding[a];
    if (padded < kernel[a]) {
      throw ConfigError("conv3d kernel " + to_string(kernel) + " larger than padded input " + to_string(input));
    }
    out[a] = (padded - kernel[a]) / stride[a] + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense kernels

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Linear<T>& w) {
  w.validate();
  if (x.cols() != w.in_channels) {
    throw ShapeError("linear: input has " + std::to_string(x.cols()) + " columns, weights expect " +
                     std::to_string(w.in_channels));
  }
  const std::size_t n = x.rows();
  const std::size_t in = w.in_channels;
  const std::size_t out = w.out_channels;

  std::vector<T> wt(in * out);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = w.weight[o * in + i];
  }

  Matrix<T> y(n, out);
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 256;
  const std::size_t row_blocks = (n + kRows - 1) / kRows;
  parallel_for(row_blocks, [&](std::size_t b0, std::size_t b1) {
    std::vector<double> acc(kRows * kCols);
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t r0 = b * kRows;
      const std::size_t rb = std::min(kRows, n - r0);
      for (std::size_t c0 = 0; c0 < out; c0 += kCols) {
        const std::size_t cb = std::min(kCols, out - c0);
        for (std::size_t r = 0; r < rb; ++r) {
          for (std::size_t c = 0; c < cb; ++c) acc[r * kCols + c] = static_cast<double>(w.bias[c0 + c]);
        }
        for (std::size_t i = 0; i < in; ++i) {
          const T* __restrict wrow = wt.data() + i * out + c0;
          for (std::size_t r = 0; r < rb; ++r) {
            const double xv = static_cast<double>(x.at(r0 + r, i));
            double* __restrict a = acc.data() + r * kCols;
            for (std::size_t c = 0; c < cb; ++c) a[c] += xv * static_cast<double>(wrow[c]);
          }
        }
        for (std::size_t r = 0; r < rb; ++r) {
          T* dst = y.row(r0 + r).data() + c0;
          for (std::size_t c = 0; c < cb; ++c) dst[c] = static_cast<T>(acc[r * kCols + c]);
        }
      }
    }
  });
  return y;
}

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, std::span<const T> gamma, std::span<const T> beta, double eps) {
  const std::size_t c = x.cols();
  if (c == 0) throw ShapeError("layer_norm needs at least one channel");
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: gamma/beta length does not match " + std::to_string(c) + " channels");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be > 0");
  Matrix<T> y(x.rows(), c);
  parallel_for(x.rows(), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      auto row = x.row(r);
      double mean = 0.0;
      for (T v : row) mean += static_cast<double>(v);
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (T v : row) {
        const double d = static_cast<double>(v) - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + eps);
      auto dst = y.row(r);
      for (std::size_t k = 0; k < c; ++k) {
        const double z = (static_cast<double>(row[k]) - mean) * inv;
        dst[k] = static_cast<T>(z * static_cast<double>(gamma[k]) + static_cast<double>(beta[k]));
      }
    }
  });
  return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

template <typename T>
void gelu_inplace(std::span<T> x) {
  parallel_for(x.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) x[i] = static_cast<T>(gelu(static_cast<double>(x[i])));
  });
}

template <typename T>
void relu_inplace(std::span<T> x) {
  for (auto& v : x) v = v > T{0} ? v : T{0};
}

template <typename T>
void softmax_rows_inplace(std::span<T> x, std::size_t cols) {
  if (cols == 0) return;
  const std::size_t rows = x.size() / cols;
  std::vector<double> tmp(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x.data() + r * cols;
    double mx = static_cast<double>(row[0]);
    for (std::size_t k = 1; k < cols; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double sum = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      tmp[k] = std::exp(static_cast<double>(row[k]) - mx);
      sum += tmp[k];
    }
    for (std::size_t k = 0; k < cols; ++k) row[k] = static_cast<T>(tmp[k] / sum);
  }
}

template <typename T>
Matrix<T> softmax(const Matrix<T>& x) {
  Matrix<T> y = x;
  softmax_rows_inplace<T>(y.data(), y.cols());
  return y;
}

template <typename T>
void add_inplace(std::span<T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("add: operand sizes differ");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Clip<T> conv3d(const Clip<T>& x, const Conv3D<T>& w) {
  w.validate();
  const ClipDims in = x.dims();
  if (in.c != w.in_channels) {
    throw ShapeError("conv3d: input has " + std::to_string(in.c) + " channels, weights expect " +
                     std::to_string(w.in_channels));
  }
  const Extent3 oe = w.output_extent(in.spatial());
  const ClipDims od{oe.t, oe.h, oe.w, w.out_channels};
  Clip<T> y(od);

  const std::size_t taps = w.kernel.volume();
  const std::size_t cig = w.in_per_group();
  const std::size_t cog = w.out_per_group();
  const std::size_t cout = w.out_channels;
  const bool dw = cig == 1 && cog == 1;

  // Per-tap reordering: [tap][g][ci][co] so the innermost loop is an axpy
  // over output channels.
  std::vector<T> wt(w.weight.size());
  for (std::size_t o = 0; o < cout; ++o) {
    const std::size_t g = o / cog;
    const std::size_t co = o % cog;
    for (std::size_t ci = 0; ci < cig; ++ci) {
      for (std::size_t tap = 0; tap < taps; ++tap) {
        wt[((tap * w.groups + g) * cig + ci) * cog + co] = w.weight[(o * cig + ci) * taps + tap];
      }
    }
  }

  const auto pt = static_cast<std::ptrdiff_t>(w.padding.t);
  const auto ph = static_cast<std::ptrdiff_t>(w.padding.h);
  const auto pw = static_cast<std::ptrdiff_t>(w.padding.w);

  parallel_for(od.t * od.h, [&](std::size_t r0, std::size_t r1) {
    std::vector<double> acc(cout);
    for (std::size_t r = r0; r < r1; ++r) {
      const std::size_t ot = r / od.h;
      const std::size_t oh = r % od.h;
      for (std::size_t ow = 0; ow < od.w; ++ow) {
        for (std::size_t o = 0; o < cout; ++o) acc[o] = static_cast<double>(w.bias[o]);
        for (std::size_t kt = 0; kt < w.kernel.t; ++kt) {
          const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * w.stride.t + kt) - pt;
          if (it < 0 || it >= static_cast<std::ptrdiff_t>(in.t)) continue;
          for (std::size_t kh = 0; kh < w.kernel.h; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * w.stride.h + kh) - ph;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t kw = 0; kw < w.kernel.w; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * w.stride.w + kw) - pw;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
              const std::size_t tap = (kt * w.kernel.h + kh) * w.kernel.w + kw;
              const T* __restrict xin = x.data().data() + x.offset(it, ih, iw);
              const T* __restrict wtap = wt.data() + tap * w.groups * cig * cog;
              double* __restrict a = acc.data();
              if (dw) {
                for (std::size_t c = 0; c < cout; ++c) a[c] += static_cast<double>(xin[c]) * static_cast<double>(wtap[c]);
              } else {
                for (std::size_t g = 0; g < w.groups; ++g) {
                  double* __restrict ag = a + g * cog;
                  for (std::size_t ci = 0; ci < cig; ++ci) {
                    const double xv = static_cast<double>(xin[g * cig + ci]);
                    const T* __restrict wr = wtap + (g * cig + ci) * cog;
                    for (std::size_t co = 0; co < cog; ++co) ag[co] += xv * static_cast<double>(wr[co]);
                  }
                }
              }
            }
          }
        }
        T* dst = y.data().data() + y.offset(ot, oh, ow);
        for (std::size_t o = 0; o < cout; ++o) dst[o] = static_cast<T>(acc[o]);
      }
    }
  });
  return y;
}

#define STPT_INSTANTIATE_OPS(T)                                                                     \
  template struct Linear<T>;                                                                        \
  template struct Conv3D<T>;                                                                        \
  template Matrix<T> linear<T>(const Matrix<T>&, const Linear<T>&);                                 \
  template Matrix<T> layer_norm<T>(const Matrix<T>&, std::span<const T>, std::span<const T>, double); \
  template void gelu_inplace<T>(std::span<T>);                                                      \
  template void relu_inplace<T>(std::span<T>);                                                      \
  template void softmax_rows_inplace<T>(std::span<T>, std::size_t);                                 \
  template Matrix<T> softmax<T>(const Matrix<T>&);                                                  \
  template void add_inplace<T>(std::span<T>, std::span<const T>);                                   \
  template Clip<T> conv3d<T>(const Clip<T>&, const Conv3D<T>&);

STPT_INSTANTIATE_OPS(float)
STPT_INSTANTIATE_OPS(double)

#undef STPT_INSTANTIATE_OPS

}  // namespace stpt
