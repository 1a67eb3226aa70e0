// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stpt/tensor.hpp"

namespace stpt {

class Rng;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

/// y = x W^T + b with W stored out x in.
template <typename T>
struct Linear {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<T> weight;  // out x in
  std::vector<T> bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  static Linear identity(std::size_t channels);
  static Linear random(std::size_t in, std::size_t out, Rng& rng);

  T& w(std::size_t o, std::size_t i) { return weight[o * in_channels + i]; }
  T w(std::size_t o, std::size_t i) const { return weight[o * in_channels + i]; }

  void validate() const;

  template <typename U>
  Linear<U> cast() const {
    Linear<U> out;
    out.in_channels = in_channels;
    out.out_channels = out_channels;
    out.weight.assign(weight.begin(), weight.end());
    out.bias.assign(bias.begin(), bias.end());
    return out;
  }
};

template <typename T>
struct LayerNormWeights {
  std::vector<T> gamma;
  std::vector<T> beta;

  LayerNormWeights() = default;
  explicit LayerNormWeights(std::size_t channels) : gamma(channels, T{1}), beta(channels, T{0}) {}

  template <typename U>
  LayerNormWeights<U> cast() const {
    LayerNormWeights<U> out;
    out.gamma.assign(gamma.begin(), gamma.end());
    out.beta.assign(beta.begin(), beta.end());
    return out;
  }
};

/// Zero-padded, strided, grouped 3D cross-correlation.
/// Weight layout: [out][in / groups][k_t][k_h][k_w].
template <typename T>
struct Conv3D {
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding{0, 0, 0};
  std::size_t groups = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  Conv3D() = default;
  Conv3D(std::size_t in, std::size_t out, Extent3 kernel, Extent3 stride, Extent3 padding, std::size_t groups = 1);

  static Conv3D random(std::size_t in, std::size_t out, Extent3 kernel, Extent3 stride, Extent3 padding,
                       std::size_t groups, Rng& rng);
  /// Depth-wise kernel whose centre tap is 1: the identity map at stride 1.
  static Conv3D depthwise_identity(std::size_t channels, Extent3 kernel, Extent3 stride, Extent3 padding);

  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  std::size_t weight_index(std::size_t o, std::size_t i, std::size_t kt, std::size_t kh, std::size_t kw) const {
    return (((o * in_per_group() + i) * kernel.t + kt) * kernel.h + kh) * kernel.w + kw;
  }
  bool depthwise() const { return groups == in_channels && groups == out_channels; }

  void validate() const;
  /// Output extents by the floor formula; throws ConfigError on zero-size output.
  Extent3 output_extent(Extent3 input) const;

  template <typename U>
  Conv3D<U> cast() const {
    Conv3D<U> out;
    out.kernel = kernel;
    out.stride = stride;
    out.padding = padding;
    out.groups = groups;
    out.in_channels = in_channels;
    out.out_channels = out_channels;
    out.weight.assign(weight.begin(), weight.end());
    out.bias.assign(bias.begin(), bias.end());
    return out;
  }
};

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Linear<T>& w);

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, std::span<const T> gamma, std::span<const T> beta,
                     double eps = kLayerNormEps);

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const LayerNormWeights<T>& w, double eps = kLayerNormEps) {
  return layer_norm<T>(x, w.gamma, w.beta, eps);
}

/// x * Phi(x), exact erf form.
double gelu(double x);

template <typename T>
void gelu_inplace(std::span<T> x);

template <typename T>
void relu_inplace(std::span<T> x);

/// Row-wise max-subtracted softmax over a row-major buffer with `cols` columns.
template <typename T>
void softmax_rows_inplace(std::span<T> x, std::size_t cols);

template <typename T>
Matrix<T> softmax(const Matrix<T>& x);

template <typename T>
Clip<T> conv3d(const Clip<T>& x, const Conv3D<T>& w);

/// Adds `b` into `a` elementwise.
template <typename T>
void add_inplace(std::span<T> a, std::span<const T> b);

}  // namespace stpt
