// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "stpt/error.hpp"

namespace stpt {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::f32 : DType::f64;

std::string to_string(DType d);
DType parse_dtype(const std::string& s);

/// Extent (or stride, padding, ratio) along the time, height and width axes.
struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t volume() const { return t * h * w; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? t : (axis == 1 ? h : w); }
  std::size_t& operator[](std::size_t axis) { return axis == 0 ? t : (axis == 1 ? h : w); }
  bool operator==(const Extent3&) const = default;
};

std::string to_string(const Extent3& e);

struct ClipDims {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;

  std::size_t tokens() const { return t * h * w; }
  std::size_t size() const { return t * h * w * c; }
  Extent3 spatial() const { return {t, h, w}; }
  bool operator==(const ClipDims&) const = default;
};

std::string to_string(const ClipDims& d);

template <typename T>
class Matrix;

/// Dense rank-4 (T, H, W, C) feature volume, row-major, channels last.
template <typename T>
class Clip {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Clip() = default;
  explicit Clip(ClipDims dims, T fill = T{0}) : dims_(check(dims)), data_(dims.size(), fill) {}
  Clip(ClipDims dims, std::vector<T> data) : dims_(check(dims)), data_(std::move(data)) {
    if (data_.size() != dims_.size()) {
      throw ShapeError("clip data length " + std::to_string(data_.size()) + " does not match " +
                       to_string(dims_));
    }
  }

  const ClipDims& dims() const { return dims_; }
  std::size_t channels() const { return dims_.c; }
  std::size_t tokens() const { return dims_.tokens(); }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t t, std::size_t h, std::size_t w, std::size_t c = 0) const {
    return ((t * dims_.h + h) * dims_.w + w) * dims_.c + c;
  }
  T& at(std::size_t t, std::size_t h, std::size_t w, std::size_t c) { return data_[offset(t, h, w, c)]; }
  T at(std::size_t t, std::size_t h, std::size_t w, std::size_t c) const { return data_[offset(t, h, w, c)]; }

  std::span<T> token(std::size_t index) { return {data_.data() + index * dims_.c, dims_.c}; }
  std::span<const T> token(std::size_t index) const { return {data_.data() + index * dims_.c, dims_.c}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// Token matrix view of the volume (tokens x channels); consumes the clip.
  Matrix<T> to_matrix() &&;
  Matrix<T> to_matrix() const&;

  template <typename U>
  Clip<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Clip<U>(dims_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static ClipDims check(ClipDims d) {
    if (d.t == 0 || d.h == 0 || d.w == 0 || d.c == 0) {
      throw ShapeError("clip dims must all be >= 1, got " + to_string(d));
    }
    return d;
  }

  ClipDims dims_{};
  std::vector<T> data_;
};

/// Row-major token matrix.
template <typename T>
class Matrix {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  Clip<T> to_clip(Extent3 spatial) && {
    if (spatial.volume() != rows_) {
      throw ShapeError("cannot reshape " + std::to_string(rows_) + " tokens into " + to_string(spatial));
    }
    return Clip<T>({spatial.t, spatial.h, spatial.w, cols_}, std::move(data_));
  }

  template <typename U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
Matrix<T> Clip<T>::to_matrix() && {
  const std::size_t rows = dims_.tokens();
  return Matrix<T>(rows, dims_.c, std::move(data_));
}

template <typename T>
Matrix<T> Clip<T>::to_matrix() const& {
  return Matrix<T>(dims_.tokens(), dims_.c, data_);
}

}  // namespace stpt
