// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stpt/tensor.hpp"

namespace stpt {

// Binary layout (all little-endian):
//   "STPT" | u16 version | u8 dtype (0 f32, 1 f64) | u8 rank | rank x u64 dims | scalars
inline constexpr std::uint16_t kTensorFormatVersion = 1;

/// Dtype-tagged tensor of any rank. f32 payloads are held as doubles, which
/// is exact, and narrowed again on write.
struct RawTensor {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::uint64_t element_count() const;
};

void write_tensor(std::ostream& out, const RawTensor& t);
RawTensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor load_tensor(const std::filesystem::path& path);

template <typename T>
RawTensor to_raw(const Clip<T>& clip) {
  const auto& d = clip.dims();
  return {dtype_of<T>, {d.t, d.h, d.w, d.c}, std::vector<double>(clip.data().begin(), clip.data().end())};
}

template <typename T>
RawTensor to_raw(std::span<const T> values, std::vector<std::uint64_t> shape) {
  return {dtype_of<T>, std::move(shape), std::vector<double>(values.begin(), values.end())};
}

/// Rank-4 tensor of the requested dtype -> clip; anything else throws InputError.
template <typename T>
Clip<T> clip_from_raw(const RawTensor& raw) {
  if (raw.dtype != dtype_of<T>) {
    throw InputError("tensor dtype " + to_string(raw.dtype) + " does not match expected " + to_string(dtype_of<T>));
  }
  if (raw.shape.size() != 4) {
    throw InputError("expected a rank-4 (T,H,W,C) tensor, got rank " + std::to_string(raw.shape.size()));
  }
  ClipDims d{raw.shape[0], raw.shape[1], raw.shape[2], raw.shape[3]};
  return Clip<T>(d, std::vector<T>(raw.values.begin(), raw.values.end()));
}

/// Named tensor collection stored as a directory: manifest.txt plus one
/// tensor file per entry. Manifest lines are "<name> <file>".
struct TensorBundle {
  std::vector<std::pair<std::string, RawTensor>> entries;

  const RawTensor* find(const std::string& name) const;
};

void save_bundle(const std::filesystem::path& dir, const TensorBundle& bundle);
TensorBundle load_bundle(const std::filesystem::path& dir);

}  // namespace stpt
