// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace stpt {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'T', 'P', 'T'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InputError("tensor file truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

std::uint64_t RawTensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void write_tensor(std::ostream& out, const RawTensor& t) {
  if (t.shape.size() > 255) throw ShapeError("tensor rank exceeds 255");
  if (t.element_count() != t.values.size()) throw ShapeError("tensor values do not match shape");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kTensorFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto d : t.shape) put_le<std::uint64_t>(out, d);
  if (t.dtype == DType::f32) {
    for (double v : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  } else {
    for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw InputError("failed to write tensor");
}

RawTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("not an STPT tensor file (bad magic)");
  const auto version = get_le<std::uint16_t>(in);
  if (version != kTensorFormatVersion) {
    throw InputError("unsupported tensor format version " + std::to_string(version));
  }
  const auto code = get_le<std::uint8_t>(in);
  if (code > 1) throw InputError("unknown dtype code " + std::to_string(code));
  RawTensor t;
  t.dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint8_t>(in);
  t.shape.resize(rank);
  for (auto& d : t.shape) d = get_le<std::uint64_t>(in);
  const std::uint64_t n = t.element_count();
  if (n > kMaxElements) throw InputError("tensor too large: " + std::to_string(n) + " elements");
  t.values.resize(n);
  if (t.dtype == DType::f32) {
    for (auto& v : t.values) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  } else {
    for (auto& v : t.values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (!std::isfinite(t.values[i])) throw InputError("tensor element " + std::to_string(i) + " is not finite");
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const RawTensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

RawTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tensor file " + path.string());
  return read_tensor(in);
}

const RawTensor* TensorBundle::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_bundle(const std::filesystem::path& dir, const TensorBundle& bundle) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw InputError("cannot write manifest in " + dir.string());
  for (const auto& [name, tensor] : bundle.entries) {
    if (name.empty() || name.find_first_of(" \t\n/") != std::string::npos) {
      throw ConfigError("invalid tensor name '" + name + "'");
    }
    const std::string file = name + ".stpt";
    save_tensor(dir / file, tensor);
    manifest << name << ' ' << file << '\n';
  }
}

TensorBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw InputError("missing manifest.txt in " + dir.string());
  TensorBundle bundle;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file;
    if (!(ls >> name >> file)) throw InputError("manifest line " + std::to_string(lineno) + " malformed");
    bundle.entries.emplace_back(name, load_tensor(dir / file));
  }
  return bundle;
}

}  // namespace stpt
