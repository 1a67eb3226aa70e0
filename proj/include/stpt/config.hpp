// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

#include "stpt/backbone.hpp"
#include "stpt/eval.hpp"
#include "stpt/head.hpp"
#include "stpt/losses.hpp"

namespace stpt {

/// Effective settings of one run. Defaults are the full architecture and the
/// THUMOS profile.
struct RunConfig {
  std::string preset = "base";
  ModelConfig model = ModelConfig::base();
  HeadConfig head;
  std::string profile = "thumos";
  LossConfig loss = LossConfig::thumos();
  EvalConfig eval = EvalConfig::thumos();
  std::string input_path;  // empty: synthesise the input from the seed
  std::string output_dir = "stpt_out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t gradcheck_points = 100;

  void validate() const;
  /// Every setting that can change a result, one `key=value` per line.
  /// Thread count and output directory are excluded.
  std::string canonical() const;
  std::uint64_t hash() const;
};

using ConfigOverrides = std::map<std::string, std::string>;  // "section.key" -> value

/// Parses the sectioned `key = value` format; see configs/README.md.
/// `overrides` replace or add keys as if they were in the file. Errors are
/// ConfigError with `source:line:` prefixes.
RunConfig parse_config(std::istream& in, std::string_view source = "<config>", const ConfigOverrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

}  // namespace stpt
