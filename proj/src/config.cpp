// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "stpt/error.hpp"
#include "stpt/rng.hpp"

namespace stpt {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos)));
    if (next == std::string_view::npos) return out;
    pos = next + 1;
  }
}

std::uint64_t to_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::size_t to_size(std::string_view s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(std::string_view s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("expected a finite number, got '" + std::string(s) + "'");
  }
  return v;
}

bool to_bool(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

std::vector<std::size_t> to_sizes(std::string_view s, char sep) {
  std::vector<std::size_t> out;
  for (const auto part : split(s, sep)) out.push_back(to_size(part));
  return out;
}

Extent3 to_extent(std::string_view s) {
  const auto v = to_sizes(s, 'x');
  if (v.size() != 3) throw ConfigError("expected an extent TxHxW, got '" + std::string(s) + "'");
  return {v[0], v[1], v[2]};
}

std::vector<double> to_doubles(std::string_view s) {
  std::vector<double> out;
  for (const auto part : split(s, ',')) out.push_back(to_double(part));
  return out;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

using Handler = std::function<void(RunConfig&, std::string_view)>;

// Keys applied in ascending priority; later priorities see earlier effects.
struct KeySpec {
  int priority;
  Handler apply;
};

void apply_stage_key(RunConfig& c, std::size_t stage, std::string_view field, std::string_view v) {
  StageSpec& s = c.model.stages.at(stage);
  if (field == "channels") {
    s.channels = to_size(v);
  } else if (field == "depth") {
    s.depth = to_size(v);
  } else if (field == "patch") {
    s.patch = to_extent(v);
  } else if (field == "stride") {
    s.stride = to_extent(v);
  } else if (field == "reduction") {
    s.reduction = to_extent(v);
  } else if (field == "windows") {
    s.windows.clear();
    for (const auto w : split(v, ',')) s.windows.push_back(to_extent(w));
  } else if (field == "heads") {
    s.heads = to_size(v);
  } else if (field == "mlp_ratio") {
    s.mlp_ratio = to_double(v);
  } else if (field == "kind") {
    if (v != "L" && v != "G") throw ConfigError("expected L or G");
    s.kind = v == "L" ? BlockKind::local : BlockKind::global;
  } else {
    throw ConfigError("unknown key");
  }
}

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = {
      {"model.preset",
       {0,
        [](RunConfig& c, std::string_view v) {
          if (v == "base") {
            c.model = ModelConfig::base();
          } else if (v == "toy") {
            c.model = ModelConfig::toy();
          } else {
            throw ConfigError("expected base or toy");
          }
          c.preset = std::string(v);
        }}},
      {"detection.profile",
       {0,
        [](RunConfig& c, std::string_view v) {
          c.loss = LossConfig::profile(v);
          c.eval = EvalConfig::profile(v);
          c.profile = std::string(v);
        }}},
      {"model.input",
       {1,
        [](RunConfig& c, std::string_view v) {
          const auto d = to_sizes(v, 'x');
          if (d.size() != 4) throw ConfigError("expected TxHxWxC");
          c.model.input = {d[0], d[1], d[2], d[3]};
        }}},
      {"model.dtype", {1, [](RunConfig& c, std::string_view v) { c.model.dtype = parse_dtype(std::string(v)); }}},
      {"model.cpe", {1, [](RunConfig& c, std::string_view v) { c.model.cpe_enabled = to_bool(v); }}},
      {"model.variant", {2, [](RunConfig& c, std::string_view v) { c.model.apply_variant(v); }}},
      {"model.temporal_windows", {3, [](RunConfig& c, std::string_view v) { c.model.set_temporal_windows(to_sizes(v, ',')); }}},
      {"detection.num_classes", {1, [](RunConfig& c, std::string_view v) { c.head.num_classes = to_size(v); }}},
      {"detection.channels", {1, [](RunConfig& c, std::string_view v) { c.head.channels = to_size(v); }}},
      {"detection.levels", {1, [](RunConfig& c, std::string_view v) { c.head.levels = to_size(v); }}},
      {"detection.tower_layers", {1, [](RunConfig& c, std::string_view v) { c.head.tower_layers = to_size(v); }}},
      {"detection.tower_kernel", {1, [](RunConfig& c, std::string_view v) { c.head.tower_kernel = to_size(v); }}},
      {"detection.share_tower", {1, [](RunConfig& c, std::string_view v) { c.head.share_tower = to_bool(v); }}},
      {"detection.fps", {1, [](RunConfig& c, std::string_view v) { c.head.fps = to_double(v); }}},
      {"detection.cls_weight", {1, [](RunConfig& c, std::string_view v) { c.loss.cls_weight = to_double(v); }}},
      {"detection.loc_weight", {1, [](RunConfig& c, std::string_view v) { c.loss.loc_weight = to_double(v); }}},
      {"detection.quality_weight", {1, [](RunConfig& c, std::string_view v) { c.loss.quality_weight = to_double(v); }}},
      {"detection.focal_gamma", {1, [](RunConfig& c, std::string_view v) { c.loss.gamma = to_double(v); }}},
      {"detection.focal_alpha", {1, [](RunConfig& c, std::string_view v) { c.loss.alpha = to_double(v); }}},
      {"detection.thresholds", {1, [](RunConfig& c, std::string_view v) { c.eval.thresholds = to_doubles(v); }}},
      {"detection.display", {2, [](RunConfig& c, std::string_view v) { c.eval.display = to_doubles(v); }}},
      {"detection.nms_threshold", {1, [](RunConfig& c, std::string_view v) { c.eval.nms_threshold = to_double(v); }}},
      {"detection.nms_sigma", {1, [](RunConfig& c, std::string_view v) { c.eval.nms_sigma = to_double(v); }}},
      {"detection.nms_mode",
       {1,
        [](RunConfig& c, std::string_view v) {
          if (v != "linear" && v != "gaussian") throw ConfigError("expected linear or gaussian");
          c.eval.nms_mode = v == "linear" ? SoftNmsMode::linear : SoftNmsMode::gaussian;
        }}},
      {"detection.top_k", {1, [](RunConfig& c, std::string_view v) { c.eval.top_k = to_size(v); }}},
      {"io.input", {1, [](RunConfig& c, std::string_view v) { c.input_path = std::string(v); }}},
      {"io.output_dir", {1, [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); }}},
      {"run.seed", {1, [](RunConfig& c, std::string_view v) { c.seed = to_u64(v); }}},
      {"run.threads", {1, [](RunConfig& c, std::string_view v) { c.threads = to_size(v); }}},
      {"run.gradcheck_points", {1, [](RunConfig& c, std::string_view v) { c.gradcheck_points = to_size(v); }}},
  };
  return table;
}

std::string location(const std::string& src, std::size_t line) {
  return line == 0 ? std::string("command line") : fmt::format("{}:{}", src, line);
}

std::string ext(Extent3 e) { return fmt::format("{}x{}x{}", e.t, e.h, e.w); }

}  // namespace

void RunConfig::validate() const {
  model.validate();
  head.validate();
  loss.validate();
  eval.validate();
  if (threads == 0) throw ConfigError("run.threads must be >= 1");
  if (gradcheck_points == 0) throw ConfigError("run.gradcheck_points must be >= 1");
  if (model.stages.size() < 2) throw ConfigError("the detection head needs at least two stages");
}

std::string RunConfig::canonical() const {
  std::string s;
  const auto kv = [&](std::string_view k, const auto& v) { s += fmt::format("{}={}\n", k, v); };
  kv("model.input", fmt::format("{}x{}x{}x{}", model.input.t, model.input.h, model.input.w, model.input.c));
  kv("model.dtype", to_string(model.dtype));
  kv("model.cpe", model.cpe_enabled);
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    const StageSpec& st = model.stages[i];
    const std::string p = fmt::format("model.stage{}.", i + 1);
    kv(p + "kind", to_char(st.kind));
    kv(p + "channels", st.channels);
    kv(p + "depth", st.depth);
    kv(p + "patch", ext(st.patch));
    kv(p + "stride", ext(st.stride));
    kv(p + "reduction", ext(st.reduction));
    std::string w;
    for (const auto& e : st.windows) w += (w.empty() ? "" : ",") + ext(e);
    kv(p + "windows", w);
    kv(p + "heads", model.heads(i));
    kv(p + "mlp_ratio", fmt::format("{:.17g}", st.mlp_ratio));
  }
  kv("detection.num_classes", head.num_classes);
  kv("detection.channels", head.channels);
  kv("detection.levels", head.levels);
  kv("detection.tower_layers", head.tower_layers);
  kv("detection.tower_kernel", head.tower_kernel);
  kv("detection.share_tower", head.share_tower);
  kv("detection.fps", fmt::format("{:.17g}", head.fps));
  kv("detection.cls_weight", fmt::format("{:.17g}", loss.cls_weight));
  kv("detection.loc_weight", fmt::format("{:.17g}", loss.loc_weight));
  kv("detection.quality_weight", fmt::format("{:.17g}", loss.quality_weight));
  kv("detection.focal_gamma", fmt::format("{:.17g}", loss.gamma));
  kv("detection.focal_alpha", fmt::format("{:.17g}", loss.alpha));
  std::string th, disp;
  for (const double t : eval.thresholds) th += (th.empty() ? "" : ",") + fmt::format("{:.17g}", t);
  for (const double t : eval.display) disp += (disp.empty() ? "" : ",") + fmt::format("{:.17g}", t);
  kv("detection.thresholds", th);
  kv("detection.display", disp);
  kv("detection.nms_mode", eval.nms_mode == SoftNmsMode::linear ? "linear" : "gaussian");
  kv("detection.nms_threshold", fmt::format("{:.17g}", eval.nms_threshold));
  kv("detection.nms_sigma", fmt::format("{:.17g}", eval.nms_sigma));
  kv("detection.top_k", eval.top_k);
  kv("io.input", input_path);
  kv("run.seed", seed);
  kv("run.gradcheck_points", gradcheck_points);
  return s;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }

RunConfig parse_config(std::istream& in, std::string_view source, const ConfigOverrides& overrides) {
  const std::string src(source);
  std::map<std::string, Entry> entries;
  std::string section;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = fmt::format("{}:{}: ", src, line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "model" && section != "detection" && section != "io" && section != "run") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!entries.emplace(key, Entry{value, line_no}).second) throw ConfigError(where + "duplicate key '" + key + "'");
  }

  for (const auto& [key, value] : overrides) entries[key] = Entry{value, 0};

  std::vector<std::tuple<int, std::size_t, std::string>> order;
  for (const auto& [key, e] : entries) {
    int priority = 1;
    const auto it = key_table().find(key);
    if (it != key_table().end()) {
      priority = it->second.priority;
    } else if (key.rfind("model.stage", 0) != 0) {
      throw ConfigError(fmt::format("{}: unknown key '{}'", location(src, e.line), key));
    }
    order.emplace_back(priority, e.line, key);
  }
  std::sort(order.begin(), order.end());

  RunConfig cfg;
  for (const auto& [priority, line, key] : order) {
    const Entry& e = entries.at(key);
    try {
      if (const auto it = key_table().find(key); it != key_table().end()) {
        it->second.apply(cfg, e.value);
      } else {
        const std::string rest = key.substr(std::string("model.stage").size());
        const auto dot = rest.find('.');
        std::size_t stage = 0;
        try {
          stage = to_size(std::string_view(rest).substr(0, dot));
        } catch (const ConfigError&) {
          throw ConfigError("unknown key");
        }
        if (dot == std::string::npos || stage == 0 || stage > cfg.model.stages.size()) throw ConfigError("unknown key");
        apply_stage_key(cfg, stage - 1, std::string_view(rest).substr(dot + 1), e.value);
      }
    } catch (const ConfigError& err) {
      throw ConfigError(fmt::format("{}: {}: {}", location(src, e.line), key, err.what()));
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(src + ": " + err.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string(), overrides);
}

}  // namespace stpt
