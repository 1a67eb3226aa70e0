// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "stpt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "stpt/backbone.hpp"
#include "stpt/cost.hpp"
#include "stpt/error.hpp"
#include "stpt/losses.hpp"
#include "stpt/parallel.hpp"
#include "stpt/rng.hpp"
#include "stpt/tensor_io.hpp"

namespace stpt {

namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> pyramid_strides(const RunConfig& cfg) {
  const std::size_t n = cfg.model.stages.size();
  std::vector<std::size_t> s = {cfg.model.temporal_stride(n - 2), cfg.model.temporal_stride(n - 1)};
  while (s.size() < cfg.head.levels) s.push_back(s.back() * 2);
  return s;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read " + path);
  return f;
}

std::string dims_str(const ClipDims& d) { return fmt::format("({}, {}, {}, {})", d.t, d.h, d.w, d.c); }

template <typename T>
ForwardSummary forward_impl(const RunConfig& cfg, std::ostream& out) {
  const ModelConfig& model = cfg.model;
  const Rng root(cfg.seed);
  Clip<T> x(model.input);
  if (cfg.input_path.empty()) {
    Rng in = root.split("input");
    for (T& v : x.data()) v = static_cast<T>(in.normal());
  } else {
    const RawTensor raw = load_tensor(cfg.input_path);
    std::vector<std::uint64_t> expect = {model.input.t, model.input.h, model.input.w, model.input.c};
    if (raw.shape != expect) {
      throw InputError(fmt::format("input tensor {} does not have the configured shape {}", cfg.input_path,
                                   dims_str(model.input)));
    }
    x = clip_from_raw<T>(raw);
  }
  Rng wr = root.split("backbone");
  const auto weights = BackboneWeights<T>::init(model, wr);
  const BackboneOutput<T> feats = backbone_forward(x, model, weights);
  const std::size_t n = feats.stages.size();
  Rng hr = root.split("head");
  const auto head = HeadWeights<T>::init(cfg.head, feats.stages[n - 2].dims(), feats.stages[n - 1].dims(), hr);
  const auto strides = pyramid_strides(cfg);
  const FeaturePyramid<T> pyr =
      build_pyramid(feats.stages[n - 2], feats.stages[n - 1], head.pyramid, cfg.head, strides[0], strides[1]);
  const CoarsePrediction coarse = predict_coarse(pyr, head, cfg.head);
  const RefinedPrediction refined = refine(pyr, coarse, head.refine, cfg.head);
  const auto dets = decode(coarse, refined, pyr.frame_stride, pyr.fps);

  ForwardSummary sum;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  for (std::size_t s = 0; s < n; ++s) {
    if (!feats.stages[s].all_finite()) throw NumericError(fmt::format("stage {} output is not finite", s + 1));
    const std::string name = fmt::format("stage{}.stpt", s + 1);
    save_tensor(dir / name, to_raw(feats.stages[s]));
    sum.stages.push_back(feats.stages[s].dims());
    sum.files.push_back(name);
  }
  for (const auto& d : dets) {
    if (!std::isfinite(d.t_start) || !std::isfinite(d.t_end) || !std::isfinite(d.score)) {
      throw NumericError("decoded detections are not finite");
    }
  }
  {
    auto f = open_out(dir / "detections.jsonl");
    write_candidates_jsonl(f, dets);
  }
  {
    auto f = open_out(dir / "config.txt");
    f << cfg.canonical();
  }
  sum.detections = dets.size();
  sum.files.push_back("detections.jsonl");
  sum.files.push_back("config.txt");

  nlohmann::ordered_json m;
  m["command"] = "forward";
  m["seed"] = cfg.seed;
  m["config_hash"] = fmt::format("{:016x}", cfg.hash());
  m["variant"] = model.variant();
  m["dtype"] = to_string(model.dtype);
  m["input_source"] = cfg.input_path.empty() ? std::string("synthetic") : cfg.input_path;
  m["input"] = {model.input.t, model.input.h, model.input.w, model.input.c};
  auto& st = m["stages"] = nlohmann::ordered_json::array();
  for (const auto& d : sum.stages) st.push_back({d.t, d.h, d.w, d.c});
  auto& lv = m["pyramid_lengths"] = nlohmann::ordered_json::array();
  for (const auto& l : pyr.levels) lv.push_back(l.rows());
  m["anchors"] = pyr.anchors();
  m["detections"] = sum.detections;
  m["files"] = sum.files;
  {
    auto f = open_out(dir / "manifest.json");
    f << m.dump(2) << '\n';
  }
  sum.files.push_back("manifest.json");
  out << fmt::format("wrote {} files to {}\n", sum.files.size(), dir.string());
  for (std::size_t s = 0; s < n; ++s) out << fmt::format("stage{} {}\n", s + 1, dims_str(sum.stages[s]));
  out << fmt::format("detections {}\n", sum.detections);
  return sum;
}

}  // namespace

std::vector<std::size_t> pyramid_lengths(const RunConfig& cfg) {
  const auto dims = cfg.model.stage_dims();
  const std::size_t n = dims.size();
  std::vector<std::size_t> l = {dims[n - 2].t, dims[n - 1].t};
  while (l.size() < cfg.head.levels) l.push_back((l.back() + 1) / 2);
  return l;
}

void cmd_describe(const RunConfig& cfg, std::ostream& out) {
  const ModelConfig& m = cfg.model;
  out << fmt::format("variant {}  dtype {}  input {}x{}x{}x{}  cpe {}\n", m.variant(), to_string(m.dtype), m.input.t,
                     m.input.h, m.input.w, m.input.c, m.cpe_enabled ? "on" : "off");
  const auto dims = m.stage_dims();
  for (std::size_t s = 0; s < dims.size(); ++s) {
    const StageSpec& st = m.stages[s];
    std::string win;
    if (st.kind == BlockKind::local) {
      for (const auto& w : st.windows) win += (win.empty() ? " windows " : ",") + to_string(w);
    }
    out << fmt::format("stage{} {} {:<22} depth {:<2} heads {:<2} reduction {}{}\n", s + 1, to_char(st.kind),
                       dims_str(dims[s]), st.depth, m.heads(s), to_string(st.reduction), win);
  }
  const auto lengths = pyramid_lengths(cfg);
  std::string l;
  std::size_t anchors = 0;
  for (const auto v : lengths) {
    l += fmt::format(" {}", v);
    anchors += v;
  }
  out << "pyramid levels" << l << "\n";
  out << fmt::format("anchors {}\n", anchors);
}

void cmd_flops(const RunConfig& cfg, const FlopsOptions& opt, std::ostream& out) {
  const CostReport r = model_cost(cfg.model, cfg.head, opt.include_head, opt.mac_flops);
  out << r.to_text();
  if (!opt.csv_path.empty()) {
    auto f = open_out(opt.csv_path);
    f << r.to_csv();
  }
}

ForwardSummary cmd_forward(const RunConfig& cfg, std::ostream& out) {
  return cfg.model.dtype == DType::f32 ? forward_impl<float>(cfg, out) : forward_impl<double>(cfg, out);
}

int cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt, std::ostream& out) {
  auto terms = loss_grad_terms(cfg.loss);
  if (!opt.inject_sign_error.empty()) {
    bool found = false;
    for (auto& t : terms) {
      if (t.name == opt.inject_sign_error) {
        t = with_sign_error(t);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown loss term '" + opt.inject_sign_error + "'");
  }
  Rng rng(cfg.seed);
  const auto results = run_gradcheck(terms, cfg.gradcheck_points, rng);
  out << fmt::format("{:<14} {:>6} {:>14}  {}\n", "term", "points", "max_rel_error", "status");
  bool ok = true;
  for (const auto& r : results) {
    if (!r.finite) throw NumericError("loss term '" + r.name + "' produced a non-finite value");
    out << fmt::format("{:<14} {:>6} {:>14.3e}  {}\n", r.name, r.points, r.max_rel_error, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumeric;
}

MapTable cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out) {
  if (opt.preds_path.empty() || opt.gts_path.empty()) throw ConfigError("eval needs --preds and --gts");
  std::vector<Prediction> preds;
  std::vector<GroundTruthInstance> gts;
  try {
    auto f = open_in(opt.preds_path);
    preds = read_predictions_jsonl(f);
  } catch (const InputError& e) {
    throw InputError(opt.preds_path + ": " + e.what());
  }
  try {
    auto f = open_in(opt.gts_path);
    gts = read_gts_jsonl(f);
  } catch (const InputError& e) {
    throw InputError(opt.gts_path + ": " + e.what());
  }
  if (opt.soft_nms) preds = postprocess(preds, cfg.eval);
  const MapTable t = evaluate(preds, gts, cfg.eval);
  out << t.to_text();
  if (!opt.csv_path.empty()) {
    auto f = open_out(opt.csv_path);
    f << t.to_csv();
  }
  return t;
}

void cmd_synth(const RunConfig& cfg, const SynthOptions& opt, std::ostream& out) {
  if (!(opt.jitter >= 0.0) || !(opt.score_noise >= 0.0 && opt.score_noise <= 1.0)) {
    throw ConfigError("jitter must be >= 0 and score noise in [0, 1]");
  }
  const Rng root(cfg.seed);
  Rng dr = root.split("dataset");
  const double duration = static_cast<double>(cfg.model.input.t) / cfg.head.fps;
  const SynthDataset data = synth_dataset(dr, opt.videos, cfg.head.num_classes, opt.instances, duration);
  const OracleNoise noise{opt.jitter, opt.score_noise};
  std::vector<Prediction> preds;
  Rng pr = root.split("predictions");
  if (opt.through_head) {
    const auto lengths = pyramid_lengths(cfg);
    const auto strides = pyramid_strides(cfg);
    for (const auto& clip : data.clips) {
      std::vector<GroundTruthInstance> clip_gts;
      for (const auto& g : data.gts) {
        if (g.video_id == clip.video_id) clip_gts.push_back(g);
      }
      const auto o = oracle_head_outputs(clip_gts, lengths, strides, cfg.head.fps, cfg.head.num_classes, noise, pr);
      for (const auto& d : decode(o.coarse, o.refined, strides, cfg.head.fps)) preds.push_back({clip.video_id, d});
    }
    preds = postprocess(preds, cfg.eval);
  } else {
    preds = oracle_predictions(data, noise, pr);
  }
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "gts.jsonl");
    write_gts_jsonl(f, data.gts);
  }
  {
    auto f = open_out(dir / "preds.jsonl");
    write_predictions_jsonl(f, preds);
  }
  out << fmt::format("wrote {} instances and {} predictions to {}\n", data.gts.size(), preds.size(), dir.string());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatio-temporal pyramid transformer toolkit"};
  app.name("stpt");
  app.require_subcommand(1);

  std::string config_path, variant, preset, profile, output, input;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Sectioned key=value configuration file");
    sub->add_option("--variant", variant, "Stage block kinds, e.g. LLGG");
    sub->add_option("--preset", preset, "Model preset: base or toy");
    sub->add_option("--profile", profile, "Detection profile: thumos or anet");
    sub->add_option("--seed", seed, "Seed (overrides STPT_SEED and the config)");
    sub->add_option("--threads", threads, "Worker threads for deterministic parallel kernels");
    sub->add_option("--output", output, "Output directory");
  };

  auto* describe = app.add_subcommand("describe", "Print stage shapes, pyramid lengths and anchor count");
  common(describe);
  FlopsOptions flops_opt;
  bool no_head = false;
  auto* flops = app.add_subcommand("flops", "Print the analytic FLOPs breakdown");
  common(flops);
  flops->add_flag("--no-head", no_head, "Exclude pyramid and head costs");
  flops->add_option("--mac-flops", flops_opt.mac_flops, "FLOPs per multiply-accumulate");
  flops->add_option("--csv", flops_opt.csv_path, "Also write the breakdown as CSV");
  auto* forward = app.add_subcommand("forward", "Run backbone and head; write tensors, detections and a manifest");
  common(forward);
  forward->add_option("--input", input, "Input clip tensor file (default: synthesised from the seed)");
  GradcheckOptions grad_opt;
  std::size_t points = 0;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic loss gradients with finite differences");
  common(grad);
  grad->add_option("--points", points, "Seeded points per term");
  grad->add_option("--inject-sign-error", grad_opt.inject_sign_error, "Negate one term's gradient (test fixture)");
  EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "Evaluate JSON-lines predictions against ground truth");
  common(eval);
  eval->add_option("--preds", eval_opt.preds_path, "Predictions (JSON lines)")->required();
  eval->add_option("--gts", eval_opt.gts_path, "Ground truth (JSON lines)")->required();
  eval->add_flag("--soft-nms", eval_opt.soft_nms, "Apply per-video soft-NMS before evaluation");
  eval->add_option("--csv", eval_opt.csv_path, "Also write the table as CSV");
  SynthOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "Write a synthetic annotation set and oracle predictions");
  common(synth);
  synth->add_option("--videos", synth_opt.videos, "Number of clips");
  synth->add_option("--instances", synth_opt.instances, "Instances per clip");
  synth->add_option("--jitter", synth_opt.jitter, "Boundary noise std as a fraction of instance length");
  synth->add_option("--score-noise", synth_opt.score_noise, "Scores drawn from [1 - noise, 1]");
  synth->add_flag("--through-head", synth_opt.through_head, "Route predictions through decode and soft-NMS");

  std::vector<std::string> argv_store = {"stpt"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ConfigOverrides ov;
    const CLI::App* sub = app.get_subcommands().front();
    if (!preset.empty()) ov["model.preset"] = preset;
    if (!variant.empty()) ov["model.variant"] = variant;
    if (!profile.empty()) ov["detection.profile"] = profile;
    if (!output.empty()) ov["io.output_dir"] = output;
    if (!input.empty()) ov["io.input"] = input;
    if (const char* env = std::getenv("STPT_SEED"); env != nullptr && *env != '\0') ov["run.seed"] = env;
    if (sub->count("--seed") > 0) ov["run.seed"] = std::to_string(seed);
    if (sub->count("--threads") > 0) ov["run.threads"] = std::to_string(threads);
    if (points > 0) ov["run.gradcheck_points"] = std::to_string(points);
    std::istringstream empty;
    const RunConfig cfg = config_path.empty() ? parse_config(empty, "<defaults>", ov) : load_config(config_path, ov);
    set_thread_count(cfg.threads);

    if (sub == describe) {
      cmd_describe(cfg, out);
    } else if (sub == flops) {
      flops_opt.include_head = !no_head;
      cmd_flops(cfg, flops_opt, out);
    } else if (sub == forward) {
      cmd_forward(cfg, out);
    } else if (sub == grad) {
      const int code = cmd_gradcheck(cfg, grad_opt, out);
      if (code != kExitOk) err << "gradient check failed\n";
      return code;
    } else if (sub == eval) {
      cmd_eval(cfg, eval_opt, out);
    } else if (sub == synth) {
      cmd_synth(cfg, synth_opt, out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace stpt
