// h23d command line: infer, train-toy, gradcheck, bench, oracle.
//
// Exit codes: 0 ok, 2 config or usage error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "h23d/bench.hpp"
#include "h23d/config.hpp"
#include "h23d/error.hpp"
#include "h23d/gradcheck.hpp"
#include "h23d/kitti_io.hpp"
#include "h23d/layers.hpp"
#include "h23d/model.hpp"
#include "h23d/oracles.hpp"
#include "h23d/parallel.hpp"
#include "h23d/toy.hpp"

namespace fs = std::filesystem;
using namespace h23d;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kData = 3;
constexpr int kNumerical = 4;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path);
  f << text;
}

std::optional<LayerKind> parse_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::fc, LayerKind::bn, LayerKind::relu, LayerKind::sigmoid,
                      LayerKind::conv2d, LayerKind::upsample, LayerKind::dwconv2d,
                      LayerKind::deconv2d, LayerKind::concat})
    if (s == layer_kind_name(k)) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct InferArgs {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string output;
  std::string out_dir;
  int jobs = 1;
};

int run_infer(const InferArgs& a) {
  const PipelineConfig cfg = load_config(a.config);
  if (a.inputs.size() > 1 && a.out_dir.empty())
    throw ConfigError("infer: several inputs need --out-dir");
  std::vector<std::string> outputs;
  for (const std::string& in : a.inputs)
    outputs.push_back(a.out_dir.empty()
                          ? a.output
                          : (fs::path(a.out_dir) / fs::path(in).stem()).string() + ".txt");
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);

  // Scenes are independent; each worker owns a model.
  const std::size_t jobs = std::clamp<std::size_t>(a.jobs, 1, a.inputs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  auto work = [&](std::size_t w) {
    try {
      Model model(cfg);
      if (!a.checkpoint.empty()) load_checkpoint(a.checkpoint, model);
      for (std::size_t i = next++; i < a.inputs.size(); i = next++) {
        const DetectionSet d = run_forward(load_kitti_bin(a.inputs[i]), model);
        write_text(outputs[i], write_kitti_labels(d));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < jobs; ++w) pool.emplace_back(work, w);
    work(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::size_t steps = 0;
  std::size_t log_every = 25;
  std::string save;
  std::string scene_out;
  std::string labels;
  ToyOptions toy;
};

int run_train_toy(const TrainArgs& a) {
  const PipelineConfig cfg = load_config(a.config);
  Model model(cfg);
  ToyOptions opts = a.toy;
  opts.steps = a.steps;
  const ToyResult r = train_toy(model, opts, [&](std::size_t s, const TrainStepResult& t) {
    if (a.log_every && (s % a.log_every == 0))
      std::printf("step %4zu  loss %.6f  rpn %.4f/%.4f  head %.4f/%.4f  lr %.2e  |g| %.3g\n", s,
                  t.loss.total, t.loss.rpn_cls, t.loss.rpn_loc, t.loss.head_bce,
                  t.loss.head_reg, t.lr, t.grad_norm);
  });
  std::printf("loss %.6f -> %.6f (%.1f%% reduction) in %zu steps, %.1fs\n", r.initial_loss,
              r.final_loss, 100.0 * r.reduction, r.losses.size(), r.seconds);
  for (std::size_t g = 0; g < r.planted.size(); ++g)
    std::printf("planted box %zu: best 3D IoU %.3f\n", g, r.best_iou[g]);
  std::printf("%zu detections\n", r.detections.boxes.size());
  if (!a.save.empty()) save_checkpoint(a.save, model);
  if (!a.scene_out.empty()) write_kitti_bin(a.scene_out, r.scene);
  if (!a.labels.empty()) write_text(a.labels, write_kitti_labels(r.detections));
  return kOk;
}

struct GradArgs {
  std::vector<std::string> ops;
  std::uint64_t seed = 1;
  std::size_t probes = GradcheckOptions{}.probes_per_group;
  std::string json;
  std::string fault;
  bool list = false;
};

int run_gradcheck(const GradArgs& a) {
  if (a.list) {
    for (const auto& op : gradcheck_ops()) std::printf("%s\n", op.c_str());
    return kOk;
  }
  if (!a.fault.empty()) set_fault_injection(parse_kind(a.fault));
  GradcheckOptions opts;
  opts.probes_per_group = a.probes;
  std::vector<GradcheckReport> reports;
  bool ok = true;
  double total = 0.0;
  for (const auto& op : a.ops.empty() ? gradcheck_ops() : a.ops) {
    reports.push_back(gradcheck(op, a.seed, opts));
    const auto& r = reports.back();
    ok = ok && r.passed;
    total += r.seconds;
    std::printf("%-16s %s  max rel err %.2e (tol %.0e)  probes %zu  kinks %zu\n", op.c_str(),
                r.passed ? "ok  " : "FAIL", r.max_rel_err, r.tolerance, r.probes, r.kinks);
  }
  std::printf("%zu checks, %.2fs\n", reports.size(), total);
  if (!a.json.empty()) write_text(a.json, reports_to_json(reports));
  set_fault_injection(std::nullopt);
  return ok ? kOk : kNumerical;
}

struct BenchArgs {
  std::string config;
  BenchOptions opts;
  std::string json;
};

int run_bench(const BenchArgs& a) {
  const BenchReport r = run_benchmark(load_config(a.config), a.opts);
  for (const BenchEntry& e : r.entries)
    std::printf("%-24s mean %9.3f ms  min %9.3f ms%s\n", e.name.c_str(), e.mean_ms, e.min_ms,
                e.work ? ("  work " + std::to_string(e.work)).c_str() : "");
  if (!a.json.empty()) write_text(a.json, bench_to_json(r));
  return kOk;
}

struct OracleArgs {
  oracle::SuiteOptions opts;
  std::string json;
};

int run_oracle(const OracleArgs& a) {
  const auto entries = oracle::run_suite(a.opts);
  bool ok = true;
  for (const auto& e : entries) {
    ok = ok && e.passed;
    std::printf("%-24s %s  instances %zu  mismatches %zu  max err %.3g\n", e.name.c_str(),
                e.passed ? "ok  " : "FAIL", e.instances, e.mismatches, e.max_error);
  }
  if (!a.json.empty()) write_text(a.json, oracle::suite_to_json(entries));
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"H23D R-CNN toy pipeline"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads inside each operator")
      ->check(CLI::PositiveNumber);

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Detect objects in KITTI .bin scans");
  infer->add_option("-c,--config", ia.config, "Pipeline config")->required();
  infer->add_option("--checkpoint", ia.checkpoint, "Parameter checkpoint");
  infer->add_option("inputs", ia.inputs, "Input .bin files")->required();
  auto* out_opt = infer->add_option("-o,--output", ia.output, "Label file (single input), - for stdout");
  infer->add_option("--out-dir", ia.out_dir, "Directory for one label file per input")
      ->excludes(out_opt);
  infer->add_option("-j,--jobs", ia.jobs, "Scenes processed concurrently")
      ->check(CLI::PositiveNumber);

  TrainArgs ta;
  ta.config = "configs/toy.cfg";
  auto* train = app.add_subcommand("train-toy", "Overfit the two-box synthetic scene");
  train->add_option("-c,--config", ta.config, "Pipeline config")->capture_default_str();
  train->add_option("--steps", ta.steps, "Override train.steps");
  train->add_option("--log-every", ta.log_every, "Print every N steps (0: never)")
      ->capture_default_str();
  train->add_option("--save", ta.save, "Write a checkpoint after training");
  train->add_option("--scene-out", ta.scene_out, "Write the training scene as a .bin");
  train->add_option("--labels", ta.labels, "Write final detections as label text");
  train->add_option("--points-per-box", ta.toy.points_per_box)->capture_default_str();
  train->add_option("--clutter", ta.toy.clutter)->capture_default_str();
  train->add_option("--scene-seed", ta.toy.scene_seed)->capture_default_str();

  GradArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--op", ga.ops, "Op or stage id (repeatable, default all)");
  grad->add_option("--seed", ga.seed)->capture_default_str();
  grad->add_option("--probes", ga.probes, "Probes per parameter group")->capture_default_str();
  grad->add_option("--json", ga.json, "Write the report as JSON");
  grad->add_option("--inject-fault", ga.fault, "Perturb the backward of one layer kind");
  grad->add_flag("--list", ga.list, "List registered ids");

  BenchArgs ba;
  ba.config = "configs/toy.cfg";
  auto* bench = app.add_subcommand("bench", "Per-stage timing report");
  bench->add_option("-c,--config", ba.config, "Pipeline config")->capture_default_str();
  bench->add_option("--points", ba.opts.points)->capture_default_str();
  bench->add_option("--proposals", ba.opts.proposals)->capture_default_str();
  bench->add_option("--repeats", ba.opts.repeats)->capture_default_str();
  bench->add_option("--warmup", ba.opts.warmup)->capture_default_str();
  bench->add_option("--seed", ba.opts.seed)->capture_default_str();
  bench->add_option("--scatter-points", ba.opts.scatter_points, "Point counts for scatter_max")
      ->capture_default_str();
  bench->add_option("--json", ba.json, "Write the report as JSON");

  OracleArgs oa;
  auto* orc = app.add_subcommand("oracle", "Compare operators with brute-force oracles");
  orc->add_option("--seed", oa.opts.seed)->capture_default_str();
  orc->add_option("--instances", oa.opts.instances)->capture_default_str();
  orc->add_option("--nms-sets", oa.opts.nms_sets)->capture_default_str();
  orc->add_option("--json", oa.json, "Write the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  set_num_threads(threads);

  try {
    if (*infer) return run_infer(ia);
    if (*train) return run_train_toy(ta);
    if (*grad) return run_gradcheck(ga);
    if (*bench) return run_bench(ba);
    if (*orc) return run_oracle(oa);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kOk;
}
