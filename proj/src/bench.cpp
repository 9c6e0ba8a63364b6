#include "h23d/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <random>

#include <json.hpp>

#include "h23d/detail/multi_radius_pool.hpp"
#include "h23d/error.hpp"
#include "h23d/model.hpp"
#include "h23d/parallel.hpp"

namespace h23d {

namespace {

template <typename F>
BenchEntry time_it(const std::string& name, const BenchOptions& opts, F&& fn) {
  for (std::size_t w = 0; w < opts.warmup; ++w) fn();
  BenchEntry e;
  e.name = name;
  e.repeats = std::max<std::size_t>(opts.repeats, 1);
  e.min_ms = 1e300;
  for (std::size_t r = 0; r < e.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    e.mean_ms += ms / static_cast<double>(e.repeats);
    e.min_ms = std::min(e.min_ms, ms);
  }
  return e;
}

std::vector<Box3D> bench_rois(const PointCloud& cloud, std::size_t n, std::mt19937_64& rng) {
  std::vector<Box3D> rois;
  if (cloud.empty()) return rois;
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  std::uniform_real_distribution<double> yaw(-3.14159, 3.14159);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = cloud.points[pick(rng)];
    Box3D b;
    b.x = p.x;
    b.y = p.y;
    b.z = p.z;
    b.l = 3.9;
    b.w = 1.6;
    b.h = 1.56;
    b.yaw = yaw(rng);
    rois.push_back(b);
  }
  return rois;
}

}  // namespace

const BenchEntry* BenchReport::find(const std::string& name) const {
  for (const BenchEntry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

BenchReport run_benchmark(const PipelineConfig& cfg, const BenchOptions& opts) {
  BenchReport rep;
  rep.scale = cfg.scale;
  rep.points = opts.points;
  rep.proposals = opts.proposals;
  rep.threads = static_cast<std::size_t>(num_threads());

  Model model(cfg);
  const auto boxes = toy_planted_boxes();
  const std::size_t per_box = opts.points / 4;
  const std::size_t clutter = opts.points - std::min(opts.points, per_box * boxes.size());
  const PointCloud cloud = synthetic_scene(boxes, per_box, clutter, cfg, opts.seed);

  // Inference pass under "stage/", training pass (loss and backward) under
  // "train/", both split by stage.
  const std::size_t reps = std::max<std::size_t>(opts.repeats, 1);
  auto time_stages = [&](const std::string& prefix, const std::function<void()>& fn) {
    for (std::size_t w = 0; w < opts.warmup; ++w) fn();
    std::vector<BenchEntry> stages;
    for (std::size_t r = 0; r < reps; ++r) {
      StageTimer timer;
      fn();
      for (const auto& [name, ms] : timer.entries()) {
        auto it = std::find_if(stages.begin(), stages.end(),
                               [&](const BenchEntry& e) { return e.name == prefix + name; });
        if (it == stages.end()) {
          stages.push_back({prefix + name, 0.0, 1e300, reps, 0});
          it = stages.end() - 1;
        }
        it->mean_ms += ms / static_cast<double>(reps);
        it->min_ms = std::min(it->min_ms, ms);
      }
    }
    rep.entries.insert(rep.entries.end(), stages.begin(), stages.end());
  };
  time_stages("stage/", [&] { run_forward(cloud, model); });
  time_stages("train/", [&] { compute_loss(model, cloud, boxes, nullptr, opts.seed, true); });

  std::mt19937_64 rng(opts.seed);
  const GridSpec bev = cfg.bev_grid();
  for (std::size_t n : opts.scatter_points) {
    Tensor f({n, 16});
    std::normal_distribution<double> nd;
    for (double& v : f.values()) v = nd(rng);
    std::uniform_int_distribution<std::int64_t> cell(0, bev.cell_count() - 1);
    std::vector<std::int64_t> ids(n);
    for (auto& id : ids) id = cell(rng);
    BenchEntry e = time_it("scatter/" + std::to_string(n), opts,
                           [&] { return scatter_max(f, ids, bev.cell_count()); });
    e.work = n;
    rep.entries.push_back(e);
  }

  ForwardState st;
  model.extract(cloud, Mode::eval, st);
  if (!st.empty) {
    const auto rois = bench_rois(st.cloud, opts.proposals, rng);
    RoiPoolConfig rc = cfg.roi;
    std::mt19937_64 init(opts.seed);
    HvRoiPool hv(cfg.fusion.h3d_width, rc, init);
    detail::MultiRadiusPool mr(cfg.fusion.h3d_width, rc, init);
    BenchEntry a = time_it("pool/hierarchical", opts,
                           [&] { return hv.forward(rois, st.voxels, opts.seed, Mode::eval); });
    a.work = hv.stats().probes;
    BenchEntry b = time_it("pool/multi_radius", opts,
                           [&] { return mr.forward(rois, st.voxels, opts.seed, Mode::eval); });
    b.work = mr.stats().probes;
    rep.entries.push_back(a);
    rep.entries.push_back(b);
  }
  return rep;
}

std::string bench_to_json(const BenchReport& report) {
  nlohmann::json j{{"scale", report.scale},
                   {"points", report.points},
                   {"proposals", report.proposals},
                   {"threads", report.threads},
                   {"entries", nlohmann::json::array()}};
  for (const BenchEntry& e : report.entries)
    j["entries"].push_back({{"name", e.name},
                            {"mean_ms", e.mean_ms},
                            {"min_ms", e.min_ms},
                            {"repeats", e.repeats},
                            {"work", e.work}});
  return j.dump(2);
}

BenchReport bench_from_json(const std::string& text) {
  BenchReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.scale = j.at("scale").get<std::string>();
    r.points = j.at("points").get<std::size_t>();
    r.proposals = j.at("proposals").get<std::size_t>();
    r.threads = j.at("threads").get<std::size_t>();
    for (const auto& e : j.at("entries"))
      r.entries.push_back({e.at("name").get<std::string>(), e.at("mean_ms").get<double>(),
                           e.at("min_ms").get<double>(), e.at("repeats").get<std::size_t>(),
                           e.at("work").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bench report: ") + e.what());
  }
  return r;
}

}  // namespace h23d
