#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "h23d/config.hpp"

namespace h23d {

struct BenchOptions {
  std::size_t points = 20000;
  std::size_t proposals = 32;
  std::size_t repeats = 3;
  std::size_t warmup = 1;
  std::uint64_t seed = 1;
  std::vector<std::size_t> scatter_points{100000, 200000};
};

// One timed item. `work` is the point count for scatter entries and the
// candidate-voxel distance evaluations for pooling entries.
struct BenchEntry {
  std::string name;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  std::size_t repeats = 0;
  std::size_t work = 0;
};

struct BenchReport {
  std::string scale;
  std::size_t points = 0;
  std::size_t proposals = 0;
  std::size_t threads = 0;
  std::vector<BenchEntry> entries;  // "stage/<name>", "scatter/<n>", "pool/<variant>"

  const BenchEntry* find(const std::string& name) const;
};

// Warmed wall-clock timings of every pipeline stage on a synthetic scene,
// scatter_max at several point counts, and hierarchical vs multi-radius RoI
// pooling over the same proposals at equal output width.
BenchReport run_benchmark(const PipelineConfig& cfg, const BenchOptions& opts);

std::string bench_to_json(const BenchReport& report);
BenchReport bench_from_json(const std::string& text);

}  // namespace h23d
