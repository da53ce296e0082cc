#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/renderer.hpp"

namespace rt::bench {

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;
  int iterations = 0;
};

struct BenchRow {
  std::string name;
  int64_t param_count = 0;
  LatencyStats latency;
  std::string input_shape;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double harness_overhead_ms = 0.0;

  void write_csv(const std::string& path) const;
  static BenchReport read_csv(const std::string& path);
};

// Exact count of trainable scalars in the renderer under this config.
int64_t count_params(const render::RendererConfig& cfg);

// Wall-clock forward latency, single-threaded, warmup excluded.
LatencyStats time_forward(const render::RendererConfig& cfg, int iterations,
                          int warmup, uint64_t seed);

double measure_harness_overhead(int iterations);

// Table-6-style cross product: {fia, flow, deformation} x {blocks 1,2,3}.
BenchReport bench_suite(int64_t image_size, int iterations, int warmup,
                        uint64_t seed);

}  // namespace rt::bench
