#include "realtalk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "realtalk/container.hpp"
#include "realtalk/nn.hpp"

namespace rt::bench {

namespace {

using Clock = std::chrono::steady_clock;

double to_ms(Clock::duration d) {
  return std::chrono::duration<double, std::milli>(d).count();
}

LatencyStats summarize(std::vector<double> samples) {
  LatencyStats st;
  st.iterations = int(samples.size());
  if (samples.empty()) return st;
  double sum = 0.0;
  for (double s : samples) sum += s;
  st.mean_ms = sum / double(samples.size());
  double var = 0.0;
  for (double s : samples) var += (s - st.mean_ms) * (s - st.mean_ms);
  st.std_ms = std::sqrt(var / double(samples.size()));
  std::sort(samples.begin(), samples.end());
  const size_t n = samples.size();
  st.median_ms = n % 2 ? samples[n / 2]
                       : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  return st;
}

}  // namespace

int64_t count_params(const render::RendererConfig& cfg) {
  render::Renderer r(cfg, 0);
  return r.params().count_scalars();
}

LatencyStats time_forward(const render::RendererConfig& cfg, int iterations,
                          int warmup, uint64_t seed) {
  render::Renderer r(cfg, seed);
  Rng rng(Rng::mix(seed ^ 0xbe9cULL));
  const int64_t H = cfg.image_h, W = cfg.image_w;
  Tensor src({1, 3, H, W}), ref({1, 3, H, W}), mask({1, 1, H, W});
  Tensor alpha({1, cfg.d_shape}), beta({1, cfg.d_expr}), pose({1, 6});
  for (int64_t i = 0; i < src.numel(); ++i) src[i] = rng.uniform();
  for (int64_t i = 0; i < ref.numel(); ++i) ref[i] = rng.uniform();
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.7;
  for (int64_t i = 0; i < alpha.numel(); ++i) alpha[i] = rng.normal();
  for (int64_t i = 0; i < beta.numel(); ++i) beta[i] = rng.normal();
  for (int64_t i = 0; i < pose.numel(); ++i) pose[i] = rng.normal(0.0, 0.1);

  auto run_once = [&] {
    render::RenderOut out =
        r.render(src, ref, alpha, ag::constant(beta), pose, mask);
    return out.output->value[0];
  };
  volatile double sink = 0.0;
  for (int i = 0; i < warmup; ++i) sink = sink + run_once();
  std::vector<double> samples;
  samples.reserve(size_t(iterations));
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    sink = sink + run_once();
    samples.push_back(to_ms(Clock::now() - t0));
  }
  (void)sink;
  return summarize(std::move(samples));
}

double measure_harness_overhead(int iterations) {
  volatile int sink = 0;
  std::vector<double> samples;
  samples.reserve(size_t(iterations));
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    sink = sink + i;
    samples.push_back(to_ms(Clock::now() - t0));
  }
  (void)sink;
  return summarize(std::move(samples)).median_ms;
}

BenchReport bench_suite(int64_t image_size, int iterations, int warmup,
                        uint64_t seed) {
  BenchReport report;
  report.harness_overhead_ms = measure_harness_overhead(
      std::max(iterations, 100));
  const align::Kind kinds[] = {align::Kind::fia_cross_attention,
                               align::Kind::flow_warp,
                               align::Kind::deformation};
  for (align::Kind kind : kinds) {
    for (int blocks = 1; blocks <= 3; ++blocks) {
      render::RendererConfig cfg;
      cfg.image_h = cfg.image_w = image_size;
      cfg.blocks_per_stage = blocks;
      cfg.alignment = kind;
      BenchRow row;
      row.name = align::to_string(kind) + "_blocks" + std::to_string(blocks);
      row.param_count = count_params(cfg);
      row.latency = time_forward(cfg, iterations, warmup, seed);
      row.input_shape = "1x3x" + std::to_string(image_size) + "x" +
                        std::to_string(image_size);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void BenchReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  out << "name,params,mean_ms,median_ms,std_ms,iterations,input_shape\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", r.latency.mean_ms,
                  r.latency.median_ms, r.latency.std_ms);
    out << r.name << "," << r.param_count << "," << buf << ","
        << r.latency.iterations << "," << r.input_shape << "\n";
  }
  out << "# harness_overhead_ms," << harness_overhead_ms << "\n";
}

BenchReport BenchReport::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io::FormatError("cannot open bench csv: " + path);
  BenchReport report;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const size_t comma = line.find(',');
      if (comma != std::string::npos)
        report.harness_overhead_ms = std::stod(line.substr(comma + 1));
      continue;
    }
    std::istringstream ss(line);
    BenchRow row;
    std::string tok;
    std::getline(ss, row.name, ',');
    std::getline(ss, tok, ',');
    row.param_count = std::stoll(tok);
    std::getline(ss, tok, ',');
    row.latency.mean_ms = std::stod(tok);
    std::getline(ss, tok, ',');
    row.latency.median_ms = std::stod(tok);
    std::getline(ss, tok, ',');
    row.latency.std_ms = std::stod(tok);
    std::getline(ss, tok, ',');
    row.latency.iterations = std::stoi(tok);
    std::getline(ss, row.input_shape, ',');
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace rt::bench
