#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rt::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Scanline fill vs. even-odd point-in-polygon oracle on random convex and
// star-shaped polygons; disagreements are only tolerated within 0.5 px of an
// edge.
std::vector<CheckResult> verify_rasterizer(uint64_t seed, int polygon_count,
                                           int64_t size);

// Attention implementations vs. a hand-rolled loop oracle on tiny inputs:
// the raw multi-head core, the encoder self-attention path, the decoder
// cross-attention and the renderer's spatial cross-attention.
std::vector<CheckResult> verify_attention(uint64_t seed);

// Analytic gradients vs. central finite differences for the losses, AdaIN,
// cross-attention and the full toy render.
std::vector<CheckResult> verify_gradients(uint64_t seed);

// suite is one of: rasterizer, attention, gradients, all
std::vector<CheckResult> run_suite(const std::string& suite, uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace rt::verify
