#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/morphable.hpp"
#include "realtalk/tensor.hpp"

namespace rt::data {

// Synthetic clip generator. Audio is synthesized FROM the expression track
// through a fixed dataset-level linear map, so stage 1 has a recoverable
// signal; frames are rendered from the coefficients by a procedural oracle,
// so stage 2 has a consistent coefficient-to-appearance mapping.
//
// Expression dims are split into three groups when d_expr >= 6:
//   [0, d-4)      dynamic, audio-visible (the map's non-zero columns)
//   [d-4, d-2)    per-clip offset predictable from the shape coefficients
//   [d-2, d)      per-clip offset from a latent only history reveals
// The offsets are invisible to audio (zero columns), which is what makes the
// shape and history priors genuinely informative.
struct DatasetParams {
  uint64_t seed = 0;        // dataset-level constants (model, maps)
  uint64_t clip_salt = 0;   // vary to draw fresh clips under the same constants
  int64_t clips = 8;
  int64_t frames_per_clip = 48;  // T'
  int64_t n_vertices = 96;
  int64_t d_shape = 4;
  int64_t d_expr = 8;
  int64_t d_audio = 16;
  int64_t image_h = 64, image_w = 64;
  double focal = 18.0;
  double audio_noise = 0.0;
};

struct CoeffTrack {
  Tensor alpha;   // [d_shape], constant per clip
  Tensor beta;    // [T', d_expr]
  Tensor pose;    // [T', 6]: 3 Euler angles + 3D translation
  Tensor offset;  // [T', 2]: image-plane tau in pixels
  double max_step_bound = 0.0;  // analytic bound on |beta_{t+1} - beta_t|
};

struct ClipSample {
  CoeffTrack coeffs;
  Tensor audio;   // [2*T', d_audio]
  Tensor frames;  // [T', 3, H, W], values in [0,1]
  uint64_t clip_seed = 0;
};

struct Dataset {
  DatasetParams params;
  face::MorphableModel model;
  Tensor audio_map;        // [2*d_audio, d_expr]; rows 0..d_a-1 even, rest odd
  Tensor shape_to_offset;  // [2, d_shape]
  std::vector<ClipSample> clips;

  face::Coeff3D coeffs_at(int64_t clip, int64_t frame) const;
  Tensor frame_at(int64_t clip, int64_t frame) const;  // [3,H,W]
};

CoeffTrack gen_coeff_track(uint64_t clip_seed, int64_t frames, int64_t d_shape,
                           int64_t d_expr, const Tensor& shape_to_offset,
                           double image_cx, double image_cy);

// Even/odd rows per frame: w_{2t} = A_even * beta_t + noise, w_{2t+1} =
// A_odd * beta_t + noise. The map is a dataset-level constant.
Tensor derive_audio(const CoeffTrack& track, const Tensor& audio_map,
                    double noise_level, uint64_t seed);

// Deterministic procedural portrait: projected vertices splatted back-to-front
// as Gaussian blobs with index-hashed colors over a seeded background; mouth
// vertices carry a distinct red so lip position is visually recoverable.
Tensor oracle_render(const face::MorphableModel& m, const face::Coeff3D& c,
                     int64_t h, int64_t w, double focal, uint64_t bg_seed);

Dataset generate_dataset(const DatasetParams& p);

void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

}  // namespace rt::data
