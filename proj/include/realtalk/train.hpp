#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/audio2expr.hpp"
#include "realtalk/losses_e2f.hpp"
#include "realtalk/mask.hpp"
#include "realtalk/nn.hpp"
#include "realtalk/renderer.hpp"
#include "realtalk/synth_data.hpp"

namespace rt::train {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t batch_size = 8;
  int64_t iterations = 2000;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0 = only at the end
  double clip_norm = 1.0;        // global gradient-norm clip; <=0 disables

  // Optimizer settings from the original training recipe, with toy-scale
  // batch/iteration counts and learning rates that converge inside the
  // desk-scale budgets.
  static TrainConfig a2e_paper();  // lr 5e-5, betas (0.95, 0.999), 200k iters
  static TrainConfig e2f_paper();  // lr 1e-4, betas (0.9, 0.96), wd 1e-5, 100k
  static TrainConfig a2e_toy();
  static TrainConfig e2f_toy();
};

class Adam {
 public:
  Adam(nn::ParamStore& ps, const TrainConfig& cfg);
  void step();  // applies store gradients; decoupled weight decay
  int64_t steps_taken() const { return t_; }

 private:
  nn::ParamStore* ps_;
  double lr_, b1_, b2_, eps_, wd_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  void write_csv(const std::string& path) const;
};

// Checkpoints: one container file per parameter plus a manifest of names,
// shapes and caller-supplied config lines.
void save_checkpoint(const std::string& dir, const nn::ParamStore& ps,
                     const std::vector<std::pair<std::string, std::string>>&
                         config_lines = {});
void load_checkpoint(const std::string& dir, nn::ParamStore& ps);
std::vector<std::pair<std::string, std::string>> read_checkpoint_config(
    const std::string& dir);

// ------------------------------------------------------------------ stage 1

struct A2EWindow {
  Tensor audio;      // [l, d_audio]
  Tensor alpha;      // [d_shape]
  Tensor beta_hist;  // [N, d_expr]
  Tensor beta_gt;    // [T, d_expr]
  std::vector<face::Coeff3D> frames;  // per-frame GT coefficients
};

A2EWindow sample_window(const data::Dataset& ds, const a2e::A2EConfig& cfg,
                        int64_t clip, int64_t start, Rng& history_rng);

TrainLog train_a2e(a2e::A2EModel& model, const data::Dataset& ds,
                   const TrainConfig& cfg);

struct A2EMetrics {
  double expression_error = 0.0;    // mean per-frame squared coefficient error
  double mouth_vertex_error = 0.0;  // mean vertex loss
};
A2EMetrics evaluate_a2e(const a2e::A2EModel& model, const data::Dataset& ds,
                        uint64_t history_seed);

// Landmark-distance proxy: mean pixel distance between projected mouth
// vertices under predicted vs ground-truth expressions.
double evaluate_lmd(const a2e::A2EModel& model, const data::Dataset& ds,
                    uint64_t history_seed);

// ------------------------------------------------------------------ stage 2

struct E2FOptions {
  e2f::LossWeights weights;
  bool naive_mask = false;  // lower-half baseline instead of learnable mask
  double mask_dilate = 1.15;
};

TrainLog train_e2f(render::Renderer& gen, e2f::Discriminator& disc,
                   const e2f::FeatureNet& feat, const data::Dataset& ds,
                   const TrainConfig& cfg, const E2FOptions& opt);

// Mean L1 over each frame's generated region (mask == 0), averaged over all
// frames of the dataset, rendering with ground-truth coefficients.
double masked_region_l1(const render::Renderer& gen, const data::Dataset& ds,
                        const E2FOptions& opt);

// ----------------------------------------------------------------- pipeline

struct InferResult {
  std::vector<Tensor> frames;  // [3,H,W] each
  std::vector<Tensor> masks;   // [H,W] each
  Tensor predicted_beta;       // [T', d_expr]
};

// Full pipeline on one clip: sliding windows of T frames (non-overlapping,
// tail window overlaps), learnable mask from predicted expressions, render
// against the clip's first frame.
InferResult infer_clip(const a2e::A2EModel& a2e_model,
                       const render::Renderer& gen, const data::Dataset& ds,
                       int64_t clip, uint64_t history_seed,
                       const E2FOptions& opt);

}  // namespace rt::train
