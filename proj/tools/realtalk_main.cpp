// realtalk command-line entry point: data generation, two-stage training,
// inference, benchmarking and self-verification.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage/config error,
// 3 I/O or format error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "realtalk/audio2expr.hpp"
#include "realtalk/bench.hpp"
#include "realtalk/config.hpp"
#include "realtalk/container.hpp"
#include "realtalk/image_io.hpp"
#include "realtalk/renderer.hpp"
#include "realtalk/synth_data.hpp"
#include "realtalk/train.hpp"
#include "realtalk/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// Every accepted configuration key. Unknown keys are hard errors.
const std::vector<std::string> kKnownKeys = {
    "seed",
    "data.clips", "data.frames", "data.n_vertices", "data.d_shape",
    "data.d_expr", "data.d_audio", "data.image", "data.focal",
    "data.audio_noise", "data.clip_salt",
    "a2e.latent_dim", "a2e.heads", "a2e.enc_layers", "a2e.dec_layers",
    "a2e.t_pred", "a2e.n_hist", "a2e.pe_period", "a2e.vertex_loss_weight",
    "a2e.use_shape", "a2e.use_history", "a2e.query_pos_encoding",
    "renderer.stages", "renderer.blocks", "renderer.base_channels",
    "renderer.attention_stages", "renderer.alignment", "renderer.style_dim",
    "renderer.attn_heads", "renderer.adain_mlp_layers",
    "train.lr", "train.beta1", "train.beta2", "train.weight_decay",
    "train.batch", "train.iters", "train.clip_norm", "train.preset",
    "loss.pixel", "loss.perceptual", "loss.adversarial", "loss.teeth",
    "mask.naive", "mask.dilate",
};

rt::cfg::Config load_config(const std::string& path,
                            const std::vector<std::string>& overrides) {
  rt::cfg::Config cfg =
      path.empty() ? rt::cfg::Config() : rt::cfg::Config::load_file(path);
  for (const auto& kv : overrides) cfg.set_kv(kv);
  cfg.require_known(kKnownKeys);
  return cfg;
}

rt::data::DatasetParams dataset_params(const rt::cfg::Config& cfg) {
  rt::data::DatasetParams p;
  p.seed = uint64_t(cfg.integer("seed", 0));
  p.clip_salt = uint64_t(cfg.integer("data.clip_salt", 0));
  p.clips = cfg.integer("data.clips", 8);
  p.frames_per_clip = cfg.integer("data.frames", 48);
  p.n_vertices = cfg.integer("data.n_vertices", 96);
  p.d_shape = cfg.integer("data.d_shape", 4);
  p.d_expr = cfg.integer("data.d_expr", 8);
  p.d_audio = cfg.integer("data.d_audio", 16);
  p.image_h = p.image_w = cfg.integer("data.image", 64);
  p.focal = cfg.num("data.focal", 18.0);
  p.audio_noise = cfg.num("data.audio_noise", 0.0);
  return p;
}

rt::a2e::A2EConfig a2e_config(const rt::cfg::Config& cfg,
                              const rt::data::DatasetParams& dp) {
  rt::a2e::A2EConfig c;
  c.t_pred = cfg.integer("a2e.t_pred", 16);
  c.l = 2 * c.t_pred;
  c.n_hist = cfg.integer("a2e.n_hist", 16);
  c.latent_dim = cfg.integer("a2e.latent_dim", 64);
  c.heads = int(cfg.integer("a2e.heads", 4));
  c.enc_layers = int(cfg.integer("a2e.enc_layers", 2));
  c.dec_layers = int(cfg.integer("a2e.dec_layers", 2));
  c.pe_period = cfg.integer("a2e.pe_period", c.t_pred);
  c.vertex_loss_weight = cfg.num("a2e.vertex_loss_weight", 0.1);
  c.use_shape_token = cfg.flag("a2e.use_shape", true);
  c.use_history_tokens = cfg.flag("a2e.use_history", true);
  c.query_pos_encoding = cfg.flag("a2e.query_pos_encoding", true);
  c.d_audio = dp.d_audio;
  c.d_shape = dp.d_shape;
  c.d_expr = dp.d_expr;
  return c;
}

rt::render::RendererConfig renderer_config(const rt::cfg::Config& cfg,
                                           const rt::data::DatasetParams& dp) {
  rt::render::RendererConfig c;
  c.stages = int(cfg.integer("renderer.stages", 4));
  c.blocks_per_stage = int(cfg.integer("renderer.blocks", 2));
  c.base_channels = cfg.integer("renderer.base_channels", 16);
  c.style_dim = cfg.integer("renderer.style_dim", 64);
  c.attn_heads = int(cfg.integer("renderer.attn_heads", 4));
  c.adain_mlp_layers = int(cfg.integer("renderer.adain_mlp_layers", 3));
  c.alignment =
      rt::align::kind_from_string(cfg.str("renderer.alignment", "fia"));
  c.image_h = dp.image_h;
  c.image_w = dp.image_w;
  c.d_shape = dp.d_shape;
  c.d_expr = dp.d_expr;
  if (cfg.has("renderer.attention_stages")) {
    c.attention_stages.clear();
    std::istringstream ss(cfg.str("renderer.attention_stages", ""));
    std::string tok;
    while (std::getline(ss, tok, ':'))
      if (!tok.empty()) c.attention_stages.push_back(std::stoi(tok));
  }
  return c;
}

rt::train::TrainConfig train_config(const rt::cfg::Config& cfg,
                                    const std::string& stage) {
  const std::string preset = cfg.str("train.preset", "toy");
  if (preset != "toy" && preset != "paper")
    throw rt::cfg::ConfigError("unknown config value for train.preset: '" +
                               preset + "'");
  rt::train::TrainConfig t;
  if (stage == "a2e")
    t = preset == "paper" ? rt::train::TrainConfig::a2e_paper()
                          : rt::train::TrainConfig::a2e_toy();
  else
    t = preset == "paper" ? rt::train::TrainConfig::e2f_paper()
                          : rt::train::TrainConfig::e2f_toy();
  t.lr = cfg.num("train.lr", t.lr);
  t.beta1 = cfg.num("train.beta1", t.beta1);
  t.beta2 = cfg.num("train.beta2", t.beta2);
  t.weight_decay = cfg.num("train.weight_decay", t.weight_decay);
  t.batch_size = cfg.integer("train.batch", t.batch_size);
  t.iterations = cfg.integer("train.iters", t.iterations);
  t.clip_norm = cfg.num("train.clip_norm", t.clip_norm);
  t.seed = uint64_t(cfg.integer("seed", 0));
  return t;
}

rt::train::E2FOptions e2f_options(const rt::cfg::Config& cfg) {
  rt::train::E2FOptions o;
  o.weights.pixel = cfg.num("loss.pixel", 1.0);
  o.weights.perceptual = cfg.num("loss.perceptual", 1.0);
  o.weights.adversarial = cfg.num("loss.adversarial", 0.1);
  o.weights.teeth = cfg.num("loss.teeth", 1.0);
  o.naive_mask = cfg.flag("mask.naive", false);
  o.mask_dilate = cfg.num("mask.dilate", 1.15);
  return o;
}

void echo_config(const std::string& out_dir, const rt::cfg::Config& cfg) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/config.txt");
  f << cfg.dump();
}

std::vector<std::pair<std::string, std::string>> config_lines(
    const rt::cfg::Config& cfg) {
  std::vector<std::pair<std::string, std::string>> lines;
  for (const auto& [k, v] : cfg.entries()) lines.push_back({k, v});
  return lines;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"realtalk: audio-driven face generation pipeline"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, a2e_ckpt, e2f_ckpt, suite;
  std::vector<std::string> overrides;
  int64_t seed = 0, clips = -1, frames = -1, clip_index = 0;
  std::string alignment = "fia";
  int blocks = 2;
  int64_t bench_size = 64;
  int bench_iters = 30;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value)");
    cmd->add_option("--set", overrides, "override: key=value")->take_all();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen);
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--clips", clips, "number of clips");
  gen->add_option("--frames", frames, "frames per clip");
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ta =
      app.add_subcommand("train-a2e", "train the audio-to-expression stage");
  add_common(ta);
  ta->add_option("--data", data_dir, "dataset directory")->required();
  ta->add_option("--out", out_dir, "checkpoint directory")->required();

  CLI::App* te =
      app.add_subcommand("train-e2f", "train the expression-to-face renderer");
  add_common(te);
  te->add_option("--data", data_dir, "dataset directory")->required();
  te->add_option("--out", out_dir, "checkpoint directory")->required();

  CLI::App* inf = app.add_subcommand("infer", "run the full pipeline");
  add_common(inf);
  inf->add_option("--a2e", a2e_ckpt, "stage-1 checkpoint")->required();
  inf->add_option("--e2f", e2f_ckpt, "stage-2 checkpoint")->required();
  inf->add_option("--data", data_dir, "dataset directory")->required();
  inf->add_option("--clip", clip_index, "clip index");
  inf->add_option("--out", out_dir, "output directory")->required();

  CLI::App* be = app.add_subcommand("bench", "latency / parameter report");
  add_common(be);
  be->add_option("--alignment", alignment, "fia|flow|deformation|all");
  be->add_option("--blocks", blocks, "residual blocks per stage");
  be->add_option("--size", bench_size, "square image size");
  be->add_option("--iters", bench_iters, "timed iterations");
  be->add_option("--out", out_dir, "output CSV")->required();

  CLI::App* ve = app.add_subcommand("verify", "run oracle suites");
  ve->add_option("--suite", suite, "rasterizer|attention|gradients|all")
      ->required();
  ve->add_option("--seed", seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      rt::cfg::Config cfg = load_config(config_path, overrides);
      if (gen->count("--seed")) cfg.set("seed", std::to_string(seed));
      if (clips >= 0) cfg.set("data.clips", std::to_string(clips));
      if (frames >= 0) cfg.set("data.frames", std::to_string(frames));
      rt::data::DatasetParams p = dataset_params(cfg);
      rt::data::Dataset ds = rt::data::generate_dataset(p);
      rt::data::write_dataset(out_dir, ds);
      echo_config(out_dir, cfg);
      std::printf("wrote %lld clips x %lld frames to %s\n", (long long)p.clips,
                  (long long)p.frames_per_clip, out_dir.c_str());
      return kExitOk;
    }

    if (ta->parsed()) {
      rt::cfg::Config cfg = load_config(config_path, overrides);
      rt::data::Dataset ds = rt::data::read_dataset(data_dir);
      rt::a2e::A2EConfig ac = a2e_config(cfg, ds.params);
      rt::train::TrainConfig tc = train_config(cfg, "a2e");
      rt::a2e::A2EModel model(ac, tc.seed);
      rt::train::TrainLog log = rt::train::train_a2e(model, ds, tc);
      rt::train::save_checkpoint(out_dir, model.params(), config_lines(cfg));
      log.write_csv(out_dir + "/loss_curve.csv");
      echo_config(out_dir, cfg);
      std::printf("trained a2e for %lld iters; final total loss %.6f\n",
                  (long long)tc.iterations,
                  log.rows.empty() ? 0.0 : log.rows.back().back());
      return kExitOk;
    }

    if (te->parsed()) {
      rt::cfg::Config cfg = load_config(config_path, overrides);
      rt::data::Dataset ds = rt::data::read_dataset(data_dir);
      rt::render::RendererConfig rc = renderer_config(cfg, ds.params);
      rt::train::TrainConfig tc = train_config(cfg, "e2f");
      rt::train::E2FOptions opt = e2f_options(cfg);
      rt::render::Renderer gen_model(rc, tc.seed);
      rt::e2f::Discriminator disc(tc.seed + 1);
      rt::e2f::FeatureNet feat(tc.seed + 2);
      rt::train::TrainLog log =
          rt::train::train_e2f(gen_model, disc, feat, ds, tc, opt);
      rt::train::save_checkpoint(out_dir, gen_model.params(),
                                 config_lines(cfg));
      rt::train::save_checkpoint(out_dir + "/disc", disc.params());
      log.write_csv(out_dir + "/loss_curve.csv");
      echo_config(out_dir, cfg);
      std::printf("trained e2f for %lld iters; final masked L1 %.6f\n",
                  (long long)tc.iterations,
                  log.rows.empty() ? 0.0 : log.rows.back().back());
      return kExitOk;
    }

    if (inf->parsed()) {
      rt::cfg::Config cfg = load_config(config_path, overrides);
      rt::data::Dataset ds = rt::data::read_dataset(data_dir);
      rt::a2e::A2EConfig ac = a2e_config(cfg, ds.params);
      rt::render::RendererConfig rc = renderer_config(cfg, ds.params);
      rt::a2e::A2EModel a2e_model(ac, 0);
      rt::render::Renderer gen_model(rc, 0);
      rt::train::load_checkpoint(a2e_ckpt, a2e_model.params());
      rt::train::load_checkpoint(e2f_ckpt, gen_model.params());
      rt::train::E2FOptions opt = e2f_options(cfg);
      const uint64_t hseed = uint64_t(cfg.integer("seed", 0));
      rt::train::InferResult res = rt::train::infer_clip(
          a2e_model, gen_model, ds, clip_index, hseed, opt);
      std::filesystem::create_directories(out_dir);
      char name[64];
      for (size_t t = 0; t < res.frames.size(); ++t) {
        std::snprintf(name, sizeof(name), "/frame_%04zu.ppm", t);
        rt::io::write_ppm(out_dir + name, res.frames[t]);
        std::snprintf(name, sizeof(name), "/mask_%04zu.pgm", t);
        rt::io::write_pgm(out_dir + name, res.masks[t]);
      }
      echo_config(out_dir, cfg);
      std::printf("wrote %zu frames to %s\n", res.frames.size(),
                  out_dir.c_str());
      return kExitOk;
    }

    if (be->parsed()) {
      rt::cfg::Config cfg = load_config(config_path, overrides);
      const uint64_t bseed = uint64_t(cfg.integer("seed", 0));
      rt::bench::BenchReport report;
      if (alignment == "all") {
        report = rt::bench::bench_suite(bench_size, bench_iters, 5, bseed);
      } else {
        rt::render::RendererConfig rc;
        rc.image_h = rc.image_w = bench_size;
        rc.blocks_per_stage = blocks;
        rc.alignment = rt::align::kind_from_string(alignment);
        rt::bench::BenchRow row;
        row.name = alignment + "_blocks" + std::to_string(blocks);
        row.param_count = rt::bench::count_params(rc);
        row.latency = rt::bench::time_forward(rc, bench_iters, 5, bseed);
        row.input_shape = "1x3x" + std::to_string(bench_size) + "x" +
                          std::to_string(bench_size);
        report.rows.push_back(row);
        report.harness_overhead_ms = rt::bench::measure_harness_overhead(1000);
      }
      report.write_csv(out_dir);
      for (const auto& r : report.rows)
        std::printf("%-22s params %10lld   median %8.3f ms  (mean %8.3f, "
                    "std %6.3f, iters %d)\n",
                    r.name.c_str(), (long long)r.param_count,
                    r.latency.median_ms, r.latency.mean_ms, r.latency.std_ms,
                    r.latency.iterations);
      std::printf("harness overhead: %.6f ms\n", report.harness_overhead_ms);
      return kExitOk;
    }

    if (ve->parsed()) {
      std::vector<rt::verify::CheckResult> results =
          rt::verify::run_suite(suite, uint64_t(seed));
      bool ok = true;
      for (const auto& r : results) {
        std::printf("%-42s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.detail.c_str());
        ok = ok && r.pass;
      }
      return ok ? kExitOk : kExitVerifyFailure;
    }
  } catch (const rt::cfg::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const rt::io::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitUsage;
}
