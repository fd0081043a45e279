//
// Top-level model configuration shared by training, generation and the CLI,
// plus per-stage parameter initialization. Each stage owns a separate
// parameter store and checkpoint file.
//

#pragma once

#include <nlohmann/json.hpp>

#include "locadit/armodel.hpp"
#include "locadit/diffusion.hpp"
#include "locadit/vae.hpp"

namespace locadit {

struct ModelConfig {
  // grids: the coarse level decodes at the fine level's latent resolution
  uint32_t coarse_resolution = 16;
  uint32_t fine_resolution = 64;
  int latent_channels = 8;
  int vae_width_coarse = 16;
  int vae_width_fine = 12;
  int denoiser_width = 32;
  int cond_channels = 4;
  int diffusion_steps = 100;
  double lambda_bce = 20.0, lambda_l1 = 50.0, lambda_kl = 0.03;

  // sequence model
  uint32_t coord_bins = 128;
  int ar_width = 128, ar_blocks = 2, ar_heads = 4, ar_mlp = 256;
  int prompt_len = 16, prompt_dim = 64, max_positions = 512;
  size_t prompt_points = 2048;

  size_t gt_samples = 16384;  // surface samples drawn per ground-truth mesh

  void check_valid() const {
    if (fine_resolution != coarse_resolution * 4)
      fail(errc::bad_config, "fine resolution must be 4x the coarse resolution");
    auto pow2 = [](uint32_t v) { return v && (v & (v - 1)) == 0; };
    if (!pow2(coarse_resolution) || !pow2(fine_resolution) || !pow2(coord_bins))
      fail(errc::bad_config, "resolutions and coord bins must be powers of two");
    if (coarse_resolution < 8) fail(errc::bad_config, "coarse resolution below 8");
    if (ar_width % ar_heads != 0) fail(errc::bad_config, "width not divisible by heads");
  }

  VaeLevelConfig coarse_vae() const {
    VaeLevelConfig c;
    c.input_resolution = coarse_resolution;
    c.dense_bottleneck = true;
    c.latent_channels = latent_channels;
    c.width = vae_width_coarse;
    c.lambda_bce = lambda_bce;
    c.lambda_l1 = lambda_l1;
    c.lambda_kl = lambda_kl;
    return c;
  }

  VaeLevelConfig fine_vae() const {
    VaeLevelConfig c = coarse_vae();
    c.input_resolution = fine_resolution;
    c.dense_bottleneck = false;
    c.width = vae_width_fine;
    return c;
  }

  DenoiserConfig coarse_denoiser() const {
    DenoiserConfig d;
    d.latent_channels = latent_channels;
    d.in_channels = latent_channels + cond_channels;
    d.width = denoiser_width;
    d.steps = diffusion_steps;
    return d;
  }

  // the fine denoiser sees one extra channel carrying the coarse occupancy
  DenoiserConfig fine_denoiser() const {
    DenoiserConfig d = coarse_denoiser();
    d.in_channels = latent_channels + cond_channels + 1;
    return d;
  }

  ArConfig ar() const {
    ArConfig a;
    a.vocab.coord_bins = coord_bins;
    a.width = ar_width;
    a.blocks = ar_blocks;
    a.heads = ar_heads;
    a.mlp_hidden = ar_mlp;
    a.prompt_len = prompt_len;
    a.prompt_dim = prompt_dim;
    a.max_positions = max_positions;
    return a;
  }

  DiffusionSchedule schedule() const { return DiffusionSchedule::linear(diffusion_steps); }

  nlohmann::json to_json() const {
    return {{"coarse_resolution", coarse_resolution},
            {"fine_resolution", fine_resolution},
            {"latent_channels", latent_channels},
            {"vae_width_coarse", vae_width_coarse},
            {"vae_width_fine", vae_width_fine},
            {"denoiser_width", denoiser_width},
            {"cond_channels", cond_channels},
            {"diffusion_steps", diffusion_steps},
            {"lambda_bce", lambda_bce},
            {"lambda_l1", lambda_l1},
            {"lambda_kl", lambda_kl},
            {"coord_bins", coord_bins},
            {"ar_width", ar_width},
            {"ar_blocks", ar_blocks},
            {"ar_heads", ar_heads},
            {"ar_mlp", ar_mlp},
            {"prompt_len", prompt_len},
            {"prompt_dim", prompt_dim},
            {"max_positions", max_positions},
            {"prompt_points", prompt_points},
            {"gt_samples", gt_samples}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.coarse_resolution = j.value("coarse_resolution", c.coarse_resolution);
    c.fine_resolution = j.value("fine_resolution", c.fine_resolution);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.vae_width_coarse = j.value("vae_width_coarse", c.vae_width_coarse);
    c.vae_width_fine = j.value("vae_width_fine", c.vae_width_fine);
    c.denoiser_width = j.value("denoiser_width", c.denoiser_width);
    c.cond_channels = j.value("cond_channels", c.cond_channels);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.lambda_bce = j.value("lambda_bce", c.lambda_bce);
    c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
    c.lambda_kl = j.value("lambda_kl", c.lambda_kl);
    c.coord_bins = j.value("coord_bins", c.coord_bins);
    c.ar_width = j.value("ar_width", c.ar_width);
    c.ar_blocks = j.value("ar_blocks", c.ar_blocks);
    c.ar_heads = j.value("ar_heads", c.ar_heads);
    c.ar_mlp = j.value("ar_mlp", c.ar_mlp);
    c.prompt_len = j.value("prompt_len", c.prompt_len);
    c.prompt_dim = j.value("prompt_dim", c.prompt_dim);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.prompt_points = j.value("prompt_points", c.prompt_points);
    c.gt_samples = j.value("gt_samples", c.gt_samples);
    return c;
  }
};

// ---------------------------------------------------------------------------
// stage parameter stores
// ---------------------------------------------------------------------------

inline ParamStore init_vae_params(const VaeLevelConfig& cfg, uint64_t seed) {
  ParamStore p;
  p.init_seed = seed;
  p.hyper = {{"kind", "vae"},
             {"input_resolution", cfg.input_resolution},
             {"dense_bottleneck", cfg.dense_bottleneck},
             {"latent_channels", cfg.latent_channels},
             {"width", cfg.width}};
  register_vae(p, "vae", cfg, Rng(seed));
  return p;
}

inline ParamStore init_diffusion_params(const DenoiserConfig& dcfg, int cond_channels,
                                        uint64_t seed) {
  ParamStore p;
  p.init_seed = seed;
  p.hyper = {{"kind", "diffusion"},
             {"in_channels", dcfg.in_channels},
             {"latent_channels", dcfg.latent_channels},
             {"width", dcfg.width},
             {"steps", dcfg.steps},
             {"cond_channels", cond_channels}};
  Rng root(seed);
  register_denoiser(p, "dn", dcfg, root.fork("dn"));
  register_condition(p, "cond", cond_channels, root.fork("cond"));
  return p;
}

inline ParamStore init_ar_params(const ArConfig& cfg, uint64_t seed) {
  ParamStore p;
  p.init_seed = seed;
  p.hyper = {{"kind", "ar"},
             {"vocab", cfg.vocab.size()},
             {"width", cfg.width},
             {"blocks", cfg.blocks},
             {"heads", cfg.heads},
             {"prompt_len", cfg.prompt_len}};
  Rng root(seed);
  register_prompt_encoder(p, "ep", cfg, root.fork("ep"));
  register_ar_model(p, "ar", cfg, root.fork("ar"));
  return p;
}

struct StageParams {
  ParamStore vae_coarse, vae_fine, diff_coarse, diff_fine, ar;

  static StageParams init(const ModelConfig& cfg, uint64_t seed) {
    Rng root(seed);
    StageParams s;
    s.vae_coarse = init_vae_params(cfg.coarse_vae(), root.fork("vae_coarse").u64());
    s.vae_fine = init_vae_params(cfg.fine_vae(), root.fork("vae_fine").u64());
    s.diff_coarse =
        init_diffusion_params(cfg.coarse_denoiser(), cfg.cond_channels, root.fork("diff_coarse").u64());
    s.diff_fine =
        init_diffusion_params(cfg.fine_denoiser(), cfg.cond_channels, root.fork("diff_fine").u64());
    s.ar = init_ar_params(cfg.ar(), root.fork("ar").u64());
    return s;
  }
};

}  // namespace locadit
