//
// Stage-wise training loops: momentum SGD over the taped losses, cycling
// through the example set, bit-deterministic for a fixed (config, seed).
// Every loop returns newline-ready log records {iter, stage, components}.
//

#pragma once

#include "locadit/model.hpp"

namespace locadit {

struct TrainRecord {
  int iter = 0;
  std::string stage;
  double total = 0;
  std::map<std::string, double> components;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"iter", iter}, {"stage", stage}, {"total", total}};
    for (const auto& [k, v] : components) j[k] = v;
    return j;
  }
};

using TrainLog = std::vector<TrainRecord>;

// ---------------------------------------------------------------------------
// VAE stage
// ---------------------------------------------------------------------------

inline TrainLog train_vae(ParamStore& params, const VaeLevelConfig& cfg,
                          const std::vector<SparseVoxelGrid>& grids, int iters, double lr,
                          uint64_t seed, const std::string& stage_name = "vae",
                          int log_every = 10) {
  if (grids.empty()) fail(errc::bad_config, "train_vae without examples");
  std::vector<GridHierarchy> hier;
  hier.reserve(grids.size());
  for (const auto& g : grids) hier.push_back(GridHierarchy::of(g));

  Rng noise = Rng(seed).fork("vae.noise");
  TrainLog log;
  for (int iter = 0; iter < iters; ++iter) {
    const SparseVoxelGrid& g = grids[size_t(iter) % grids.size()];
    const GridHierarchy& h = hier[size_t(iter) % grids.size()];

    Tape t;
    VaeEncodeOut enc = vae_encode_t(t, params, "vae", cfg, g);
    std::vector<double> eps(enc.mu.size());
    for (double& e : eps) e = noise.normal();
    Var z = t.add(enc.mu,
                  t.mul(t.exp_(t.scale(enc.logvar, 0.5)), t.input(eps, enc.mu.rows, enc.mu.cols)));
    VaeDecodeOut dec = vae_decode_t(t, params, "vae", cfg, z, enc.lat, &h.mid);

    std::vector<double> occ = occupancy_targets(dec.cand1, h.mid);
    std::vector<double> occ2 = occupancy_targets(dec.cand2, h.full);
    occ.insert(occ.end(), occ2.begin(), occ2.end());
    Var bce = t.bce_logits_mean(t.concat_rows(dec.logits1, dec.logits2), occ, cfg.logit_cap);

    std::vector<int64_t> tp_rows;
    std::vector<double> tp_normals;
    for (size_t i = 0; i < dec.cand2.count(); ++i) {
      int64_t row = h.full.row_of(dec.cand2.sites[i]);
      if (row < 0) continue;
      tp_rows.push_back(int64_t(i));
      for (int c = 0; c < 3; ++c) tp_normals.push_back(h.grid->feature(size_t(row))[c]);
    }
    Var l1 = t.l1_mean(t.gather_rows(dec.normals, tp_rows), tp_normals);
    Var kl = t.kl_gauss_mean(enc.mu, enc.logvar);
    Var total = t.add(t.add(t.scale(bce, cfg.lambda_bce), t.scale(l1, cfg.lambda_l1)),
                      t.scale(kl, cfg.lambda_kl));

    params.zero_grad();
    t.backward(total);
    params.sgd_step(lr);

    if (iter % log_every == 0 || iter + 1 == iters) {
      TrainRecord rec;
      rec.iter = iter;
      rec.stage = stage_name;
      rec.total = t.scalar(total);
      rec.components = {{"bce", t.scalar(bce)}, {"l1_normals", t.scalar(l1)}, {"kl", t.scalar(kl)}};
      log.push_back(std::move(rec));
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// diffusion stage
// ---------------------------------------------------------------------------

struct DiffusionExample {
  LatentGrid z0;                   // target latent (posterior mean), values set
  std::vector<double> cond_col;    // occupancy column of the degraded input, per site
  std::vector<double> extra_cond;  // sites x extra channels (fine: coarse occupancy)
  size_t extra_channels = 0;
};

inline TrainLog train_diffusion(ParamStore& params, const DenoiserConfig& dcfg,
                                const std::vector<DiffusionExample>& examples,
                                const DiffusionSchedule& schedule, int iters, double lr,
                                uint64_t seed, const std::string& stage_name = "diffusion",
                                int log_every = 10) {
  if (examples.empty()) fail(errc::bad_config, "train_diffusion without examples");
  const auto& lift_shape = params.slice("cond.lift").shape;
  size_t cond_ch = size_t(lift_shape[1]);

  // per-example static structure
  std::vector<SiteSet> sites;
  std::vector<std::vector<int64_t>> tables;
  for (const auto& ex : examples) {
    sites.push_back(SiteSet::of(ex.z0.resolution, ex.z0.support, /*sort=*/false));
    tables.push_back(conv_table(sites.back(), sites.back()));
    if (ex.cond_col.size() != ex.z0.sites()) fail(errc::shape_mismatch, "cond_col size");
    if (ex.extra_cond.size() != ex.z0.sites() * ex.extra_channels)
      fail(errc::shape_mismatch, "extra_cond size");
  }

  Rng steps = Rng(seed).fork("diffusion.t");
  Rng noise = Rng(seed).fork("diffusion.eps");
  TrainLog log;
  for (int iter = 0; iter < iters; ++iter) {
    size_t e = size_t(iter) % examples.size();
    const DiffusionExample& ex = examples[e];
    int step = 1 + int(steps.index(uint64_t(schedule.steps)));  // t ~ U{1..T}
    std::vector<double> eps(ex.z0.values.size());
    for (double& v : eps) v = noise.normal();

    Tape t;
    Var lift = t.param(params, "cond.lift", 1, cond_ch);
    Var cond = t.matmul(t.input(ex.cond_col, ex.z0.sites(), 1), lift);
    if (ex.extra_channels)
      cond = t.concat_cols(cond, t.input(ex.extra_cond, ex.z0.sites(), ex.extra_channels));
    Var loss = diffusion_loss_t(t, params, "dn", dcfg, ex.z0, step, eps, cond, schedule, tables[e]);

    params.zero_grad();
    t.backward(loss);
    params.sgd_step(lr);

    if (iter % log_every == 0 || iter + 1 == iters) {
      TrainRecord rec;
      rec.iter = iter;
      rec.stage = stage_name;
      rec.total = t.scalar(loss);
      rec.components = {{"mse", t.scalar(loss)}};
      log.push_back(std::move(rec));
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// autoregressive stage (prompt encoder trained jointly)
// ---------------------------------------------------------------------------

struct ArExample {
  PointCloud prompt_cloud;  // normalized, with normals
  TokenSequence tokens;
};

inline TrainLog train_ar(ParamStore& params, const ArConfig& cfg,
                         const std::vector<ArExample>& examples, int iters, double lr,
                         uint64_t seed, const std::string& stage_name = "ar",
                         int log_every = 10) {
  if (examples.empty()) fail(errc::bad_config, "train_ar without examples");
  (void)seed;  // teacher forcing is deterministic; kept for interface symmetry
  TrainLog log;
  for (int iter = 0; iter < iters; ++iter) {
    const ArExample& ex = examples[size_t(iter) % examples.size()];
    Tape t;
    Var prompt = encode_prompt_t(t, params, "ep", cfg, ex.prompt_cloud);
    Var loss = ar_loss_t(t, params, "ar", cfg, prompt, ex.tokens);
    params.zero_grad();
    t.backward(loss);
    params.sgd_step(lr);
    if (iter % log_every == 0 || iter + 1 == iters) {
      TrainRecord rec;
      rec.iter = iter;
      rec.stage = stage_name;
      rec.total = t.scalar(loss);
      rec.components = {{"xent", t.scalar(loss)}};
      log.push_back(std::move(rec));
    }
  }
  return log;
}

}  // namespace locadit
