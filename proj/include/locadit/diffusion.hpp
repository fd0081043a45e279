//
// Conditional latent diffusion: closed-form forward perturbation, a 3-layer
// convolutional residual denoiser with per-step feature modulation, the
// point-cloud condition lift, the noise-prediction objective, and ancestral
// sampling over a site set.
//

#pragma once

#include <functional>

#include "locadit/vae.hpp"

namespace locadit {

// ---------------------------------------------------------------------------
// forward process
// ---------------------------------------------------------------------------

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, elementwise. t = 0 is identity.
inline LatentGrid diffuse_forward(const LatentGrid& z0, int t, std::span<const double> eps,
                                  const DiffusionSchedule& schedule) {
  if (t < 0 || t > schedule.steps) fail(errc::step_out_of_range, "diffuse_forward step");
  if (eps.size() != z0.values.size()) fail(errc::shape_mismatch, "eps shape != z0 shape");
  double ab = schedule.alphabar(t);
  double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentGrid zt = z0;
  for (size_t i = 0; i < zt.values.size(); ++i) zt.values[i] = a * z0.values[i] + b * eps[i];
  return zt;
}

// ---------------------------------------------------------------------------
// condition encoder
// ---------------------------------------------------------------------------

inline void register_condition(ParamStore& p, const std::string& prefix, int channels,
                               const Rng& root) {
  p.add_uniform(prefix + ".lift", {1, channels}, 0.5, root);
}

// Voxelizes the input cloud at the latent resolution and lifts every occupied
// voxel through one learned channel vector; empty voxels stay exactly zero.
inline DenseGrid encode_condition(const PointCloud& p_in, uint32_t latent_resolution,
                                  ParamStore& params, const std::string& prefix) {
  if (p_in.empty()) fail(errc::empty_cloud, "encode_condition on empty cloud");
  auto lift = params.view(prefix + ".lift");
  DenseGrid cond;
  cond.resolution = latent_resolution;
  cond.channels = uint32_t(lift.size());
  cond.occupancy.assign(cond.cells(), 0.0);
  cond.features.assign(cond.cells() * cond.channels, 0.0);
  SparseVoxelGrid occ = voxelize(p_in, latent_resolution);
  for (const VoxelIdx& v : occ.indices) {
    size_t c = cond.cell(v[0], v[1], v[2]);
    cond.occupancy[c] = 1.0;
    for (size_t ch = 0; ch < lift.size(); ++ch) cond.features[c * cond.channels + ch] = lift[ch];
  }
  return cond;
}

/// Taped condition rows aligned with `sites`: occupancy column times the lift.
inline Var condition_rows_t(Tape& t, ParamStore& p, const std::string& prefix,
                            const PointCloud& p_in, const SiteSet& sites) {
  const auto& shape = p.slice(prefix + ".lift").shape;
  SparseVoxelGrid occ = voxelize(p_in, sites.resolution);
  SiteSet occ_sites = SiteSet::of(sites.resolution, occ.indices);
  std::vector<double> col(sites.count());
  for (size_t i = 0; i < sites.count(); ++i)
    col[i] = occ_sites.row_of(sites.sites[i]) >= 0 ? 1.0 : 0.0;
  Var occ_col = t.input(col, sites.count(), 1);
  Var lift = t.param(p, prefix + ".lift", 1, size_t(shape[1]));
  return t.matmul(occ_col, lift);  // [n x channels]
}

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------

struct DenoiserConfig {
  int in_channels = 12;      // latent + condition channels
  int latent_channels = 8;   // output
  int width = 32;
  int steps = 100;
};

inline void register_denoiser(ParamStore& p, const std::string& prefix, const DenoiserConfig& cfg,
                              const Rng& root) {
  register_conv3(p, prefix + ".c1", cfg.in_channels, cfg.width, root);
  register_step_film(p, prefix + ".f1", cfg.steps, cfg.width, root);
  register_conv3(p, prefix + ".c2", cfg.width, cfg.width, root);
  register_step_film(p, prefix + ".f2", cfg.steps, cfg.width, root);
  // zero-init the output conv so the initial prediction is exactly zero noise
  register_conv3(p, prefix + ".c3", cfg.width, cfg.latent_channels, root, /*zero=*/true);
}

// h1 = relu(film1(conv1(x))); h2 = relu(film2(conv2(h1))) + h1;
// eps = conv3(h2) / sqrt(1 - abar_t). The fixed output scale keeps the raw
// conv target O(1) at every step (the noise target itself grows like
// 1/sqrt(1-abar_t) toward t=1).
inline Var denoiser_forward_t(Tape& t, ParamStore& p, const std::string& prefix, Var x, int step,
                              const std::vector<int64_t>& table, size_t n_sites,
                              const DiffusionSchedule& schedule) {
  Var h1 = t.relu(step_film(t, p, prefix + ".f1", conv3(t, p, prefix + ".c1", x, table, n_sites), step));
  Var h2 = t.add(t.relu(step_film(t, p, prefix + ".f2", conv3(t, p, prefix + ".c2", h1, table, n_sites), step)), h1);
  double out_scale = 1.0 / std::sqrt(std::max(1.0 - schedule.alphabar(step), 1e-12));
  return t.scale(conv3(t, p, prefix + ".c3", h2, table, n_sites), out_scale);
}

// ---------------------------------------------------------------------------
// objective
// ---------------------------------------------------------------------------

// ||eps - eps_theta(z_t, t, cond)||^2 averaged over elements; z_t built from
// the closed form. `cond` rows align with the latent site order.
inline Var diffusion_loss_t(Tape& t, ParamStore& p, const std::string& prefix,
                            const DenoiserConfig& dcfg, const LatentGrid& z0, int step,
                            std::span<const double> eps, Var cond,
                            const DiffusionSchedule& schedule,
                            const std::vector<int64_t>& table) {
  if (step < 1 || step > schedule.steps) fail(errc::step_out_of_range, "diffusion_loss step");
  LatentGrid zt = diffuse_forward(z0, step, eps, schedule);
  Var ztv = t.input(zt.values, zt.sites(), zt.channels);
  if (cond.rows != ztv.rows) fail(errc::shape_mismatch, "condition rows != latent sites");
  Var x = t.concat_cols(ztv, cond);
  if (x.cols != size_t(dcfg.in_channels)) fail(errc::shape_mismatch, "denoiser input channels");
  Var eps_hat = denoiser_forward_t(t, p, prefix, x, step, table, zt.sites(), schedule);
  return t.mse_mean(eps_hat, eps);
}

inline LossBreakdown diffusion_loss(ParamStore& params, const std::string& prefix,
                                    const DenoiserConfig& dcfg, const LatentGrid& z0, int step,
                                    std::span<const double> eps, const PointCloud& p_in,
                                    const std::string& cond_prefix,
                                    const DiffusionSchedule& schedule) {
  Tape t;
  SiteSet sites = SiteSet::of(z0.resolution, z0.support, /*sort=*/false);
  Var cond = condition_rows_t(t, params, cond_prefix, p_in, sites);
  auto table = conv_table(sites, sites);
  Var loss = diffusion_loss_t(t, params, prefix, dcfg, z0, step, eps, cond, schedule, table);
  LossBreakdown lb;
  lb.components = {{"mse", t.scalar(loss)}};
  lb.weights = {{"mse", 1.0}};
  lb.total = t.scalar(loss);
  return lb;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// Standard ancestral reversal from unit Gaussian noise. The denoiser is a
// plain function so oracle models can drive the recursion in tests.
inline std::vector<double> ancestral_sample(
    size_t n_elements, const DiffusionSchedule& schedule, Rng& rng,
    const std::function<std::vector<double>(const std::vector<double>&, int)>& denoise) {
  std::vector<double> z(n_elements);
  for (double& v : z) v = rng.normal();
  for (int t = schedule.steps; t >= 1; --t) {
    std::vector<double> eps_hat = denoise(z, t);
    if (eps_hat.size() != n_elements) fail(errc::shape_mismatch, "denoiser output size");
    double beta = schedule.beta[t - 1];
    double ab_t = schedule.alphabar(t), ab_prev = schedule.alphabar(t - 1);
    double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    double eps_coef = beta / std::sqrt(1.0 - ab_t);
    double sigma = t > 1 ? std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta) : 0.0;
    for (size_t i = 0; i < n_elements; ++i) {
      double mean = inv_sqrt_alpha * (z[i] - eps_coef * eps_hat[i]);
      z[i] = mean + (sigma > 0 ? sigma * rng.normal() : 0.0);
    }
  }
  return z;
}

// Samples a latent on the given support, conditioned on extra per-site
// feature rows (condition lift, and any hierarchy channels the caller
// concatenates). Deterministic per seed.
inline LatentGrid diffusion_sample(ParamStore& params, const std::string& prefix,
                                   const DenoiserConfig& dcfg, const SiteSet& sites,
                                   LatentKind kind, const std::vector<double>& cond_rows,
                                   size_t cond_channels, const DiffusionSchedule& schedule,
                                   uint64_t seed) {
  size_t L = size_t(dcfg.latent_channels);
  if (cond_rows.size() != sites.count() * cond_channels)
    fail(errc::shape_mismatch, "condition rows shape");
  if (size_t(dcfg.in_channels) != L + cond_channels)
    fail(errc::shape_mismatch, "denoiser channels != latent + condition");

  auto table = conv_table(sites, sites);
  auto denoise = [&](const std::vector<double>& z, int step) {
    Tape t;
    Var zv = t.input(z, sites.count(), L);
    Var cv = t.input(cond_rows, sites.count(), cond_channels);
    Var eps_hat = denoiser_forward_t(t, params, prefix, t.concat_cols(zv, cv), step, table,
                                     sites.count(), schedule);
    return std::vector<double>(t.val(eps_hat).begin(), t.val(eps_hat).end());
  };

  Rng rng = Rng(seed).fork("diffusion.sample");
  LatentGrid out;
  out.kind = kind;
  out.resolution = sites.resolution;
  out.channels = uint32_t(L);
  out.support = sites.sites;
  out.values = ancestral_sample(sites.count() * L, schedule, rng, denoise);
  return out;
}

}  // namespace locadit
