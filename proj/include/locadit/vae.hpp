//
// Hierarchical sparse VAEs over voxel grids. Both levels share one encoder
// shape (submanifold conv, two stride-2 stages, bottleneck conv, mu/logvar
// heads); the coarse level densifies at the bottleneck so the decoder sees
// unoccupied space, the fine level keeps a sparse posterior. The decoder
// upsamples twice with per-voxel keep logits (sigmoid < 0.5 prunes) and
// predicts a 3-channel normal per kept voxel.
//
// The taped *_t functions carry gradients for training; the plain wrappers
// run the same graphs and extract values.
//

#pragma once

#include <map>

#include "locadit/nets.hpp"
#include "locadit/rng.hpp"
#include "locadit/schedule.hpp"

namespace locadit {

enum class LatentKind { dense, sparse };

struct LatentGrid {
  LatentKind kind = LatentKind::dense;
  uint32_t resolution = 0;
  uint32_t channels = 0;          // L
  std::vector<VoxelIdx> support;  // site list; dense kind enumerates the full volume
  std::vector<double> mean, logvar;  // posterior form (empty for plain samples)
  std::vector<double> values;        // sampled/selected z, sites() * channels

  size_t sites() const { return support.size(); }

  void check_finite() const {
    for (double v : mean)
      if (!std::isfinite(v)) fail(errc::shape_mismatch, "non-finite posterior mean");
    for (double v : logvar)
      if (!std::isfinite(v)) fail(errc::shape_mismatch, "non-finite posterior logvar");
    for (double v : values)
      if (!std::isfinite(v)) fail(errc::shape_mismatch, "non-finite latent value");
  }
};

struct VaeLevelConfig {
  uint32_t input_resolution = 16;
  bool dense_bottleneck = true;  // coarse level
  int in_channels = 3;
  int latent_channels = 8;
  int width = 16;
  double lambda_bce = 20.0, lambda_l1 = 50.0, lambda_kl = 0.03;
  double logit_cap = 30.0;

  uint32_t latent_resolution() const { return input_resolution / 4; }
};

inline void register_vae(ParamStore& p, const std::string& prefix, const VaeLevelConfig& cfg,
                         const Rng& root) {
  int W1 = cfg.width, W2 = 2 * cfg.width, L = cfg.latent_channels;
  register_conv3(p, prefix + ".enc0", cfg.in_channels, W1, root);
  register_down2(p, prefix + ".down1", W1, W2, root);
  register_down2(p, prefix + ".down2", W2, W2, root);
  register_conv3(p, prefix + ".encb", W2, W2, root);
  register_linear(p, prefix + ".mu", W2, L, root);
  register_linear(p, prefix + ".lv", W2, L, root, /*zero=*/true);
  // a near-deterministic posterior at init: reconstruction must not start
  // drowned in reparameterization noise
  for (double& v : p.view(prefix + ".lv.b")) v = -6.0;
  register_conv3(p, prefix + ".dec0", L, W2, root);
  register_up2(p, prefix + ".up1", W2, W1, root);
  register_conv3(p, prefix + ".dec1", W1, W1, root);
  register_linear(p, prefix + ".keep1", W1, 1, root);
  register_up2(p, prefix + ".up2", W1, W1, root);
  register_conv3(p, prefix + ".dec2", W1, W1, root);
  register_linear(p, prefix + ".keep2", W1, 1, root);
  register_linear(p, prefix + ".normal", W1, 3, root);
}

// ---------------------------------------------------------------------------
// target hierarchy
// ---------------------------------------------------------------------------

struct GridHierarchy {
  SiteSet full, mid, lat;
  const SparseVoxelGrid* grid = nullptr;  // features aligned with full.sites

  static GridHierarchy of(const SparseVoxelGrid& g) {
    GridHierarchy h;
    h.full = SiteSet::of(g.resolution, g.indices);  // already sorted unique
    h.mid = parents_of(h.full);
    h.lat = parents_of(h.mid);
    h.grid = &g;
    return h;
  }
};

/// 1.0 where a candidate site is occupied in `positives`, else 0.0.
inline std::vector<double> occupancy_targets(const SiteSet& cands, const SiteSet& positives) {
  std::vector<double> t(cands.count());
  for (size_t i = 0; i < cands.count(); ++i)
    t[i] = positives.row_of(cands.sites[i]) >= 0 ? 1.0 : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

struct VaeEncodeOut {
  Var mu, logvar;
  SiteSet lat;
};

inline VaeEncodeOut vae_encode_t(Tape& t, ParamStore& p, const std::string& prefix,
                                 const VaeLevelConfig& cfg, const SparseVoxelGrid& input) {
  if (input.resolution != cfg.input_resolution)
    fail(errc::resolution_mismatch, "vae_encode input resolution");
  if (!input.empty() && input.channels != uint32_t(cfg.in_channels))
    fail(errc::shape_mismatch, "vae_encode input channels");

  SiteSet s0 = SiteSet::of(input.resolution, input.indices);
  Var x0 = t.input(input.features, s0.count(), size_t(cfg.in_channels));
  Var h0 = t.relu(conv3(t, p, prefix + ".enc0", x0, conv_table(s0, s0), s0.count()));

  SiteSet s1 = parents_of(s0);
  Var h1 = t.relu(down2(t, p, prefix + ".down1", h0, down_table(s1, s0), s1.count()));
  SiteSet s2 = parents_of(s1);
  Var h2 = t.relu(down2(t, p, prefix + ".down2", h1, down_table(s2, s1), s2.count()));

  VaeEncodeOut out;
  Var hb_in = h2;
  if (cfg.dense_bottleneck) {
    out.lat = SiteSet::dense(cfg.latent_resolution());
    hb_in = t.gather_rows(h2, map_rows(out.lat, s2));
  } else {
    out.lat = std::move(s2);
  }
  Var hb = t.relu(conv3(t, p, prefix + ".encb", hb_in, conv_table(out.lat, out.lat), out.lat.count()));
  out.mu = linear(t, p, prefix + ".mu", hb);
  out.logvar = linear(t, p, prefix + ".lv", hb);
  return out;
}

/// Posterior over the level's latent sites.
inline LatentGrid vae_encode(const SparseVoxelGrid& input, const VaeLevelConfig& cfg,
                             ParamStore& params, const std::string& prefix) {
  Tape t;
  VaeEncodeOut enc = vae_encode_t(t, params, prefix, cfg, input);
  LatentGrid post;
  post.kind = cfg.dense_bottleneck ? LatentKind::dense : LatentKind::sparse;
  post.resolution = cfg.latent_resolution();
  post.channels = uint32_t(cfg.latent_channels);
  post.support = enc.lat.sites;
  post.mean.assign(t.val(enc.mu).begin(), t.val(enc.mu).end());
  post.logvar.assign(t.val(enc.logvar).begin(), t.val(enc.logvar).end());
  post.check_finite();
  return post;
}

inline LatentGrid sample_posterior(const LatentGrid& post, Rng& rng) {
  LatentGrid z = post;
  z.values.resize(post.mean.size());
  for (size_t i = 0; i < z.values.size(); ++i)
    z.values[i] = post.mean[i] + std::exp(0.5 * post.logvar[i]) * rng.normal();
  z.mean.clear();
  z.logvar.clear();
  return z;
}

inline LatentGrid mean_latent(const LatentGrid& post) {
  LatentGrid z = post;
  z.values = post.mean;
  z.mean.clear();
  z.logvar.clear();
  return z;
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

struct VaeDecodeOut {
  SiteSet cand1, cand2;  // candidate sites at mid and input resolution
  Var logits1, logits2;  // [n x 1] keep logits
  Var normals;           // [n2 x 3]
};

// Teacher-forced when `teacher_mid` is given (training against a target
// hierarchy); otherwise stage-1 pruning selects the stage-2 parents.
inline VaeDecodeOut vae_decode_t(Tape& t, ParamStore& p, const std::string& prefix,
                                 const VaeLevelConfig& cfg, Var z, const SiteSet& lat,
                                 const SiteSet* teacher_mid = nullptr) {
  Var g0 = t.relu(conv3(t, p, prefix + ".dec0", z, conv_table(lat, lat), lat.count()));

  VaeDecodeOut out;
  Var u1 = up2(t, p, prefix + ".up1", g0);
  out.cand1 = children_of(lat);
  Var h1 = t.relu(conv3(t, p, prefix + ".dec1", u1, conv_table(out.cand1, out.cand1),
                        out.cand1.count()));
  out.logits1 = linear(t, p, prefix + ".keep1", h1);

  SiteSet parents2;
  if (teacher_mid) {
    parents2 = *teacher_mid;
  } else {
    std::vector<VoxelIdx> kept;
    auto lv = t.val(out.logits1);
    for (size_t i = 0; i < out.cand1.count(); ++i)
      if (lv[i] >= 0.0) kept.push_back(out.cand1.sites[i]);  // sigmoid >= 0.5
    parents2 = SiteSet::of(out.cand1.resolution, std::move(kept));
  }

  Var h1p = t.gather_rows(h1, map_rows(parents2, out.cand1));
  Var u2 = up2(t, p, prefix + ".up2", h1p);
  out.cand2 = children_of(parents2);
  Var h2 = t.relu(conv3(t, p, prefix + ".dec2", u2, conv_table(out.cand2, out.cand2),
                        out.cand2.count()));
  out.logits2 = linear(t, p, prefix + ".keep2", h2);
  out.normals = linear(t, p, prefix + ".normal", h2);
  return out;
}

/// Inference decode: prune by keep logits, emit unit normals per kept voxel.
inline SparseVoxelGrid vae_decode(const LatentGrid& z, const VaeLevelConfig& cfg,
                                  ParamStore& params, const std::string& prefix) {
  if ((z.kind == LatentKind::dense) != cfg.dense_bottleneck)
    fail(errc::kind_mismatch, "latent kind does not match the level");
  if (z.resolution != cfg.latent_resolution())
    fail(errc::resolution_mismatch, "vae_decode latent resolution");
  if (z.values.size() != z.sites() * z.channels)
    fail(errc::shape_mismatch, "latent values incomplete (sample the posterior first)");

  Tape t;
  SiteSet lat = SiteSet::of(z.resolution, z.support, /*sort=*/false);
  Var zv = t.input(z.values, lat.count(), z.channels);
  VaeDecodeOut dec = vae_decode_t(t, params, prefix, cfg, zv, lat, nullptr);

  SparseVoxelGrid out;
  out.resolution = cfg.input_resolution;
  out.channels = 3;
  auto logits = t.val(dec.logits2);
  auto normals = t.val(dec.normals);
  for (size_t i = 0; i < dec.cand2.count(); ++i) {
    if (logits[i] < 0.0) continue;  // sigmoid < 0.5 carves the voxel away
    out.indices.push_back(dec.cand2.sites[i]);
    Vec3 n{normals[i * 3], normals[i * 3 + 1], normals[i * 3 + 2]};
    n = norm(n) > 1e-12 ? normalized(n) : Vec3{0, 0, 1};
    out.features.insert(out.features.end(), {n.x, n.y, n.z});
  }
  out.sort_canonical();
  return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

struct DecodedGrid {  // plain mirror of VaeDecodeOut for loss computation
  SiteSet cand1, cand2;
  std::vector<double> logits1, logits2;
  std::vector<double> normals;  // cand2 x 3
};

namespace detail {

inline double bce_logit(double logit, double target, double cap) {
  double l = std::clamp(logit, -cap, cap);
  return std::max(l, 0.0) - l * target + std::log1p(std::exp(-std::abs(l)));
}

}  // namespace detail

// Composite reconstruction loss: occupancy BCE over both decoder stages'
// candidates, L1 on predicted normals at true-positive voxels, and the KL of
// the posterior against a unit Gaussian. total = l0*bce + l1*l1 + l2*kl.
inline LossBreakdown vae_loss(const DecodedGrid& pred, const GridHierarchy& target,
                              const LatentGrid& posterior, double lambda0 = 20.0,
                              double lambda1 = 50.0, double lambda2 = 0.03, double cap = 30.0) {
  if (pred.logits1.size() != pred.cand1.count() || pred.logits2.size() != pred.cand2.count() ||
      pred.normals.size() != pred.cand2.count() * 3)
    fail(errc::shape_mismatch, "decoded grid fields inconsistent");

  double bce = 0;
  size_t n_cand = pred.cand1.count() + pred.cand2.count();
  for (size_t i = 0; i < pred.cand1.count(); ++i) {
    double tgt = target.mid.row_of(pred.cand1.sites[i]) >= 0 ? 1.0 : 0.0;
    bce += detail::bce_logit(pred.logits1[i], tgt, cap);
  }
  for (size_t i = 0; i < pred.cand2.count(); ++i) {
    double tgt = target.full.row_of(pred.cand2.sites[i]) >= 0 ? 1.0 : 0.0;
    bce += detail::bce_logit(pred.logits2[i], tgt, cap);
  }
  if (n_cand) bce /= double(n_cand);

  double l1 = 0;
  size_t n_tp = 0;
  for (size_t i = 0; i < pred.cand2.count(); ++i) {
    int64_t row = target.full.row_of(pred.cand2.sites[i]);
    if (row < 0) continue;
    ++n_tp;
    for (int c = 0; c < 3; ++c)
      l1 += std::abs(pred.normals[i * 3 + c] - target.grid->feature(size_t(row))[c]);
  }
  if (n_tp) l1 /= double(n_tp * 3);

  double kl = 0;
  for (size_t i = 0; i < posterior.mean.size(); ++i) {
    double m = posterior.mean[i], lv = posterior.logvar[i];
    kl += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  if (!posterior.mean.empty()) kl /= double(posterior.mean.size());

  LossBreakdown lb;
  lb.components = {{"bce", bce}, {"l1_normals", l1}, {"kl", kl}};
  lb.weights = {{"bce", lambda0}, {"l1_normals", lambda1}, {"kl", lambda2}};
  lb.total = lambda0 * bce + lambda1 * l1 + lambda2 * kl;
  return lb;
}

inline DecodedGrid materialize(const Tape& t, const VaeDecodeOut& dec) {
  DecodedGrid d;
  d.cand1 = dec.cand1;
  d.cand2 = dec.cand2;
  d.logits1.assign(t.val(dec.logits1).begin(), t.val(dec.logits1).end());
  d.logits2.assign(t.val(dec.logits2).begin(), t.val(dec.logits2).end());
  d.normals.assign(t.val(dec.normals).begin(), t.val(dec.normals).end());
  return d;
}

/// Intersection-over-union of two occupancy index sets.
inline double occupancy_iou(const SparseVoxelGrid& a, const SparseVoxelGrid& b) {
  SiteSet sb = SiteSet::of(b.resolution, b.indices);
  size_t inter = 0;
  for (const VoxelIdx& v : a.indices) inter += sb.row_of(v) >= 0 ? 1 : 0;
  size_t uni = a.count() + b.count() - inter;
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace locadit
