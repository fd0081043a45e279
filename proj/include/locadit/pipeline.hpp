//
// End-to-end wiring: instance preparation (normalize, sample, estimate
// normals, voxelize, splat, tokenize), diffusion training example assembly,
// and the full conditional generation pipeline with its ablation switches.
//

#pragma once

#include "locadit/metrics.hpp"
#include "locadit/simulate.hpp"
#include "locadit/train.hpp"

namespace locadit {

// ---------------------------------------------------------------------------
// data preparation
// ---------------------------------------------------------------------------

struct PreparedInstance {
  std::string id;
  NormalizationTransform transform;  // world -> normalized
  PolyMesh mesh;                     // normalized, triangulated
  size_t dropped_faces = 0;
  PointCloud gt_cloud;               // normalized surface samples with normals
  SparseVoxelGrid grid_coarse, grid_fine;
  TokenSequence tokens;
};

inline PreparedInstance prepare_instance(const std::string& id, const PolyMesh& world_mesh,
                                         const ModelConfig& cfg, uint64_t seed) {
  PreparedInstance out;
  out.id = id;
  FanResult fan = triangulate_fan(world_mesh);
  out.dropped_faces = fan.dropped;
  if (fan.mesh.faces.empty()) fail(errc::empty_mesh, "mesh has no valid faces: " + id);

  PointCloud verts;
  verts.positions = fan.mesh.vertices;
  auto [unused, transform] = normalize(verts);
  out.transform = transform;
  out.mesh = apply(transform, fan.mesh);

  uint64_t inst_seed = Rng(seed).fork(id).u64();
  out.gt_cloud =
      orient_normals_canonical(estimate_normals(sample_surface(out.mesh, cfg.gt_samples, inst_seed), 30));
  out.grid_coarse = splat_normals(out.gt_cloud, voxelize(out.gt_cloud, cfg.coarse_resolution));
  out.grid_fine = splat_normals(out.gt_cloud, voxelize(out.gt_cloud, cfg.fine_resolution));
  Vocabulary vocab{cfg.coord_bins};
  out.tokens = tokenize_mesh(out.mesh, vocab);
  return out;
}

/// Deterministic fixed-size subset preserving normals (cyclic when smaller).
inline PointCloud downsample_cloud(const PointCloud& c, size_t n, uint64_t seed) {
  if (c.size() <= n) return c;
  PointCloud out;
  out.positions.reserve(n);
  Rng rng = Rng(seed).fork("downsample");
  std::vector<size_t> pick = rng.sample_without_replacement(c.size(), n);
  std::sort(pick.begin(), pick.end());
  for (size_t i : pick) {
    out.positions.push_back(c.positions[i]);
    if (c.has_normals()) out.normals.push_back(c.normals[i]);
  }
  return out;
}

/// Occupancy column of a cloud's voxelization over the given sites.
inline std::vector<double> occupancy_column(const PointCloud& cloud, const SiteSet& sites) {
  SparseVoxelGrid occ = voxelize(cloud, sites.resolution);
  SiteSet occ_sites = SiteSet::of(sites.resolution, occ.indices);
  std::vector<double> col(sites.count());
  for (size_t i = 0; i < sites.count(); ++i)
    col[i] = occ_sites.row_of(sites.sites[i]) >= 0 ? 1.0 : 0.0;
  return col;
}

// A (ground truth, degraded input) pair turned into one training example for
// the coarse denoiser: the target latent is the coarse posterior mean.
inline DiffusionExample make_coarse_diffusion_example(const PreparedInstance& inst,
                                                      const PointCloud& degraded,
                                                      const ModelConfig& cfg,
                                                      ParamStore& vae_coarse) {
  DiffusionExample ex;
  ex.z0 = mean_latent(vae_encode(inst.grid_coarse, cfg.coarse_vae(), vae_coarse, "vae"));
  SiteSet sites = SiteSet::of(ex.z0.resolution, ex.z0.support, /*sort=*/false);
  ex.cond_col = occupancy_column(degraded, sites);
  return ex;
}

// Fine-level example: sparse latent on the ground-truth support, with the
// structural occupancy channel set to 1 on every site (the support itself is
// the coarse conditioning).
inline DiffusionExample make_fine_diffusion_example(const PreparedInstance& inst,
                                                    const PointCloud& degraded,
                                                    const ModelConfig& cfg,
                                                    ParamStore& vae_fine) {
  DiffusionExample ex;
  ex.z0 = mean_latent(vae_encode(inst.grid_fine, cfg.fine_vae(), vae_fine, "vae"));
  SiteSet sites = SiteSet::of(ex.z0.resolution, ex.z0.support, /*sort=*/false);
  ex.cond_col = occupancy_column(degraded, sites);
  ex.extra_channels = 1;
  ex.extra_cond.assign(sites.count(), 1.0);
  return ex;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

struct PipelineFlags {
  bool no_priors = false;   // feed the input cloud directly to the prompt encoder
  bool skip_coarse = false; // fine support from the voxelized input
  bool skip_fine = false;   // emit the coarse decode as the recovered cloud
};

struct PipelineResult {
  bool success = false;
  std::string failed_stage;            // empty when all stages ran
  std::vector<std::string> reasons;    // validation reason codes
  NormalizationTransform transform;    // world -> normalized
  bool p_out_is_input = false;
  PointCloud p_in;                     // normalized input (with estimated normals)
  PointCloud p_out;                    // recovered distribution, normalized space
  SparseVoxelGrid coarse_grid, fine_grid;
  TokenSequence tokens;
  bool tokens_complete = false;
  PolyMesh mesh;                       // world space
  size_t dropped_faces = 0;

  nlohmann::json report_json() const {
    return {{"success", success},
            {"failed_stage", failed_stage},
            {"reasons", reasons},
            {"p_out_is_input", p_out_is_input},
            {"p_in_count", p_in.size()},
            {"p_out_count", p_out.size()},
            {"coarse_voxels", coarse_grid.count()},
            {"fine_voxels", fine_grid.count()},
            {"token_count", tokens.tokens.size()},
            {"tokens_complete", tokens_complete},
            {"mesh_vertices", mesh.vertices.size()},
            {"mesh_faces", mesh.faces.size()},
            {"dropped_faces", dropped_faces}};
  }
};

// Conditional generation: condition encoding, coarse dense diffusion, coarse
// decode, fine sparse diffusion on the decoded support, fine decode to the
// recovered cloud, then prompt encoding, autoregressive mesh generation,
// detokenization and validation. Ablation flags reroute the stages. Inputs
// already inside [-1,1]^3 pass through unnormalized.
inline PipelineResult generate_pipeline(const PointCloud& input, const ModelConfig& cfg,
                                        StageParams& params, const PipelineFlags& flags,
                                        uint64_t seed, size_t max_len = 2048) {
  cfg.check_valid();
  PipelineResult res;
  std::string stage = "normalize";
  try {
    if (input.empty()) fail(errc::empty_cloud, "empty input cloud");
    Bounds3 bb = input.bounds();
    bool inside = bb.lo.x >= -1.05 && bb.lo.y >= -1.05 && bb.lo.z >= -1.05 && bb.hi.x <= 1.05 &&
                  bb.hi.y <= 1.05 && bb.hi.z <= 1.05;
    if (inside) {
      res.p_in = input;
    } else {
      auto [normalized_cloud, transform] = normalize(input);
      res.p_in = std::move(normalized_cloud);
      res.transform = transform;
    }
    if (!res.p_in.has_normals() && res.p_in.size() >= 2) res.p_in = estimate_normals(res.p_in, 30);

    Rng root(seed);
    DiffusionSchedule schedule = cfg.schedule();
    uint32_t fine_latent_res = cfg.fine_resolution / 4;  // == coarse_resolution

    if (flags.no_priors) {
      res.p_out = res.p_in;
      res.p_out_is_input = true;
    } else {
      std::vector<VoxelIdx> fine_support;
      if (!flags.skip_coarse) {
        stage = "diffusion-coarse";
        uint32_t rc = cfg.coarse_resolution / 4;
        SiteSet sites = SiteSet::dense(rc);
        std::vector<double> col = occupancy_column(res.p_in, sites);
        std::vector<double> cond(sites.count() * size_t(cfg.cond_channels));
        auto lift = params.diff_coarse.view("cond.lift");
        for (size_t i = 0; i < sites.count(); ++i)
          for (size_t c = 0; c < lift.size(); ++c) cond[i * lift.size() + c] = col[i] * lift[c];
        LatentGrid z = diffusion_sample(params.diff_coarse, "dn", cfg.coarse_denoiser(), sites,
                                        LatentKind::dense, cond, lift.size(), schedule,
                                        root.fork("coarse").u64());
        stage = "vae-decode-coarse";
        res.coarse_grid = vae_decode(z, cfg.coarse_vae(), params.vae_coarse, "vae");
        if (res.coarse_grid.empty())
          fail(errc::stage_failure, "coarse decode produced an empty grid");
        fine_support = res.coarse_grid.indices;
      } else {
        fine_support = voxelize(res.p_in, fine_latent_res).indices;
      }

      if (!flags.skip_fine) {
        stage = "diffusion-fine";
        SiteSet sites = SiteSet::of(fine_latent_res, fine_support);
        std::vector<double> col = occupancy_column(res.p_in, sites);
        auto lift = params.diff_fine.view("cond.lift");
        size_t cc = lift.size() + 1;
        std::vector<double> cond(sites.count() * cc);
        for (size_t i = 0; i < sites.count(); ++i) {
          for (size_t c = 0; c < lift.size(); ++c) cond[i * cc + c] = col[i] * lift[c];
          cond[i * cc + lift.size()] = 1.0;  // coarse occupancy channel (the support)
        }
        LatentGrid zf = diffusion_sample(params.diff_fine, "dn", cfg.fine_denoiser(), sites,
                                         LatentKind::sparse, cond, cc, schedule,
                                         root.fork("fine").u64());
        stage = "vae-decode-fine";
        res.fine_grid = vae_decode(zf, cfg.fine_vae(), params.vae_fine, "vae");
        if (res.fine_grid.empty()) fail(errc::stage_failure, "fine decode produced an empty grid");
        res.p_out = voxel_centers_to_points(res.fine_grid);
      } else {
        stage = "skip-fine";
        if (res.coarse_grid.empty()) fail(errc::stage_failure, "skip-fine needs the coarse stage");
        res.p_out = voxel_centers_to_points(res.coarse_grid);
      }
    }

    stage = "prompt";
    PointCloud prompt_cloud = downsample_cloud(res.p_out, cfg.prompt_points,
                                               root.fork("prompt").u64());
    if (!prompt_cloud.has_normals()) prompt_cloud = estimate_normals(prompt_cloud, 30);
    ArConfig arcfg = cfg.ar();
    std::vector<double> prompt = encode_prompt(prompt_cloud, params.ar, "ep", arcfg);

    stage = "ar-generate";
    size_t budget = std::min(max_len, size_t(cfg.max_positions - cfg.prompt_len));
    res.tokens = ar_generate(params.ar, "ar", arcfg, prompt, budget, DecodeStrategy::greedy, 1.0,
                             root.fork("ar").u64());

    stage = "detokenize";
    DetokenizeResult det = detokenize_mesh(res.tokens, arcfg.vocab);
    res.tokens_complete = det.complete;
    res.dropped_faces = det.dropped;
    ValidationReport val = validate_generated(res.tokens, det.mesh, arcfg.vocab);
    res.reasons = val.reasons;
    res.mesh = det.mesh;
    for (Vec3& v : res.mesh.vertices) v = res.transform.invert(v);
    res.success = val.success;
    res.failed_stage.clear();
  } catch (const error& e) {
    res.success = false;
    res.failed_stage = stage;
    res.reasons.push_back(e.what());
  }
  return res;
}

}  // namespace locadit
