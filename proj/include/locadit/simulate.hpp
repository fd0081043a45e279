//
// Synthetic degradation scenarios over ground-truth surface samples:
// a camera-reconstruction style scenario (saliency-weighted selection,
// Gaussian noise, spatial outliers) and a sparse scenario (anchor-driven
// removal to 200..2000 points with uniform or gradient-noise displacement).
// Both are pure functions of (inputs, config, seed).
//

#pragma once

#include <vector>

#include "locadit/kdtree.hpp"
#include "locadit/mesh.hpp"
#include "locadit/perlin.hpp"
#include "locadit/pointcloud.hpp"
#include "locadit/rng.hpp"

namespace locadit {

enum class Scenario { sfm, sparse };
enum class NoiseKind { uniform, perlin };

struct ScenarioConfig {
  Scenario scenario = Scenario::sparse;
  uint64_t seed = 0;

  struct Sfm {
    double noise_sigma = 0.01;       // absolute std in normalized units
    double outlier_fraction = 0.05;  // replaced by uniform draws in the expanded box
    double saliency_edge_weight = 2.0;
    double saliency_up_weight = 1.0;
    size_t target_count = 4096;
  } sfm;

  struct Sparse {
    size_t count_min = 200;
    size_t count_max = 2000;
    size_t anchor_count = 10000;  // cap on anchor removals before plain downsampling
    double removal_radius = 0.15;
    NoiseKind noise_kind = NoiseKind::uniform;
    double noise_amplitude = 0.0;
    double noise_frequency = 4.0;  // lattice frequency for gradient noise
  } sparse;

  void check_valid() const {
    if (sparse.count_min > sparse.count_max) fail(errc::bad_config, "count_min > count_max");
    if (sfm.outlier_fraction < 0 || sfm.outlier_fraction > 1)
      fail(errc::bad_config, "outlier_fraction outside [0,1]");
    if (sfm.noise_sigma < 0 || sparse.noise_amplitude < 0)
      fail(errc::bad_config, "negative noise amplitude");
  }
};

// Per-point sampling weight 1 + w_edge*edge + w_up*max(0, n_z), normalized to
// sum 1. A point scores edge=1 when it lies within a band (2% of the mesh
// bounding-box diagonal) of an edge whose adjacent faces disagree by more
// than 30 degrees.
inline std::vector<double> saliency_weights(const PointCloud& cloud, const PolyMesh& mesh,
                                            const ScenarioConfig& cfg) {
  if (!cloud.has_normals()) fail(errc::missing_normals, "saliency_weights needs normals");

  // face normals via Newell's method (robust for polygons)
  std::vector<Vec3> face_normals(mesh.faces.size());
  for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    Vec3 n{0, 0, 0};
    for (size_t i = 0; i < f.size(); ++i) {
      const Vec3 &a = mesh.vertices[f[i]], &b = mesh.vertices[f[(i + 1) % f.size()]];
      n.x += (a.y - b.y) * (a.z + b.z);
      n.y += (a.z - b.z) * (a.x + b.x);
      n.z += (a.x - b.x) * (a.y + b.y);
    }
    face_normals[fi] = normalized(n);
  }

  // sharp edges: shared by two faces whose normals differ by more than 30 deg
  std::unordered_map<uint64_t, std::pair<int, int>> edge_faces;
  auto edge_key = [](uint32_t a, uint32_t b) {
    if (a > b) std::swap(a, b);
    return (uint64_t(a) << 32) | b;
  };
  for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    for (size_t i = 0; i < f.size(); ++i) {
      auto [it, fresh] = edge_faces.try_emplace(edge_key(f[i], f[(i + 1) % f.size()]),
                                                std::pair<int, int>{int(fi), -1});
      if (!fresh && it->second.second < 0) it->second.second = int(fi);
    }
  }
  std::vector<std::pair<Vec3, Vec3>> sharp_edges;
  const double cos30 = std::cos(30.0 * M_PI / 180.0);
  for (const auto& [key, fp] : edge_faces) {
    if (fp.second < 0) continue;
    if (dot(face_normals[fp.first], face_normals[fp.second]) < cos30) {
      uint32_t a = uint32_t(key >> 32), b = uint32_t(key & 0xffffffffu);
      sharp_edges.push_back({mesh.vertices[a], mesh.vertices[b]});
    }
  }

  double band = 0.02 * mesh.bounds().diagonal();
  auto near_sharp_edge = [&](const Vec3& p) {
    for (const auto& [a, b] : sharp_edges) {
      Vec3 ab = b - a;
      double len2 = norm2(ab);
      double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
      if (norm(p - (a + ab * t)) <= band) return true;
    }
    return false;
  };

  std::vector<double> w(cloud.size());
  double total = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    double edge = (cfg.sfm.saliency_edge_weight != 0 && near_sharp_edge(cloud.positions[i])) ? 1 : 0;
    w[i] = 1.0 + cfg.sfm.saliency_edge_weight * edge +
           cfg.sfm.saliency_up_weight * std::max(0.0, cloud.normals[i].z);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

// Saliency-weighted resampling with Gaussian position noise; a fixed fraction
// of points is replaced by uniform draws inside the 1.5x-expanded bounding
// box. Output count equals target_count; normals are not carried over.
inline PointCloud simulate_sfm(const PointCloud& gt, const PolyMesh& mesh,
                               const ScenarioConfig& cfg) {
  cfg.check_valid();
  std::vector<double> weights = saliency_weights(gt, mesh, cfg);
  std::vector<double> cdf(weights.size());
  double run = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    run += weights[i];
    cdf[i] = run;
  }

  Rng root(cfg.seed);
  Rng pick = root.fork("sfm.select");
  Rng noise = root.fork("sfm.noise");
  Rng outliers = root.fork("sfm.outliers");

  size_t n = cfg.sfm.target_count;
  PointCloud out;
  out.positions.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    double u = pick.uniform() * run;
    size_t idx = size_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (idx >= gt.size()) idx = gt.size() - 1;
    out.positions.push_back(gt.positions[idx]);
  }
  if (cfg.sfm.noise_sigma > 0)
    for (Vec3& p : out.positions) p += noise.normal3(cfg.sfm.noise_sigma);

  size_t n_out = size_t(std::llround(cfg.sfm.outlier_fraction * double(n)));
  if (n_out > 0) {
    Bounds3 bb = gt.bounds();
    Vec3 c = bb.center(), half = bb.size() * 0.5 * 1.5;
    for (size_t idx : outliers.sample_without_replacement(n, n_out)) {
      out.positions[idx] = c + Vec3{outliers.uniform(-half.x, half.x),
                                    outliers.uniform(-half.y, half.y),
                                    outliers.uniform(-half.z, half.z)};
    }
  }
  return out;
}

// Draws a target count uniformly from {count_min..count_max}, then deletes
// anchor neighborhoods until the target is reachable and downsamples to it
// exactly. A removal that would undershoot the target stops the loop, as does
// the anchor_count cap, so the output count is always exact. Optional
// uniform or gradient-noise displacement is applied afterwards.
inline PointCloud simulate_sparse(const PointCloud& gt, const ScenarioConfig& cfg) {
  cfg.check_valid();
  if (gt.size() <= cfg.sparse.count_max)
    fail(errc::source_too_small, "sparse scenario needs more than count_max source points");

  Rng root(cfg.seed);
  Rng pick = root.fork("sparse.anchors");
  Rng down = root.fork("sparse.downsample");
  Rng noise = root.fork("sparse.noise");

  size_t target = cfg.sparse.count_min +
                  size_t(pick.index(cfg.sparse.count_max - cfg.sparse.count_min + 1));

  std::vector<size_t> alive(gt.size());
  for (size_t i = 0; i < alive.size(); ++i) alive[i] = i;

  if (cfg.sparse.removal_radius > 0) {
    KdTree3 tree(gt.positions);
    std::vector<char> is_alive(gt.size(), 1);
    size_t alive_count = gt.size();
    for (size_t iter = 0; iter < cfg.sparse.anchor_count && alive_count > target; ++iter) {
      // anchor drawn among currently alive points
      size_t nth = size_t(pick.index(alive_count));
      size_t anchor = 0;
      for (size_t i = 0, seen = 0; i < gt.size(); ++i)
        if (is_alive[i] && seen++ == nth) {
          anchor = i;
          break;
        }
      std::vector<size_t> hit = tree.radius(gt.positions[anchor], cfg.sparse.removal_radius);
      size_t would_remove = 0;
      for (size_t h : hit) would_remove += is_alive[h] ? 1 : 0;
      if (alive_count - would_remove < target) break;  // final trim happens below
      for (size_t h : hit)
        if (is_alive[h]) {
          is_alive[h] = 0;
          --alive_count;
        }
    }
    alive.clear();
    for (size_t i = 0; i < gt.size(); ++i)
      if (is_alive[i]) alive.push_back(i);
  }

  std::vector<size_t> chosen = alive;
  if (chosen.size() > target) {
    std::vector<size_t> sel = down.sample_without_replacement(chosen.size(), target);
    std::vector<size_t> keep;
    keep.reserve(target);
    for (size_t s : sel) keep.push_back(chosen[s]);
    std::sort(keep.begin(), keep.end());
    chosen = std::move(keep);
  }

  PointCloud out;
  out.positions.reserve(chosen.size());
  for (size_t i : chosen) out.positions.push_back(gt.positions[i]);

  if (cfg.sparse.noise_amplitude > 0) {
    double a = cfg.sparse.noise_amplitude;
    if (cfg.sparse.noise_kind == NoiseKind::uniform) {
      for (Vec3& p : out.positions)
        p += Vec3{noise.uniform(-a, a), noise.uniform(-a, a), noise.uniform(-a, a)};
    } else {
      uint64_t s0 = noise.u64(), s1 = noise.u64(), s2 = noise.u64();
      for (Vec3& p : out.positions) {
        Vec3 d{perlin3(p, cfg.sparse.noise_frequency, s0), perlin3(p, cfg.sparse.noise_frequency, s1),
               perlin3(p, cfg.sparse.noise_frequency, s2)};
        p += d * a;
      }
    }
  }
  return out;
}

}  // namespace locadit
