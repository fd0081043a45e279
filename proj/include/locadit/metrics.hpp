//
// The evaluation harness: L1 chamfer distance, F-score, ball-count
// uniformity, exact-matching earth mover's distance, mesh statistics with
// distinct-plane counting, and the batch report with failure-rate
// aggregation.
//

#pragma once

#include <nlohmann/json.hpp>
#include <optional>

#include "locadit/align.hpp"
#include "locadit/kdtree.hpp"
#include "locadit/mesh.hpp"
#include "locadit/tokenizer.hpp"

namespace locadit {

namespace detail {

// Fixed-size resampling: exact size passes through, larger clouds subsample
// without replacement, smaller clouds repeat cyclically (no invented
// geometry). Identical inputs at or below the target size stay identical.
inline std::vector<Vec3> resample_positions(const PointCloud& c, size_t n, Rng rng) {
  if (c.empty()) fail(errc::empty_cloud, "metric on empty cloud");
  std::vector<Vec3> out;
  out.reserve(n);
  if (c.size() == n) return c.positions;
  if (c.size() > n) {
    for (size_t i : rng.sample_without_replacement(c.size(), n)) out.push_back(c.positions[i]);
    return out;
  }
  for (size_t i = 0; i < n; ++i) out.push_back(c.positions[i % c.size()]);
  return out;
}

}  // namespace detail

// Sum of both directed mean L1 nearest-neighbor distances over fixed-size
// resamplings of the two clouds.
inline double chamfer_l1(const PointCloud& a, const PointCloud& b, size_t n_samples = 16384,
                         uint64_t seed = 0) {
  Rng root(seed);
  std::vector<Vec3> sa = detail::resample_positions(a, n_samples, root.fork("side0"));
  std::vector<Vec3> sb = detail::resample_positions(b, n_samples, root.fork("side1"));
  KdTree3 ta(sa), tb(sb);
  double da = 0, db = 0;
  for (const Vec3& p : sa) {
    double d;
    tb.nearest_l1(p, &d);
    da += d;
  }
  for (const Vec3& p : sb) {
    double d;
    ta.nearest_l1(p, &d);
    db += d;
  }
  return da / double(sa.size()) + db / double(sb.size());
}

// Harmonic mean of precision and recall at threshold d (strict Euclidean
// comparison); 0 when both indicators vanish.
inline double fscore(const PointCloud& a, const PointCloud& b, double d, size_t n_samples = 16384,
                     uint64_t seed = 0) {
  if (d <= 0) fail(errc::bad_config, "fscore threshold must be positive");
  Rng root(seed);
  std::vector<Vec3> sa = detail::resample_positions(a, n_samples, root.fork("side0"));
  std::vector<Vec3> sb = detail::resample_positions(b, n_samples, root.fork("side1"));
  KdTree3 ta(sa), tb(sb);
  size_t hits_a = 0, hits_b = 0;
  for (const Vec3& p : sa) {
    double d2;
    tb.nearest_l2(p, &d2);
    if (std::sqrt(d2) < d) ++hits_a;
  }
  for (const Vec3& p : sb) {
    double d2;
    ta.nearest_l2(p, &d2);
    if (std::sqrt(d2) < d) ++hits_b;
  }
  double precision = double(hits_a) / double(sa.size());
  double recall = double(hits_b) / double(sb.size());
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// Normalized variance of ball-neighborhood counts around K query points
// sampled from the cloud (each ball contains at least its own query point).
inline double uniformity(const PointCloud& a, double r = 0.05, size_t K = 100, uint64_t seed = 0) {
  if (a.size() < K) fail(errc::too_few_points, "uniformity needs at least K points");
  Rng rng = Rng(seed).fork("uniformity");
  KdTree3 tree(a.positions);
  std::vector<double> counts;
  counts.reserve(K);
  double total = 0;
  for (size_t i : rng.sample_without_replacement(a.size(), K)) {
    double c = double(tree.radius(a.positions[i], r).size());
    counts.push_back(c);
    total += c;
  }
  double mean = total / double(K);
  if (mean == 0) fail(errc::all_empty_balls, "all uniformity balls are empty");
  double u = 0;
  for (double c : counts) u += (c - mean) / mean * ((c - mean) / mean);
  return u / double(K);
}

namespace detail {

// O(n^3) assignment with potentials; cost is row-major n x n.
inline double hungarian_min_cost(const std::vector<double>& cost, size_t n,
                                 std::vector<size_t>* assignment = nullptr) {
  const double inf = std::numeric_limits<double>::max();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<size_t> p(n + 1, 0), way(n + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    p[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  for (size_t j = 1; j <= n; ++j)
    if (p[j]) total += cost[(p[j] - 1) * n + (j - 1)];
  if (assignment) {
    assignment->assign(n, 0);
    for (size_t j = 1; j <= n; ++j)
      if (p[j]) (*assignment)[p[j] - 1] = j - 1;
  }
  return total;
}

}  // namespace detail

// Exact minimum-cost bijection (Euclidean costs) over n_match-point
// resamplings, divided by n_match; larger clouds average over independent
// subsample rounds.
inline double emd(const PointCloud& a, const PointCloud& b, size_t n_match = 512,
                  uint64_t seed = 0, int rounds = 4) {
  if (a.empty() || b.empty()) fail(errc::empty_cloud, "emd on empty cloud");
  // below the match size the resampling is deterministic, one round suffices
  int effective_rounds = (a.size() <= n_match && b.size() <= n_match) ? 1 : rounds;
  Rng root(seed);
  double total = 0;
  for (int r = 0; r < effective_rounds; ++r) {
    Rng round = root.fork("emd.round." + std::to_string(r));
    std::vector<Vec3> sa = detail::resample_positions(a, n_match, round.fork("side0"));
    std::vector<Vec3> sb = detail::resample_positions(b, n_match, round.fork("side1"));
    std::vector<double> cost(n_match * n_match);
    for (size_t i = 0; i < n_match; ++i)
      for (size_t j = 0; j < n_match; ++j) cost[i * n_match + j] = norm(sa[i] - sb[j]);
    total += detail::hungarian_min_cost(cost, n_match) / double(n_match);
  }
  return total / double(effective_rounds);
}

// ---------------------------------------------------------------------------
// mesh statistics
// ---------------------------------------------------------------------------

struct MeshStats {
  size_t v_count = 0, f_count = 0, p_count = 0;
};

// Vertex and face counts by direct counting; distinct planes from the
// triangulated faces. Two planes coincide when their unit normals are
// parallel or antiparallel within normal_tol and the (sign-matched) offsets
// agree within offset_tol. Degenerate triangles are skipped.
inline MeshStats mesh_stats(const PolyMesh& mesh, double normal_tol = 1e-3,
                            double offset_tol = 1e-3) {
  MeshStats s;
  s.v_count = mesh.vertices.size();
  s.f_count = mesh.faces.size();

  std::vector<std::pair<Vec3, double>> planes;  // unit normal, offset
  for (const auto& f : triangulate_fan(mesh).mesh.faces) {
    const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
    Vec3 n = cross(b - a, c - a);
    double len = norm(n);
    if (len < 1e-12) continue;  // degenerate face
    n = n / len;
    double d = dot(n, a);
    bool found = false;
    for (const auto& [pn, pd] : planes) {
      double align = dot(n, pn);
      if (std::abs(align) < 1.0 - normal_tol) continue;
      double sign = align >= 0 ? 1.0 : -1.0;
      if (std::abs(d - sign * pd) <= offset_tol) {
        found = true;
        break;
      }
    }
    if (!found) planes.push_back({n, d});
  }
  s.p_count = planes.size();
  return s;
}

// ---------------------------------------------------------------------------
// batch evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
  size_t n_samples = 16384;
  double fscore_threshold = 0.05;
  double uniformity_radius = 0.05;
  size_t uniformity_queries = 100;
  size_t emd_match = 512;
  int emd_rounds = 4;
  double normal_tol = 1e-3, offset_tol = 1e-3;
  uint64_t seed = 0;
};

struct EvalInstance {
  std::string id;
  std::optional<PolyMesh> pred_mesh;    // exactly one of mesh/cloud is set
  std::optional<PointCloud> pred_cloud;
  PolyMesh gt_mesh;
  std::vector<std::string> reasons;     // generation-time failure reasons, if any
};

struct InstanceMetrics {
  std::string id;
  double cd = 0, fscore = 0, uniformity = 0, emd = 0;
  size_t v = 0, f = 0, p = 0;
  bool has_mesh = false;
  bool success = true;
  std::vector<std::string> reasons;
};

struct MetricsReport {
  std::vector<InstanceMetrics> instances;
  double cd_mean = 0, fscore_mean = 0, uniformity_mean = 0, emd_mean = 0;
  double v_mean = 0, f_mean = 0, p_mean = 0;
  double fr = 0;  // failures / total, exact

  nlohmann::json to_json() const {
    nlohmann::json out;
    out["instances"] = nlohmann::json::array();
    for (const auto& m : instances)
      out["instances"].push_back({{"id", m.id},
                                  {"cd", m.cd},
                                  {"fscore", m.fscore},
                                  {"uniformity", m.uniformity},
                                  {"emd", m.emd},
                                  {"v", m.v},
                                  {"f", m.f},
                                  {"p", m.p},
                                  {"success", m.success},
                                  {"reasons", m.reasons}});
    out["aggregate"] = {{"cd_mean", cd_mean},       {"fscore_mean", fscore_mean},
                        {"uniformity_mean", uniformity_mean}, {"emd_mean", emd_mean},
                        {"v_mean", v_mean},         {"f_mean", f_mean},
                        {"p_mean", p_mean},         {"fr", fr}};
    return out;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    for (const auto& ji : j.at("instances")) {
      InstanceMetrics m;
      m.id = ji.at("id").get<std::string>();
      m.cd = ji.at("cd").get<double>();
      m.fscore = ji.at("fscore").get<double>();
      m.uniformity = ji.at("uniformity").get<double>();
      m.emd = ji.at("emd").get<double>();
      m.v = ji.at("v").get<size_t>();
      m.f = ji.at("f").get<size_t>();
      m.p = ji.at("p").get<size_t>();
      m.success = ji.at("success").get<bool>();
      m.reasons = ji.at("reasons").get<std::vector<std::string>>();
      r.instances.push_back(std::move(m));
    }
    const auto& ag = j.at("aggregate");
    r.cd_mean = ag.at("cd_mean").get<double>();
    r.fscore_mean = ag.at("fscore_mean").get<double>();
    r.uniformity_mean = ag.at("uniformity_mean").get<double>();
    r.emd_mean = ag.at("emd_mean").get<double>();
    r.v_mean = ag.at("v_mean").get<double>();
    r.f_mean = ag.at("f_mean").get<double>();
    r.p_mean = ag.at("p_mean").get<double>();
    r.fr = ag.at("fr").get<double>();
    return r;
  }
};

// Per-instance: sample mesh surfaces (the same per-instance stream samples
// both sides, so identical meshes compare at distance zero), normalize each
// cloud, align the prediction onto the ground truth, then compute all point
// metrics. Mesh statistics come from the raw prediction mesh. Per-instance
// errors are recorded as failures; the batch never aborts. Aggregates
// average the successful instances, failures count only into FR.
inline MetricsReport evaluate_report(const std::vector<EvalInstance>& pairs,
                                     const EvalConfig& cfg = {}) {
  if (pairs.empty()) fail(errc::bad_config, "evaluate_report on empty pair list");
  MetricsReport report;

  for (const EvalInstance& inst : pairs) {
    InstanceMetrics m;
    m.id = inst.id;
    m.reasons = inst.reasons;
    m.success = inst.reasons.empty();
    uint64_t inst_seed = Rng(cfg.seed).fork(inst.id).u64();
    try {
      PointCloud pred_points;
      if (inst.pred_mesh) {
        m.has_mesh = true;
        MeshStats ms = mesh_stats(*inst.pred_mesh, cfg.normal_tol, cfg.offset_tol);
        m.v = ms.v_count;
        m.f = ms.f_count;
        m.p = ms.p_count;
        for (const Vec3& v : inst.pred_mesh->vertices)
          if (!finite(v) && m.success) {
            m.success = false;
            m.reasons.push_back("NaNFace");
          }
        if (!m.success) {
          report.instances.push_back(std::move(m));
          continue;
        }
        pred_points = sample_surface(*inst.pred_mesh, cfg.n_samples, inst_seed);
      } else if (inst.pred_cloud) {
        pred_points = *inst.pred_cloud;
      } else {
        fail(errc::bad_config, "instance without a prediction");
      }
      if (!m.success) {
        report.instances.push_back(std::move(m));
        continue;
      }

      PointCloud gt_points = sample_surface(inst.gt_mesh, cfg.n_samples, inst_seed);
      PointCloud pred_n = normalize(pred_points).first;
      PointCloud gt_n = normalize(gt_points).first;
      auto [transform, aligned] = align_pca_icp(pred_n, gt_n);

      m.cd = chamfer_l1(aligned, gt_n, cfg.n_samples, inst_seed);
      m.fscore = fscore(aligned, gt_n, cfg.fscore_threshold, cfg.n_samples, inst_seed);
      m.uniformity = aligned.size() >= cfg.uniformity_queries
                         ? uniformity(aligned, cfg.uniformity_radius, cfg.uniformity_queries,
                                      inst_seed)
                         : 0.0;
      m.emd = emd(aligned, gt_n, cfg.emd_match, inst_seed, cfg.emd_rounds);
    } catch (const error& e) {
      m.success = false;
      m.reasons.push_back(e.what());
    }
    report.instances.push_back(std::move(m));
  }

  size_t ok = 0, ok_mesh = 0, failures = 0;
  for (const auto& m : report.instances) {
    if (!m.success) {
      ++failures;
      continue;
    }
    ++ok;
    report.cd_mean += m.cd;
    report.fscore_mean += m.fscore;
    report.uniformity_mean += m.uniformity;
    report.emd_mean += m.emd;
    if (m.has_mesh) {
      ++ok_mesh;
      report.v_mean += double(m.v);
      report.f_mean += double(m.f);
      report.p_mean += double(m.p);
    }
  }
  if (ok) {
    report.cd_mean /= double(ok);
    report.fscore_mean /= double(ok);
    report.uniformity_mean /= double(ok);
    report.emd_mean /= double(ok);
  }
  if (ok_mesh) {
    report.v_mean /= double(ok_mesh);
    report.f_mean /= double(ok_mesh);
    report.p_mean /= double(ok_mesh);
  }
  report.fr = double(failures) / double(report.instances.size());
  return report;
}

}  // namespace locadit
