//
// Rigid alignment: PCA initialization (principal directions matched between
// the clouds, right-handed, SVD-orthonormalized, sign ambiguity resolved by
// residual) refined with ICP. Point-to-plane steps are preferred when target
// normals exist and fall back to point-to-point whenever they fail to reduce
// the RMS. Rigid only, no scaling; the best transform seen is returned, so
// the result never regresses behind its own initialization.
//

#pragma once

#include <Eigen/Dense>

#include "locadit/kdtree.hpp"
#include "locadit/pointcloud.hpp"

namespace locadit {

struct Mat3 {
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  static Mat3 identity() { return {}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        r.m[i][j] = 0;
        for (int k = 0; k < 3; ++k) r.m[i][j] += m[i][k] * o.m[k][j];
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }
  double det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  static Mat3 from_eigen(const Eigen::Matrix3d& e) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = e(i, j);
    return r;
  }
  Eigen::Matrix3d to_eigen() const {
    Eigen::Matrix3d e;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) e(i, j) = m[i][j];
    return e;
  }
};

struct RigidTransform {
  Mat3 rotation;
  Vec3 translation{0, 0, 0};

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  PointCloud apply(const PointCloud& c) const {
    PointCloud out = c;
    for (Vec3& p : out.positions) p = apply(p);
    for (Vec3& n : out.normals) n = rotation * n;
    return out;
  }

  void check_valid() const {
    Mat3 should_be_i = rotation * rotation.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double expect = i == j ? 1.0 : 0.0;
        if (std::abs(should_be_i.m[i][j] - expect) > 1e-9)
          fail(errc::degenerate_geometry, "rotation not orthonormal");
      }
    if (std::abs(rotation.det() - 1.0) > 1e-9)
      fail(errc::degenerate_geometry, "rotation determinant != 1");
  }
};

namespace detail {

inline Mat3 project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Mat3::from_eigen(u * d * v.transpose());
}

inline double rms_to_target(const PointCloud& source, const RigidTransform& t,
                            const KdTree3& target_tree) {
  double s = 0;
  for (const Vec3& p : source.positions) {
    double d2;
    target_tree.nearest_l2(t.apply(p), &d2);
    s += d2;
  }
  return std::sqrt(s / double(source.size()));
}

// Kabsch rotation + translation from paired points.
inline RigidTransform fit_point_to_point(const std::vector<Vec3>& src,
                                         const std::vector<Vec3>& dst) {
  Vec3 cs{0, 0, 0}, cd{0, 0, 0};
  for (size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs = cs / double(src.size());
  cd = cd / double(dst.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    Vec3 a = src[i] - cs, b = dst[i] - cd;
    Eigen::Vector3d ea(a.x, a.y, a.z), eb(b.x, b.y, b.z);
    h += eb * ea.transpose();
  }
  RigidTransform t;
  t.rotation = project_to_rotation(h);
  t.translation = cd - t.rotation * cs;
  return t;
}

// One linearized point-to-plane step: minimize sum(((p + w x p + dt) - q) . n)^2.
inline RigidTransform fit_point_to_plane(const std::vector<Vec3>& src,
                                         const std::vector<Vec3>& dst,
                                         const std::vector<Vec3>& dst_normals) {
  Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    const Vec3 &p = src[i], &n = dst_normals[i];
    Vec3 c = cross(p, n);
    Eigen::Matrix<double, 6, 1> a;
    a << c.x, c.y, c.z, n.x, n.y, n.z;
    double b = dot(dst[i] - p, n);
    H += a * a.transpose();
    g += a * b;
  }
  Eigen::Matrix<double, 6, 1> x = H.ldlt().solve(g);
  Eigen::Vector3d w(x[0], x[1], x[2]);
  double angle = w.norm();
  Eigen::Matrix3d rot = angle > 1e-300
                            ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix()
                            : Eigen::Matrix3d::Identity();
  RigidTransform t;
  t.rotation = Mat3::from_eigen(rot);
  t.translation = {x[3], x[4], x[5]};
  return t;
}

}  // namespace detail

struct AlignConfig {
  int max_iterations = 50;
  double convergence_rms = 1e-7;           // stop when improvement drops below
  double reject_fraction_of_diagonal = 0.05;  // correspondence distance gate
  size_t normal_k = 30;
};

// PCA + ICP rigid alignment of `source` onto `target`. Degenerate geometry
// (fewer than 4 points or collinear spread) skips the PCA branch and runs
// point-to-point ICP from the identity initialization.
inline std::pair<RigidTransform, PointCloud> align_pca_icp(const PointCloud& source,
                                                           const PointCloud& target,
                                                           const AlignConfig& cfg = {}) {
  if (source.empty() || target.empty()) fail(errc::empty_cloud, "align on empty cloud");
  KdTree3 target_tree(target.positions);

  Vec3 cs = source.centroid(), ct = target.centroid();
  RigidTransform best;
  best.translation = ct - cs;  // identity-rotation init is always a candidate
  double best_rms = detail::rms_to_target(source, best, target_tree);

  // --- PCA initialization (skipped for degenerate geometry) ---
  bool pca_ok = source.size() >= 4 && target.size() >= 4;
  if (pca_ok) {
    auto covariance = [](const PointCloud& c, const Vec3& mean) {
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (const Vec3& p : c.positions) {
        Eigen::Vector3d d(p.x - mean.x, p.y - mean.y, p.z - mean.z);
        cov += d * d.transpose();
      }
      return cov;
    };
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(covariance(source, cs));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> et(covariance(target, ct));
    // collinear spread: second eigenvalue vanishes against the first
    if (es.eigenvalues()[1] <= 1e-12 * std::max(es.eigenvalues()[2], 1e-300) ||
        et.eigenvalues()[1] <= 1e-12 * std::max(et.eigenvalues()[2], 1e-300)) {
      pca_ok = false;
    } else {
      // eigenvectors by descending eigenvalue, forced right-handed
      Eigen::Matrix3d Es, Et;
      for (int i = 0; i < 3; ++i) {
        Es.col(i) = es.eigenvectors().col(2 - i);
        Et.col(i) = et.eigenvectors().col(2 - i);
      }
      if (Es.determinant() < 0) Es.col(2) = -Es.col(2);
      if (Et.determinant() < 0) Et.col(2) = -Et.col(2);
      // principal directions carry a sign ambiguity: try the four
      // right-handed sign assignments and keep the lowest-residual one
      const double signs[4][3] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
      for (const auto& s : signs) {
        Eigen::Matrix3d S = Eigen::Vector3d(s[0], s[1], s[2]).asDiagonal();
        RigidTransform cand;
        cand.rotation = detail::project_to_rotation(Et * S * Es.transpose());
        cand.translation = ct - cand.rotation * cs;
        double rms = detail::rms_to_target(source, cand, target_tree);
        if (rms < best_rms) {
          best_rms = rms;
          best = cand;
        }
      }
    }
  }

  // --- ICP refinement ---
  bool use_plane = pca_ok;  // degenerate path stays point-to-point
  PointCloud target_with_normals;
  const PointCloud* tgt = &target;
  if (use_plane && !target.has_normals() && target.size() >= 2) {
    target_with_normals = estimate_normals(target, cfg.normal_k);
    tgt = &target_with_normals;
  }
  use_plane = use_plane && tgt->has_normals();

  double threshold = cfg.reject_fraction_of_diagonal * target.bounds().diagonal();
  if (threshold <= 0) threshold = std::numeric_limits<double>::max();
  RigidTransform current = best;
  double current_rms = best_rms;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<Vec3> src, dst, dstn;
    for (const Vec3& p : source.positions) {
      Vec3 moved = current.apply(p);
      double d2;
      size_t j = target_tree.nearest_l2(moved, &d2);
      if (std::sqrt(d2) > threshold) continue;
      src.push_back(moved);
      dst.push_back(tgt->positions[j]);
      if (use_plane) dstn.push_back(tgt->normals[j]);
    }
    if (src.size() < 3) break;

    auto try_step = [&](const RigidTransform& delta) {
      RigidTransform composed;
      composed.rotation = delta.rotation * current.rotation;
      composed.translation = delta.rotation * current.translation + delta.translation;
      return std::pair{composed, detail::rms_to_target(source, composed, target_tree)};
    };

    RigidTransform next = current;
    double next_rms = current_rms;
    bool improved = false;
    if (use_plane) {
      auto [cand, rms] = try_step(detail::fit_point_to_plane(src, dst, dstn));
      if (rms < next_rms) {
        next = cand;
        next_rms = rms;
        improved = true;
      }
    }
    if (!improved) {  // plane metric failed to reduce; revert to point-to-point
      auto [cand, rms] = try_step(detail::fit_point_to_point(src, dst));
      if (rms < next_rms) {
        next = cand;
        next_rms = rms;
        improved = true;
      }
    }
    if (!improved) break;
    double gain = current_rms - next_rms;
    current = next;
    current_rms = next_rms;
    if (current_rms < best_rms) {
      best = current;
      best_rms = current_rms;
    }
    if (gain < cfg.convergence_rms) break;
  }

  best.check_valid();
  return {best, best.apply(source)};
}

/// Geodesic distance between rotations, in radians.
inline double rotation_angle(const Mat3& a, const Mat3& b) {
  Mat3 r = a.transposed() * b;
  double tr = std::clamp((r.m[0][0] + r.m[1][1] + r.m[2][2] - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(tr);
}

}  // namespace locadit
