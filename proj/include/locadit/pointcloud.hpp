//
// Point clouds, the [-1,1] normalization convention, and kNN normal
// estimation.
//

#pragma once

#include <Eigen/Dense>
#include <vector>

#include "locadit/core.hpp"
#include "locadit/kdtree.hpp"

namespace locadit {

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // empty, or same length as positions, unit vectors

  size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_normals() const { return !normals.empty(); }

  Bounds3 bounds() const {
    Bounds3 b;
    for (const Vec3& p : positions) b.expand(p);
    return b;
  }

  Vec3 centroid() const {
    Vec3 c{0, 0, 0};
    for (const Vec3& p : positions) c += p;
    return empty() ? c : c / double(size());
  }

  void check_valid() const {
    if (!normals.empty() && normals.size() != positions.size())
      fail(errc::shape_mismatch, "normals/positions length mismatch");
    for (const Vec3& p : positions)
      if (!finite(p)) fail(errc::nan_vertex, "non-finite point coordinate");
    for (const Vec3& n : normals)
      if (std::abs(norm(n) - 1.0) > 1e-6) fail(errc::shape_mismatch, "normal not unit length");
  }
};

/// Maps cloud coordinates into [-1,1]^3: q = (p + translation) * scale.
struct NormalizationTransform {
  Vec3 translation{0, 0, 0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p + translation) * scale; }
  Vec3 invert(const Vec3& q) const { return q / scale - translation; }

  PointCloud apply(const PointCloud& c) const {
    PointCloud out = c;
    for (Vec3& p : out.positions) p = apply(p);
    return out;
  }
};

// Centers the centroid at the origin and scales the largest per-axis
// half-extent to exactly 1. Extents below 1e-9 keep scale 1 so single-point
// clouds stay processable.
inline std::pair<PointCloud, NormalizationTransform> normalize(const PointCloud& cloud) {
  if (cloud.empty()) fail(errc::empty_cloud, "normalize requires a non-empty cloud");
  for (const Vec3& p : cloud.positions)
    if (!finite(p)) fail(errc::nan_vertex, "normalize requires finite coordinates");

  NormalizationTransform t;
  Vec3 c = cloud.centroid();
  t.translation = -c;

  double half_extent = 0;
  for (const Vec3& p : cloud.positions) {
    Vec3 d = p - c;
    half_extent = std::max({half_extent, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
  }
  t.scale = half_extent > 1e-9 ? 1.0 / half_extent : 1.0;

  PointCloud out = cloud;
  for (Vec3& p : out.positions) p = t.apply(p);
  return {std::move(out), t};
}

// Flips each normal into a canonical half-space (dominant component
// positive, ties broken toward x then y then z). A local, per-point rule:
// it removes the PCA sign ambiguity for axis-consistent surfaces without any
// propagation across the cloud.
inline PointCloud orient_normals_canonical(PointCloud cloud) {
  for (Vec3& n : cloud.normals) {
    int dominant = 0;
    for (int a = 1; a < 3; ++a)
      if (std::abs(n[a]) > std::abs(n[dominant]) + 1e-12) dominant = a;
    if (n[dominant] < 0) n = -n;
  }
  return cloud;
}

// Per-point unit normal from the smallest-eigenvalue eigenvector of the
// covariance of the k nearest neighbors (the point itself included). Sign is
// left unoriented. When the cloud has fewer than k+1 points all available
// neighbors are used.
inline PointCloud estimate_normals(const PointCloud& cloud, size_t k = 30) {
  if (cloud.size() < 2) fail(errc::too_few_points, "normal estimation needs at least 2 points");

  KdTree3 tree(cloud.positions);
  PointCloud out = cloud;
  out.normals.resize(cloud.size());

  size_t neighborhood = std::min(k + 1, cloud.size());  // query point plus k neighbors
  for (size_t i = 0; i < cloud.size(); ++i) {
    std::vector<size_t> nn = tree.knearest(cloud.positions[i], neighborhood);
    Vec3 mean{0, 0, 0};
    for (size_t j : nn) mean += cloud.positions[j];
    mean = mean / double(nn.size());

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (size_t j : nn) {
      Vec3 d = cloud.positions[j] - mean;
      Eigen::Vector3d e(d.x, d.y, d.z);
      cov += e * e.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    Eigen::Vector3d n = eig.eigenvectors().col(0);  // ascending eigenvalues
    double len = n.norm();
    out.normals[i] = len > 0 ? Vec3{n.x() / len, n.y() / len, n.z() / len} : Vec3{0, 0, 1};
  }
  return out;
}

}  // namespace locadit
