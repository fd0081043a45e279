//
// Polygonal meshes: validation, fan triangulation, and area-weighted uniform
// surface sampling.
//

#pragma once

#include <vector>

#include "locadit/core.hpp"
#include "locadit/pointcloud.hpp"
#include "locadit/rng.hpp"

namespace locadit {

struct PolyMesh {
  std::vector<Vec3> vertices;
  std::vector<std::vector<uint32_t>> faces;  // vertex indices, length >= 3

  size_t vertex_count() const { return vertices.size(); }
  size_t face_count() const { return faces.size(); }
  bool empty() const { return vertices.empty(); }

  bool is_triangulated() const {
    for (const auto& f : faces)
      if (f.size() != 3) return false;
    return true;
  }

  void check_valid() const {
    for (const Vec3& v : vertices)
      if (!finite(v)) fail(errc::nan_vertex, "non-finite vertex coordinate");
    for (const auto& f : faces) {
      if (f.size() < 3) fail(errc::shape_mismatch, "face with fewer than 3 vertices");
      for (size_t i = 0; i < f.size(); ++i) {
        if (f[i] >= vertices.size()) fail(errc::shape_mismatch, "face index out of range");
        if (f[i] == f[(i + 1) % f.size()]) fail(errc::shape_mismatch, "consecutive repeated vertex");
      }
    }
  }

  Bounds3 bounds() const {
    Bounds3 b;
    for (const Vec3& v : vertices) b.expand(v);
    return b;
  }
};

inline PolyMesh apply(const NormalizationTransform& t, const PolyMesh& mesh) {
  PolyMesh out = mesh;
  for (Vec3& v : out.vertices) v = t.apply(v);
  return out;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

struct FanResult {
  PolyMesh mesh;
  size_t dropped = 0;  // faces disregarded for <3 valid vertices or bad indices
};

// Splits every n-gon (v0..v_{n-1}) into triangles (v0, v_i, v_{i+1});
// triangle faces pass through unchanged. Faces with out-of-range indices or
// fewer than three vertices are dropped and counted.
inline FanResult triangulate_fan(const PolyMesh& mesh) {
  FanResult out;
  out.mesh.vertices = mesh.vertices;
  for (const auto& f : mesh.faces) {
    bool ok = f.size() >= 3;
    for (uint32_t idx : f)
      if (idx >= mesh.vertices.size()) ok = false;
    if (!ok) {
      ++out.dropped;
      continue;
    }
    for (size_t i = 1; i + 1 < f.size(); ++i)
      out.mesh.faces.push_back({f[0], f[uint32_t(i)], f[uint32_t(i + 1)]});
  }
  return out;
}

// Area-weighted uniform surface sampling. Polygons are fan-triangulated
// first; each sample picks a triangle with probability proportional to area
// and a point with uniform barycentric coordinates (two variates, reflected
// when their sum exceeds 1). If the total area is below 1e-12 the points are
// drawn from the vertex set instead.
inline PointCloud sample_surface(const PolyMesh& mesh, size_t n, uint64_t seed) {
  if (mesh.vertices.empty()) fail(errc::empty_mesh, "sample_surface on a mesh with no vertices");
  if (n == 0) fail(errc::shape_mismatch, "sample count must be >= 1");

  PolyMesh tri = triangulate_fan(mesh).mesh;
  std::vector<double> cdf(tri.faces.size());
  double total = 0;
  for (size_t i = 0; i < tri.faces.size(); ++i) {
    const auto& f = tri.faces[i];
    total += triangle_area(tri.vertices[f[0]], tri.vertices[f[1]], tri.vertices[f[2]]);
    cdf[i] = total;
  }

  Rng rng(seed);
  PointCloud out;
  out.positions.reserve(n);

  if (total < 1e-12) {
    for (size_t i = 0; i < n; ++i)
      out.positions.push_back(mesh.vertices[rng.index(mesh.vertices.size())]);
    return out;
  }

  for (size_t i = 0; i < n; ++i) {
    double pick = rng.uniform() * total;
    size_t fi = std::lower_bound(cdf.begin(), cdf.end(), pick) - cdf.begin();
    if (fi >= tri.faces.size()) fi = tri.faces.size() - 1;
    const auto& f = tri.faces[fi];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {  // fold back into the triangle
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 &a = tri.vertices[f[0]], &b = tri.vertices[f[1]], &c = tri.vertices[f[2]];
    out.positions.push_back(a + (b - a) * u + (c - a) * v);
  }
  return out;
}

}  // namespace locadit
