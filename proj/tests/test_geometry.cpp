#include <catch2/catch_amalgamated.hpp>

#include "locadit/mesh.hpp"
#include "locadit/pointcloud.hpp"
#include "locadit/rng.hpp"

using namespace locadit;

namespace {

PointCloud random_cloud(size_t n, uint64_t seed, double lo = -5, double hi = 7) {
  Rng rng(seed);
  PointCloud c;
  for (size_t i = 0; i < n; ++i)
    c.positions.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)});
  return c;
}

PolyMesh unit_square() {
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace

TEST_CASE("normalize maps the two-point cloud to the unit segment") {
  PointCloud c;
  c.positions = {{0, 0, 0}, {2, 0, 0}};
  auto [out, t] = normalize(c);
  CHECK(out.positions[0].x == Catch::Approx(-1.0).margin(1e-12));
  CHECK(out.positions[1].x == Catch::Approx(1.0).margin(1e-12));
  CHECK(t.translation.x == Catch::Approx(-1.0).margin(1e-12));
  CHECK(t.translation.y == Catch::Approx(0.0).margin(1e-12));
  CHECK(t.scale == Catch::Approx(1.0));
}

TEST_CASE("normalize keeps scale 1 on a degenerate single point") {
  PointCloud c;
  c.positions = {{5, 5, 5}};
  auto [out, t] = normalize(c);
  CHECK(norm(out.positions[0]) == Catch::Approx(0.0).margin(1e-12));
  CHECK(t.scale == 1.0);
}

TEST_CASE("normalize is idempotent and invertible") {
  PointCloud c = random_cloud(1000, 42);
  auto [n1, t1] = normalize(c);
  auto [n2, t2] = normalize(n1);
  for (size_t i = 0; i < c.size(); ++i) {
    CHECK(norm(n1.positions[i] - n2.positions[i]) < 1e-9);
    CHECK(norm(t1.invert(t1.apply(c.positions[i])) - c.positions[i]) < 1e-12);
  }
  CHECK(norm(t2.translation) < 1e-9);
  CHECK(t2.scale == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("normalize rejects an empty cloud") {
  PointCloud c;
  CHECK_THROWS_AS(normalize(c), error);
}

TEST_CASE("estimate_normals recovers the plane normal exactly") {
  Rng rng(7);
  PointCloud c;
  for (int i = 0; i < 100; ++i) c.positions.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), 0});
  PointCloud out = estimate_normals(c, 30);
  for (const Vec3& n : out.normals) {
    double d = std::min(norm(n - Vec3{0, 0, 1}), norm(n + Vec3{0, 0, 1}));
    CHECK(d < 1e-6);
  }
}

TEST_CASE("estimate_normals tracks the radial direction on a sphere") {
  Rng rng(11);
  PointCloud c;
  for (int i = 0; i < 2000; ++i) c.positions.push_back(normalized(rng.normal3()));
  PointCloud out = estimate_normals(c, 30);
  size_t good = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    double cosang = std::abs(dot(out.normals[i], out.positions[i]));
    if (std::acos(std::min(1.0, cosang)) < 10.0 * M_PI / 180.0) ++good;
  }
  CHECK(double(good) / double(out.size()) >= 0.99);
}

TEST_CASE("estimate_normals falls back to all available neighbors") {
  PointCloud c;
  c.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  PointCloud out = estimate_normals(c, 30);
  REQUIRE(out.normals.size() == 5);
  for (const Vec3& n : out.normals) CHECK(std::abs(norm(n) - 1.0) < 1e-6);
}

TEST_CASE("estimate_normals needs two points") {
  PointCloud c;
  c.positions = {{0, 0, 0}};
  CHECK_THROWS_AS(estimate_normals(c), error);
}

TEST_CASE("estimate_normals output norms are unit") {
  PointCloud c = random_cloud(500, 99);
  PointCloud out = estimate_normals(c, 12);
  for (const Vec3& n : out.normals) CHECK(std::abs(norm(n) - 1.0) < 1e-6);
}

TEST_CASE("triangulate_fan splits a quad into the two fan triangles") {
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2, 3}};
  FanResult r = triangulate_fan(m);
  REQUIRE(r.mesh.faces.size() == 2);
  CHECK(r.mesh.faces[0] == std::vector<uint32_t>{0, 1, 2});
  CHECK(r.mesh.faces[1] == std::vector<uint32_t>{0, 2, 3});
  CHECK(r.dropped == 0);
}

TEST_CASE("triangulate_fan leaves triangle meshes unchanged") {
  PolyMesh m = unit_square();
  FanResult r = triangulate_fan(m);
  CHECK(r.mesh.faces == m.faces);
}

TEST_CASE("triangulate_fan drops faces with invalid indices") {
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 99}, {0, 1, 2}};
  FanResult r = triangulate_fan(m);
  CHECK(r.mesh.faces.size() == 1);
  CHECK(r.dropped == 1);
}

TEST_CASE("triangulate_fan preserves planar polygon area") {
  // convex octagon in the z=0 plane
  PolyMesh m;
  std::vector<uint32_t> face;
  for (int i = 0; i < 8; ++i) {
    double a = 2 * M_PI * i / 8;
    m.vertices.push_back({std::cos(a), std::sin(a), 0});
    face.push_back(uint32_t(i));
  }
  m.faces = {face};
  // shoelace area of the polygon
  double area_poly = 0;
  for (int i = 0; i < 8; ++i) {
    const Vec3 &a = m.vertices[i], &b = m.vertices[(i + 1) % 8];
    area_poly += 0.5 * (a.x * b.y - b.x * a.y);
  }
  double area_fan = 0;
  for (const auto& f : triangulate_fan(m).mesh.faces) {
    const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &c = m.vertices[f[2]];
    area_fan += 0.5 * (cross(b - a, c - a)).z;  // signed, consistent orientation
  }
  CHECK(area_fan == Catch::Approx(area_poly).margin(1e-9));
}

TEST_CASE("sample_surface centroid matches the analytic centroid") {
  PointCloud s = sample_surface(unit_square(), 100000, 123);
  Vec3 c = s.centroid();
  CHECK(std::abs(c.x - 0.5) < 0.01);
  CHECK(std::abs(c.y - 0.5) < 0.01);
  CHECK(std::abs(c.z) < 0.01);
}

TEST_CASE("sample_surface falls back to vertices on a degenerate mesh") {
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};  // collinear: zero area
  m.faces = {{0, 1, 2}};
  PointCloud s = sample_surface(m, 50, 5);
  for (const Vec3& p : s.positions) {
    bool at_vertex = false;
    for (const Vec3& v : m.vertices) at_vertex |= norm(p - v) == 0.0;
    CHECK(at_vertex);
  }
}

TEST_CASE("sample_surface points lie inside a source triangle") {
  PolyMesh m = unit_square();
  PointCloud s = sample_surface(m, 2000, 77);
  for (const Vec3& p : s.positions) {
    CHECK(std::abs(p.z) < 1e-12);
    bool inside = false;
    for (const auto& f : m.faces) {
      const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &c = m.vertices[f[2]];
      // solve p = a + u(b-a) + v(c-a) in the plane
      Vec3 e1 = b - a, e2 = c - a, d = p - a;
      double det = e1.x * e2.y - e1.y * e2.x;
      double u = (d.x * e2.y - d.y * e2.x) / det;
      double v = (e1.x * d.y - e1.y * d.x) / det;
      if (u >= -1e-9 && v >= -1e-9 && u + v <= 1 + 1e-9) inside = true;
    }
    CHECK(inside);
  }
}

TEST_CASE("sample_surface hits triangles in proportion to area") {
  // two triangles with area ratio 1:3 in the z=0 plane
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {10, 0, 0}, {10, 3, 0}, {8, 0, 0}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  double a0 = triangle_area(m.vertices[0], m.vertices[1], m.vertices[2]);
  double a1 = triangle_area(m.vertices[3], m.vertices[4], m.vertices[5]);
  size_t n = 100000;
  PointCloud s = sample_surface(m, n, 2024);
  size_t hits0 = 0;
  for (const Vec3& p : s.positions)
    if (p.x <= 1.5) ++hits0;
  double exp0 = double(n) * a0 / (a0 + a1);
  double exp1 = double(n) - exp0;
  double obs0 = double(hits0), obs1 = double(n - hits0);
  double chi2 = (obs0 - exp0) * (obs0 - exp0) / exp0 + (obs1 - exp1) * (obs1 - exp1) / exp1;
  CHECK(chi2 < 10.828);  // chi-square 1 dof, p = 0.001
}

TEST_CASE("sample_surface is deterministic per seed") {
  PointCloud a = sample_surface(unit_square(), 500, 9);
  PointCloud b = sample_surface(unit_square(), 500, 9);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.positions[i] == b.positions[i]);
}

TEST_CASE("sample_surface rejects a mesh with no vertices") {
  PolyMesh m;
  CHECK_THROWS_AS(sample_surface(m, 10, 1), error);
}
