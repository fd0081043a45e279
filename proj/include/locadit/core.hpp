//
// Core value types and error codes shared across the library.
//

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace locadit {

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

enum class errc {
  empty_cloud,
  empty_mesh,
  empty_grid,
  too_few_points,
  missing_normals,
  degenerate_geometry,
  resolution_too_large,
  resolution_mismatch,
  kind_mismatch,
  shape_mismatch,
  step_out_of_range,
  non_triangulated,
  out_of_range_coordinate,
  nan_vertex,
  malformed_sequence,
  vocabulary_overflow,
  source_too_small,
  all_empty_balls,
  stage_failure,
  io_error,
  bad_config,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::empty_cloud: return "EmptyCloud";
    case errc::empty_mesh: return "EmptyMesh";
    case errc::empty_grid: return "EmptyGrid";
    case errc::too_few_points: return "TooFewPoints";
    case errc::missing_normals: return "MissingNormals";
    case errc::degenerate_geometry: return "DegenerateGeometry";
    case errc::resolution_too_large: return "ResolutionTooLarge";
    case errc::resolution_mismatch: return "ResolutionMismatch";
    case errc::kind_mismatch: return "KindMismatch";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::step_out_of_range: return "StepOutOfRange";
    case errc::non_triangulated: return "NonTriangulated";
    case errc::out_of_range_coordinate: return "OutOfRangeCoordinate";
    case errc::nan_vertex: return "NaNVertex";
    case errc::malformed_sequence: return "MalformedSequence";
    case errc::vocabulary_overflow: return "VocabularyOverflow";
    case errc::source_too_small: return "SourceTooSmall";
    case errc::all_empty_balls: return "AllEmptyBalls";
    case errc::stage_failure: return "StageFailure";
    case errc::io_error: return "IoError";
    case errc::bad_config: return "BadConfig";
  }
  return "UnknownError";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

// ---------------------------------------------------------------------------
// small vector math
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double norm_l1(const Vec3& v) { return std::abs(v.x) + std::abs(v.y) + std::abs(v.z); }
inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  return n > 0 ? v / n : Vec3{0, 0, 0};
}
inline bool finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}
inline Vec3 min(const Vec3& a, const Vec3& b) {
  return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 max(const Vec3& a, const Vec3& b) {
  return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

struct Bounds3 {
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::lowest()};

  void expand(const Vec3& p) { lo = min(lo, p); hi = max(hi, p); }
  bool valid() const { return hi.x >= lo.x && hi.y >= lo.y && hi.z >= lo.z; }
  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 size() const { return hi - lo; }
  double diagonal() const { return valid() ? norm(hi - lo) : 0.0; }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
};

}  // namespace locadit
