//
// Classic 3D gradient-lattice noise. Gradients are hashed per lattice point
// from the seed; values are exactly 0 at integer lattice coordinates and
// bounded well inside [-1, 1] (unit gradients give a sqrt(3)/2 bound).
//

#pragma once

#include "locadit/core.hpp"
#include "locadit/rng.hpp"

namespace locadit {

namespace detail {

// the 12 cube-edge directions, normalized
inline const Vec3 kGradients[12] = {
    {M_SQRT1_2, M_SQRT1_2, 0},  {-M_SQRT1_2, M_SQRT1_2, 0},  {M_SQRT1_2, -M_SQRT1_2, 0},
    {-M_SQRT1_2, -M_SQRT1_2, 0}, {M_SQRT1_2, 0, M_SQRT1_2},  {-M_SQRT1_2, 0, M_SQRT1_2},
    {M_SQRT1_2, 0, -M_SQRT1_2},  {-M_SQRT1_2, 0, -M_SQRT1_2}, {0, M_SQRT1_2, M_SQRT1_2},
    {0, -M_SQRT1_2, M_SQRT1_2},  {0, M_SQRT1_2, -M_SQRT1_2},  {0, -M_SQRT1_2, -M_SQRT1_2}};

inline Vec3 lattice_gradient(int64_t ix, int64_t iy, int64_t iz, uint64_t seed) {
  uint64_t h = seed;
  h ^= splitmix64(h) + uint64_t(ix) * 0x9E3779B185EBCA87ULL;
  h ^= splitmix64(h) + uint64_t(iy) * 0xC2B2AE3D27D4EB4FULL;
  h ^= splitmix64(h) + uint64_t(iz) * 0x165667B19E3779F9ULL;
  return kGradients[splitmix64(h) % 12];
}

inline double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

}  // namespace detail

inline double perlin3(const Vec3& p, double frequency, uint64_t seed) {
  Vec3 q = p * frequency;
  int64_t ix = int64_t(std::floor(q.x)), iy = int64_t(std::floor(q.y)),
          iz = int64_t(std::floor(q.z));
  double fx = q.x - double(ix), fy = q.y - double(iy), fz = q.z - double(iz);
  double ux = detail::fade(fx), uy = detail::fade(fy), uz = detail::fade(fz);

  double corner[2][2][2];
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        Vec3 g = detail::lattice_gradient(ix + dx, iy + dy, iz + dz, seed);
        Vec3 off{fx - dx, fy - dy, fz - dz};
        corner[dx][dy][dz] = dot(g, off);
      }

  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  double x00 = lerp(corner[0][0][0], corner[1][0][0], ux);
  double x10 = lerp(corner[0][1][0], corner[1][1][0], ux);
  double x01 = lerp(corner[0][0][1], corner[1][0][1], ux);
  double x11 = lerp(corner[0][1][1], corner[1][1][1], ux);
  double y0 = lerp(x00, x10, uy);
  double y1 = lerp(x01, x11, uy);
  return lerp(y0, y1, uz);
}

}  // namespace locadit
