//
// Sparse multi-resolution voxelization over the [-1,1]^3 domain, trilinear
// normal splatting, densification for the coarse bottleneck, and the
// voxel<->world coordinate convention.
//
// Grid files (magic "LCVG"): 4-byte magic, u32 manifest length, JSON manifest
// {resolution, channels, count}, then count (i,j,k) u16 triplets followed by
// count*channels f32 features, all little-endian.
//

#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "locadit/core.hpp"
#include "locadit/io.hpp"
#include "locadit/pointcloud.hpp"

namespace locadit {

using VoxelIdx = std::array<int, 3>;

inline uint64_t voxel_key(const VoxelIdx& v) {
  return (uint64_t(uint16_t(v[0])) << 32) | (uint64_t(uint16_t(v[1])) << 16) |
         uint64_t(uint16_t(v[2]));
}

struct SparseVoxelGrid {
  uint32_t resolution = 0;
  uint32_t channels = 0;
  std::vector<VoxelIdx> indices;  // sorted lexicographically, unique
  std::vector<double> features;   // indices.size() * channels

  size_t count() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  const double* feature(size_t i) const { return features.data() + i * channels; }
  double* feature(size_t i) { return features.data() + i * channels; }

  std::unordered_map<uint64_t, size_t> index_map() const {
    std::unordered_map<uint64_t, size_t> m;
    m.reserve(indices.size() * 2);
    for (size_t i = 0; i < indices.size(); ++i) m.emplace(voxel_key(indices[i]), i);
    return m;
  }

  void sort_canonical() {
    if (channels == 0) {
      std::sort(indices.begin(), indices.end());
      return;
    }
    std::vector<size_t> order(indices.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return indices[a] < indices[b]; });
    std::vector<VoxelIdx> idx2(indices.size());
    std::vector<double> feat2(features.size());
    for (size_t i = 0; i < order.size(); ++i) {
      idx2[i] = indices[order[i]];
      std::copy_n(feature(order[i]), channels, feat2.data() + i * channels);
    }
    indices = std::move(idx2);
    features = std::move(feat2);
  }
};

struct DenseGrid {
  uint32_t resolution = 0;
  uint32_t channels = 0;
  std::vector<double> occupancy;  // resolution^3 values in [0,1]
  std::vector<double> features;   // resolution^3 * channels, optional

  size_t cell(int i, int j, int k) const {
    return (size_t(i) * resolution + size_t(j)) * resolution + size_t(k);
  }
  size_t cells() const { return size_t(resolution) * resolution * resolution; }
};

// ---------------------------------------------------------------------------
// coordinate convention
// ---------------------------------------------------------------------------

inline VoxelIdx point_to_voxel(const Vec3& p, uint32_t R) {
  VoxelIdx v;
  for (int a = 0; a < 3; ++a) {
    int i = int(std::floor((p[a] + 1.0) * double(R) / 2.0));
    v[a] = std::clamp(i, 0, int(R) - 1);
  }
  return v;
}

inline Vec3 voxel_center(const VoxelIdx& v, uint32_t R) {
  return {2.0 * (v[0] + 0.5) / double(R) - 1.0, 2.0 * (v[1] + 0.5) / double(R) - 1.0,
          2.0 * (v[2] + 0.5) / double(R) - 1.0};
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Occupancy-only voxelization of a cloud normalized to [-1,1]^3.
inline SparseVoxelGrid voxelize(const PointCloud& cloud, uint32_t resolution) {
  if (cloud.empty()) fail(errc::empty_cloud, "voxelize on empty cloud");
  SparseVoxelGrid g;
  g.resolution = resolution;
  g.channels = 0;
  g.indices.reserve(cloud.size());
  for (const Vec3& p : cloud.positions) g.indices.push_back(point_to_voxel(p, resolution));
  std::sort(g.indices.begin(), g.indices.end());
  g.indices.erase(std::unique(g.indices.begin(), g.indices.end()), g.indices.end());
  return g;
}

/// Trilinear weights of a point against the 8 surrounding voxel centers.
/// Weights always sum to 1; indices clamp at the domain boundary.
inline std::array<std::pair<VoxelIdx, double>, 8> trilinear_stencil(const Vec3& p, uint32_t R) {
  double fx[3];
  int base[3];
  for (int a = 0; a < 3; ++a) {
    double g = (p[a] + 1.0) * double(R) / 2.0 - 0.5;  // continuous center-lattice coordinate
    base[a] = int(std::floor(g));
    fx[a] = g - base[a];
  }
  std::array<std::pair<VoxelIdx, double>, 8> out;
  int s = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        double w = (dx ? fx[0] : 1 - fx[0]) * (dy ? fx[1] : 1 - fx[1]) * (dz ? fx[2] : 1 - fx[2]);
        VoxelIdx v{std::clamp(base[0] + dx, 0, int(R) - 1), std::clamp(base[1] + dy, 0, int(R) - 1),
                   std::clamp(base[2] + dz, 0, int(R) - 1)};
        out[s++] = {v, w};
      }
  return out;
}

// Distributes each point's unit normal to the 8 voxel centers around it with
// trilinear weights (the support is the occupied set dilated by one ring;
// contributions clamp at the domain boundary so every point deposits total
// weight 1). Accumulated vectors are renormalized to unit length; voxels that
// receive no weight are pruned.
inline SparseVoxelGrid splat_normals(const PointCloud& cloud, const SparseVoxelGrid& grid) {
  if (!cloud.has_normals()) fail(errc::missing_normals, "splat_normals needs normals");
  uint32_t R = grid.resolution;

  std::unordered_map<uint64_t, std::array<double, 4>> acc;  // normal sum xyz + weight
  acc.reserve(cloud.size() * 2);

  for (size_t pi = 0; pi < cloud.size(); ++pi) {
    const Vec3& n = cloud.normals[pi];
    for (const auto& [v, w] : trilinear_stencil(cloud.positions[pi], R)) {
      if (w == 0.0) continue;
      auto& slot = acc[voxel_key(v)];
      slot[0] += w * n.x;
      slot[1] += w * n.y;
      slot[2] += w * n.z;
      slot[3] += w;
    }
  }

  SparseVoxelGrid out;
  out.resolution = R;
  out.channels = 3;
  out.indices.reserve(acc.size());
  std::vector<std::pair<VoxelIdx, std::array<double, 3>>> rows;
  rows.reserve(acc.size());
  for (const auto& [key, slot] : acc) {
    if (slot[3] <= 0.0) continue;
    Vec3 sum{slot[0], slot[1], slot[2]};
    double len = norm(sum);
    if (len < 1e-12) continue;  // cancelled normals carry no direction
    VoxelIdx v{int(key >> 32) & 0xffff, int(key >> 16) & 0xffff, int(key) & 0xffff};
    rows.push_back({v, {sum.x / len, sum.y / len, sum.z / len}});
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  out.features.reserve(rows.size() * 3);
  for (const auto& [v, f] : rows) {
    out.indices.push_back(v);
    out.features.insert(out.features.end(), f.begin(), f.end());
  }
  return out;
}

/// One point per occupied voxel at its center; C=3 features become normals.
inline PointCloud voxel_centers_to_points(const SparseVoxelGrid& grid) {
  if (grid.empty()) fail(errc::empty_grid, "voxel_centers_to_points on empty grid");
  PointCloud out;
  out.positions.reserve(grid.count());
  for (const VoxelIdx& v : grid.indices) out.positions.push_back(voxel_center(v, grid.resolution));
  if (grid.channels == 3) {
    out.normals.reserve(grid.count());
    for (size_t i = 0; i < grid.count(); ++i) {
      Vec3 n{grid.feature(i)[0], grid.feature(i)[1], grid.feature(i)[2]};
      out.normals.push_back(normalized(n));
    }
  }
  return out;
}

/// Full-volume occupancy with features zero-filled at unoccupied voxels.
inline DenseGrid densify(const SparseVoxelGrid& grid, size_t max_cells = size_t(1) << 24) {
  size_t cells = size_t(grid.resolution) * grid.resolution * grid.resolution;
  if (grid.resolution == 0 || cells > max_cells)
    fail(errc::resolution_too_large, "densify exceeds the configured cell budget");
  DenseGrid d;
  d.resolution = grid.resolution;
  d.channels = grid.channels;
  d.occupancy.assign(cells, 0.0);
  d.features.assign(cells * grid.channels, 0.0);
  for (size_t i = 0; i < grid.count(); ++i) {
    const VoxelIdx& v = grid.indices[i];
    size_t c = d.cell(v[0], v[1], v[2]);
    d.occupancy[c] = 1.0;
    for (uint32_t ch = 0; ch < grid.channels; ++ch)
      d.features[c * grid.channels + ch] = grid.feature(i)[ch];
  }
  return d;
}

/// Voxels whose occupancy clears the threshold, with their features.
inline SparseVoxelGrid sparsify(const DenseGrid& dense, double threshold = 0.5) {
  SparseVoxelGrid g;
  g.resolution = dense.resolution;
  g.channels = dense.channels;
  int R = int(dense.resolution);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      for (int k = 0; k < R; ++k) {
        size_t c = dense.cell(i, j, k);
        if (dense.occupancy[c] >= threshold) {
          g.indices.push_back({i, j, k});
          for (uint32_t ch = 0; ch < dense.channels; ++ch)
            g.features.push_back(dense.features[c * dense.channels + ch]);
        }
      }
  return g;
}

// ---------------------------------------------------------------------------
// LCVG serialization
// ---------------------------------------------------------------------------

inline void write_grid(const std::string& path, const SparseVoxelGrid& grid) {
  auto out = detail::open_out(path, true);
  nlohmann::json manifest = {
      {"resolution", grid.resolution}, {"channels", grid.channels}, {"count", grid.count()}};
  std::string m = manifest.dump();
  out.write("LCVG", 4);
  uint32_t mlen = uint32_t(m.size());
  out.write(reinterpret_cast<const char*>(&mlen), 4);
  out.write(m.data(), std::streamsize(m.size()));
  for (const VoxelIdx& v : grid.indices) {
    uint16_t t[3] = {uint16_t(v[0]), uint16_t(v[1]), uint16_t(v[2])};
    out.write(reinterpret_cast<const char*>(t), 6);
  }
  for (double f : grid.features) {
    float g = float(f);
    out.write(reinterpret_cast<const char*>(&g), 4);
  }
  if (!out) fail(errc::io_error, "write failed: " + path);
}

inline SparseVoxelGrid read_grid(const std::string& path) {
  auto in = detail::open_in(path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LCVG", 4) != 0) fail(errc::io_error, "not a LCVG file: " + path);
  uint32_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), 4);
  std::string m(mlen, '\0');
  in.read(m.data(), mlen);
  if (!in) fail(errc::io_error, "truncated LCVG manifest: " + path);
  auto manifest = nlohmann::json::parse(m);

  SparseVoxelGrid g;
  g.resolution = manifest.at("resolution").get<uint32_t>();
  g.channels = manifest.at("channels").get<uint32_t>();
  size_t count = manifest.at("count").get<size_t>();
  g.indices.resize(count);
  for (size_t i = 0; i < count; ++i) {
    uint16_t t[3];
    in.read(reinterpret_cast<char*>(t), 6);
    g.indices[i] = {int(t[0]), int(t[1]), int(t[2])};
  }
  g.features.resize(count * g.channels);
  for (double& f : g.features) {
    float v;
    in.read(reinterpret_cast<char*>(&v), 4);
    f = double(v);
  }
  if (!in) fail(errc::io_error, "truncated LCVG payload: " + path);
  return g;
}

}  // namespace locadit
