//
// Building blocks for the voxel networks: site sets (dense or sparse voxel
// index lists with row lookup), neighborhood tables for 3x3x3 submanifold
// convolutions, 2x down/up sampling between parent and child lattices, and
// the conv/linear layer wrappers over the tape.
//

#pragma once

#include <map>
#include <unordered_map>
#include <vector>

#include "locadit/autodiff.hpp"
#include "locadit/voxel.hpp"

namespace locadit {

struct LossBreakdown {
  double total = 0;
  std::map<std::string, double> components;
  std::map<std::string, double> weights;
};

struct SiteSet {
  uint32_t resolution = 0;
  std::vector<VoxelIdx> sites;
  std::unordered_map<uint64_t, size_t> lookup;

  size_t count() const { return sites.size(); }

  int64_t row_of(const VoxelIdx& v) const {
    auto it = lookup.find(voxel_key(v));
    return it == lookup.end() ? -1 : int64_t(it->second);
  }

  void build_lookup() {
    lookup.clear();
    lookup.reserve(sites.size() * 2);
    for (size_t i = 0; i < sites.size(); ++i) lookup.emplace(voxel_key(sites[i]), i);
  }

  static SiteSet of(uint32_t R, std::vector<VoxelIdx> idx, bool sort = true) {
    SiteSet s;
    s.resolution = R;
    s.sites = std::move(idx);
    if (sort) {
      std::sort(s.sites.begin(), s.sites.end());
      s.sites.erase(std::unique(s.sites.begin(), s.sites.end()), s.sites.end());
    }
    s.build_lookup();
    return s;
  }

  static SiteSet dense(uint32_t R) {
    std::vector<VoxelIdx> idx;
    idx.reserve(size_t(R) * R * R);
    for (int i = 0; i < int(R); ++i)
      for (int j = 0; j < int(R); ++j)
        for (int k = 0; k < int(R); ++k) idx.push_back({i, j, k});
    return of(R, std::move(idx), false);
  }
};

/// Unique parent sites one level coarser (resolution halves).
inline SiteSet parents_of(const SiteSet& s) {
  std::vector<VoxelIdx> idx;
  idx.reserve(s.count());
  for (const VoxelIdx& v : s.sites) idx.push_back({v[0] >> 1, v[1] >> 1, v[2] >> 1});
  return SiteSet::of(s.resolution / 2, std::move(idx));
}

// All 8 children per site, blocked per parent in (b0*4+b1*2+b2) order. The
// order matches the row layout that upsample2 emits, so it must not be
// re-sorted.
inline SiteSet children_of(const SiteSet& s) {
  std::vector<VoxelIdx> idx;
  idx.reserve(s.count() * 8);
  for (const VoxelIdx& v : s.sites)
    for (int b0 = 0; b0 < 2; ++b0)
      for (int b1 = 0; b1 < 2; ++b1)
        for (int b2 = 0; b2 < 2; ++b2)
          idx.push_back({v[0] * 2 + b0, v[1] * 2 + b1, v[2] * 2 + b2});
  return SiteSet::of(s.resolution * 2, std::move(idx), false);
}

/// 27 input rows per output site (3x3x3 window, -1 where absent).
inline std::vector<int64_t> conv_table(const SiteSet& out, const SiteSet& in) {
  std::vector<int64_t> tbl(out.count() * 27);
  size_t k = 0;
  int R = int(in.resolution);
  for (const VoxelIdx& v : out.sites)
    for (int d0 = -1; d0 <= 1; ++d0)
      for (int d1 = -1; d1 <= 1; ++d1)
        for (int d2 = -1; d2 <= 1; ++d2) {
          VoxelIdx n{v[0] + d0, v[1] + d1, v[2] + d2};
          bool inside = n[0] >= 0 && n[1] >= 0 && n[2] >= 0 && n[0] < R && n[1] < R && n[2] < R;
          tbl[k++] = inside ? in.row_of(n) : -1;
        }
  return tbl;
}

/// 8 child rows per parent site (-1 where the child is not in `children`).
inline std::vector<int64_t> down_table(const SiteSet& parents, const SiteSet& children) {
  std::vector<int64_t> tbl(parents.count() * 8);
  size_t k = 0;
  for (const VoxelIdx& v : parents.sites)
    for (int b0 = 0; b0 < 2; ++b0)
      for (int b1 = 0; b1 < 2; ++b1)
        for (int b2 = 0; b2 < 2; ++b2)
          tbl[k++] = children.row_of({v[0] * 2 + b0, v[1] * 2 + b1, v[2] * 2 + b2});
  return tbl;
}

/// One `from` row per `to` site (-1 where absent).
inline std::vector<int64_t> map_rows(const SiteSet& to, const SiteSet& from) {
  std::vector<int64_t> tbl(to.count());
  for (size_t i = 0; i < to.count(); ++i) tbl[i] = from.row_of(to.sites[i]);
  return tbl;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

inline void register_linear(ParamStore& p, const std::string& prefix, int cin, int cout,
                            const Rng& root, bool zero = false) {
  if (zero) {
    p.add(prefix + ".W", {cin, cout});
    p.add(prefix + ".b", {1, cout});
  } else {
    p.add_glorot(prefix + ".W", cin, cout, {cin, cout}, root);
    p.add(prefix + ".b", {1, cout});
  }
}

inline Var linear(Tape& t, ParamStore& p, const std::string& prefix, Var x) {
  const auto& shape = p.slice(prefix + ".W").shape;
  Var W = t.param(p, prefix + ".W", size_t(shape[0]), size_t(shape[1]));
  Var b = t.param(p, prefix + ".b", 1, size_t(shape[1]));
  return t.add_bias(t.matmul(x, W), b);
}

inline void register_conv3(ParamStore& p, const std::string& prefix, int cin, int cout,
                           const Rng& root, bool zero = false) {
  if (zero) {
    p.add(prefix + ".W", {27 * cin, cout});
    p.add(prefix + ".b", {1, cout});
  } else {
    p.add_glorot(prefix + ".W", 27 * cin, cout, {27 * cin, cout}, root);
    p.add(prefix + ".b", {1, cout});
  }
}

/// 3x3x3 convolution over a site set (zero where a neighbor is absent).
inline Var conv3(Tape& t, ParamStore& p, const std::string& prefix, Var x,
                 const std::vector<int64_t>& table, size_t n_out) {
  const auto& shape = p.slice(prefix + ".W").shape;
  size_t cin = size_t(shape[0]) / 27, cout = size_t(shape[1]);
  if (x.cols != cin) fail(errc::shape_mismatch, "conv3 channel mismatch at " + prefix);
  Var gathered = t.gather_rows(x, table);                 // [n_out*27 x cin]
  Var cols = t.reshape(gathered, n_out, 27 * cin);
  Var W = t.param(p, prefix + ".W", 27 * cin, cout);
  Var b = t.param(p, prefix + ".b", 1, cout);
  return t.add_bias(t.matmul(cols, W), b);
}

inline void register_down2(ParamStore& p, const std::string& prefix, int cin, int cout,
                           const Rng& root) {
  p.add_glorot(prefix + ".W", 8 * cin, cout, {8 * cin, cout}, root);
  p.add(prefix + ".b", {1, cout});
}

/// Stride-2 convolution: each parent aggregates its (up to) 8 children.
inline Var down2(Tape& t, ParamStore& p, const std::string& prefix, Var x,
                 const std::vector<int64_t>& table, size_t n_parents) {
  const auto& shape = p.slice(prefix + ".W").shape;
  size_t cin = size_t(shape[0]) / 8, cout = size_t(shape[1]);
  if (x.cols != cin) fail(errc::shape_mismatch, "down2 channel mismatch at " + prefix);
  Var gathered = t.gather_rows(x, table);  // [n_parents*8 x cin]
  Var cols = t.reshape(gathered, n_parents, 8 * cin);
  Var W = t.param(p, prefix + ".W", 8 * cin, cout);
  Var b = t.param(p, prefix + ".b", 1, cout);
  return t.add_bias(t.matmul(cols, W), b);
}

inline void register_up2(ParamStore& p, const std::string& prefix, int cin, int cout,
                         const Rng& root) {
  p.add_glorot(prefix + ".W", cin, 8 * cout, {cin, 8 * cout}, root);
  p.add(prefix + ".b", {1, cout});
}

/// Each parent emits 8 children; output rows are blocked per parent in the
/// children_of() order.
inline Var up2(Tape& t, ParamStore& p, const std::string& prefix, Var x) {
  const auto& shape = p.slice(prefix + ".W").shape;
  size_t cin = size_t(shape[0]), cout = size_t(shape[1]) / 8;
  if (x.cols != cin) fail(errc::shape_mismatch, "up2 channel mismatch at " + prefix);
  Var W = t.param(p, prefix + ".W", cin, 8 * cout);
  Var wide = t.matmul(x, W);                       // [n x 8*cout]
  Var rows = t.reshape(wide, x.rows * 8, cout);    // [(n*8) x cout]
  Var b = t.param(p, prefix + ".b", 1, cout);
  return t.add_bias(rows, b);
}

// Per-step feature modulation from a learned embedding table
// [steps+1 x 2*width]: h <- h*(1+s_t) + b_t.
inline void register_step_film(ParamStore& p, const std::string& prefix, int steps, int width,
                               const Rng& root) {
  p.add_uniform(prefix + ".table", {steps + 1, 2 * width}, 0.02, root);
}

inline Var step_film(Tape& t, ParamStore& p, const std::string& prefix, Var h, int step) {
  const auto& shape = p.slice(prefix + ".table").shape;
  int steps_plus_1 = shape[0];
  size_t width = size_t(shape[1]) / 2;
  if (step < 0 || step >= steps_plus_1) fail(errc::step_out_of_range, "film step out of range");
  Var table = t.param(p, prefix + ".table", size_t(steps_plus_1), 2 * width);
  std::vector<int64_t> idx = {step};
  Var row = t.gather_rows(table, idx);  // [1 x 2*width]
  Var s = t.slice_cols(row, 0, width);
  Var b = t.slice_cols(row, width, 2 * width);
  return t.add_bias(t.mul_row_broadcast(h, t.add_scalar(s, 1.0)), b);
}

}  // namespace locadit
