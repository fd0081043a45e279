//
// Mesh <-> token sequence conversion over a shared vocabulary, plus the
// completion/NaN validation used for failure-rate accounting.
//
// Grammar: BOS, then per face either 9 coordinate tokens (3 vertices, each
// emitted z,y,x) or, when the face shares its first two vertices with the
// previous face, just the 3 tokens of its third vertex; FACE_SEP between
// faces; EOS_STOP at the end. Token files (magic "LCDT"): u32 count then u32
// ids, little-endian; a newline-delimited decimal text form exists for
// debugging.
//

#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "locadit/core.hpp"
#include "locadit/io.hpp"
#include "locadit/mesh.hpp"

namespace locadit {

struct Vocabulary {
  uint32_t coord_bins = 128;  // B, power of two

  uint32_t size() const { return coord_bins + 4; }
  uint32_t bos() const { return coord_bins; }
  uint32_t eos_stop() const { return coord_bins + 1; }
  uint32_t face_sep() const { return coord_bins + 2; }
  uint32_t pad() const { return coord_bins + 3; }

  uint32_t quantize(double c) const {
    int b = int(std::floor((c + 1.0) * double(coord_bins) / 2.0));
    return uint32_t(std::clamp(b, 0, int(coord_bins) - 1));
  }
  double dequantize(uint32_t bin) const { return 2.0 * (bin + 0.5) / double(coord_bins) - 1.0; }
};

enum class TokenKind { prompt, mesh, combined };

struct TokenSequence {
  std::vector<uint32_t> tokens;
  TokenKind kind = TokenKind::mesh;
};

namespace detail {

using QVertex = std::array<uint32_t, 3>;  // quantized (z, y, x)

struct QFace {
  QVertex v[3];

  // cyclic rotation so the smallest vertex comes first; winding preserved
  void canonicalize() {
    int lead = 0;
    for (int i = 1; i < 3; ++i)
      if (v[i] < v[lead]) lead = i;
    QFace r;
    for (int i = 0; i < 3; ++i) r.v[i] = v[(lead + i) % 3];
    *this = r;
  }

  QVertex sort_key() const {  // per-axis minima, then the full tuple
    QVertex k = v[0];
    for (int i = 1; i < 3; ++i)
      for (int a = 0; a < 3; ++a) k[a] = std::min(k[a], v[i][a]);
    return k;
  }

  bool operator<(const QFace& o) const {
    auto ka = sort_key(), kb = o.sort_key();
    if (ka != kb) return ka < kb;
    return std::tie(v[0], v[1], v[2]) < std::tie(o.v[0], o.v[1], o.v[2]);
  }
  bool operator==(const QFace& o) const {
    return v[0] == o.v[0] && v[1] == o.v[1] && v[2] == o.v[2];
  }
};

}  // namespace detail

// Mesh -> tokens. Requires a triangulated mesh with finite vertices inside
// [-1, 1]^3. Faces are rotated to a canonical first vertex and sorted, so the
// sequence is independent of input face order.
inline TokenSequence tokenize_mesh(const PolyMesh& mesh, const Vocabulary& vocab = {}) {
  if (!mesh.is_triangulated()) fail(errc::non_triangulated, "tokenize_mesh needs triangles");
  for (const Vec3& v : mesh.vertices) {
    if (!finite(v)) fail(errc::nan_vertex, "tokenize_mesh with non-finite vertex");
    if (std::abs(v.x) > 1 + 1e-9 || std::abs(v.y) > 1 + 1e-9 || std::abs(v.z) > 1 + 1e-9)
      fail(errc::out_of_range_coordinate, "vertex outside [-1,1]");
  }

  std::vector<detail::QVertex> qverts(mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    qverts[i] = {vocab.quantize(mesh.vertices[i].z), vocab.quantize(mesh.vertices[i].y),
                 vocab.quantize(mesh.vertices[i].x)};

  std::vector<detail::QFace> faces;
  faces.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    detail::QFace q{{qverts[f[0]], qverts[f[1]], qverts[f[2]]}};
    q.canonicalize();
    faces.push_back(q);
  }
  std::sort(faces.begin(), faces.end());

  TokenSequence seq;
  seq.kind = TokenKind::mesh;
  seq.tokens.push_back(vocab.bos());
  for (size_t i = 0; i < faces.size(); ++i) {
    if (i > 0) seq.tokens.push_back(vocab.face_sep());
    bool shared = i > 0 && faces[i].v[0] == faces[i - 1].v[0] && faces[i].v[1] == faces[i - 1].v[1];
    for (int vi = shared ? 2 : 0; vi < 3; ++vi)
      for (int a = 0; a < 3; ++a) seq.tokens.push_back(faces[i].v[vi][a]);
  }
  seq.tokens.push_back(vocab.eos_stop());
  return seq;
}

struct DetokenizeResult {
  PolyMesh mesh;
  bool complete = false;   // EOS_STOP was present
  size_t dropped = 0;      // truncated trailing faces discarded
};

// Tokens -> mesh. Coordinates dequantize to bin centers; equal quantized
// vertices merge into one mesh vertex. A truncated final face is dropped and
// reported; anything else that breaks the grammar raises MalformedSequence.
inline DetokenizeResult detokenize_mesh(const TokenSequence& seq, const Vocabulary& vocab = {}) {
  DetokenizeResult out;
  const auto& t = seq.tokens;
  if (t.empty() || t[0] != vocab.bos()) fail(errc::malformed_sequence, "sequence must open with BOS");

  std::map<detail::QVertex, uint32_t> vert_ids;
  auto vertex_index = [&](const detail::QVertex& q) {
    auto [it, fresh] = vert_ids.try_emplace(q, uint32_t(out.mesh.vertices.size()));
    if (fresh)
      out.mesh.vertices.push_back(
          {vocab.dequantize(q[2]), vocab.dequantize(q[1]), vocab.dequantize(q[0])});
    return it->second;
  };

  detail::QFace prev{};
  bool have_prev = false;
  std::vector<uint32_t> group;
  size_t pos = 1;
  bool saw_eos = false;

  auto flush_group = [&](bool at_end) {
    if (group.empty()) {
      if (!at_end) fail(errc::malformed_sequence, "empty face group");
      return;
    }
    bool shared = group.size() == 3 && have_prev;
    if (group.size() != 9 && !shared) {
      if (at_end && !saw_eos) {  // truncated trailing face
        ++out.dropped;
        group.clear();
        return;
      }
      fail(errc::malformed_sequence, "face group must hold 9 tokens (or 3 after a shared edge)");
    }
    detail::QFace f;
    if (shared) {
      f.v[0] = prev.v[0];
      f.v[1] = prev.v[1];
      f.v[2] = {group[0], group[1], group[2]};
    } else {
      for (int vi = 0; vi < 3; ++vi) f.v[vi] = {group[vi * 3], group[vi * 3 + 1], group[vi * 3 + 2]};
    }
    out.mesh.faces.push_back({vertex_index(f.v[0]), vertex_index(f.v[1]), vertex_index(f.v[2])});
    prev = f;
    have_prev = true;
    group.clear();
  };

  for (; pos < t.size(); ++pos) {
    uint32_t tok = t[pos];
    if (tok == vocab.eos_stop()) {
      saw_eos = true;
      // a partial group before EOS is a truncated face
      if (!group.empty() && group.size() != 9 && !(group.size() == 3 && have_prev)) {
        ++out.dropped;
        group.clear();
      } else {
        flush_group(true);
      }
      break;
    }
    if (tok == vocab.face_sep()) {
      flush_group(false);
    } else if (tok == vocab.pad()) {
      fail(errc::malformed_sequence, "PAD inside a mesh sequence");
    } else if (tok == vocab.bos()) {
      fail(errc::malformed_sequence, "BOS after the first position");
    } else if (tok < vocab.coord_bins) {
      group.push_back(tok);
      if (group.size() > 9) fail(errc::malformed_sequence, "face group longer than 9 tokens");
    } else {
      fail(errc::malformed_sequence, "token outside the vocabulary");
    }
  }

  if (!saw_eos) {
    // truncated sequence: keep complete faces, drop the partial suffix
    if (!group.empty()) {
      if (group.size() == 9 || (group.size() == 3 && have_prev))
        flush_group(true);
      else
        ++out.dropped;
    }
    out.complete = false;
  } else {
    out.complete = true;
  }
  return out;
}

struct ValidationReport {
  bool success = false;
  std::vector<std::string> reasons;  // NoStopToken, NaNFace
};

/// Success iff the sequence carries EOS_STOP and no face has a NaN vertex.
inline ValidationReport validate_generated(const TokenSequence& seq, const PolyMesh& mesh,
                                           const Vocabulary& vocab = {}) {
  ValidationReport rep;
  bool has_stop = false;
  for (uint32_t t : seq.tokens) has_stop |= t == vocab.eos_stop();
  if (!has_stop) rep.reasons.push_back("NoStopToken");

  bool nan_face = false;
  for (const auto& f : mesh.faces)
    for (uint32_t idx : f)
      if (idx < mesh.vertices.size() && !finite(mesh.vertices[idx])) nan_face = true;
  if (nan_face) rep.reasons.push_back("NaNFace");

  rep.success = rep.reasons.empty();
  return rep;
}

// ---------------------------------------------------------------------------
// token files
// ---------------------------------------------------------------------------

inline void write_tokens(const std::string& path, const TokenSequence& seq) {
  auto out = detail::open_out(path, true);
  out.write("LCDT", 4);
  uint32_t count = uint32_t(seq.tokens.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(seq.tokens.data()),
            std::streamsize(seq.tokens.size() * 4));
  if (!out) fail(errc::io_error, "write failed: " + path);
}

inline TokenSequence read_tokens(const std::string& path) {
  auto in = detail::open_in(path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LCDT", 4) != 0) fail(errc::io_error, "not a LCDT file: " + path);
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  TokenSequence seq;
  seq.tokens.resize(count);
  in.read(reinterpret_cast<char*>(seq.tokens.data()), std::streamsize(count * 4));
  if (!in) fail(errc::io_error, "truncated LCDT file: " + path);
  return seq;
}

inline void write_tokens_text(const std::string& path, const TokenSequence& seq) {
  auto out = detail::open_out(path, false);
  for (uint32_t t : seq.tokens) out << t << '\n';
}

inline TokenSequence read_tokens_text(const std::string& path) {
  auto in = detail::open_in(path, false);
  TokenSequence seq;
  uint32_t t;
  while (in >> t) seq.tokens.push_back(t);
  return seq;
}

}  // namespace locadit
