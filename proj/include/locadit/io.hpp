//
// File formats: PLY point clouds (binary little-endian and ASCII) with
// x,y,z[,nx,ny,nz], whitespace-separated XYZ text, and Wavefront OBJ meshes
// with polygonal faces and 1-based indices.
//

#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "locadit/core.hpp"
#include "locadit/mesh.hpp"
#include "locadit/pointcloud.hpp"

namespace locadit {

namespace detail {

inline std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(errc::io_error, "cannot open for reading: " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(errc::io_error, "cannot open for writing: " + path);
  return out;
}

inline size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  fail(errc::io_error, "unsupported ply property type: " + t);
}

inline double read_scalar_le(std::istream& in, const std::string& type) {
  unsigned char buf[8];
  size_t n = ply_type_size(type);
  in.read(reinterpret_cast<char*>(buf), std::streamsize(n));
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return double(f);
  }
  if (type == "double" || type == "float64") {
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  // integer property used as a coordinate is unusual but tolerated
  int64_t v = 0;
  for (size_t i = 0; i < n; ++i) v |= int64_t(buf[i]) << (8 * i);
  return double(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

inline void write_ply(const std::string& path, const PointCloud& cloud, bool binary = true) {
  auto out = detail::open_out(path, true);
  bool with_normals = cloud.has_normals();
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (with_normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";

  for (size_t i = 0; i < cloud.size(); ++i) {
    float row[6] = {float(cloud.positions[i].x), float(cloud.positions[i].y),
                    float(cloud.positions[i].z), 0.f, 0.f, 0.f};
    if (with_normals) {
      row[3] = float(cloud.normals[i].x);
      row[4] = float(cloud.normals[i].y);
      row[5] = float(cloud.normals[i].z);
    }
    int cols = with_normals ? 6 : 3;
    if (binary) {
      out.write(reinterpret_cast<const char*>(row), cols * 4);
    } else {
      for (int c = 0; c < cols; ++c) out << row[c] << (c + 1 < cols ? ' ' : '\n');
    }
  }
  if (!out) fail(errc::io_error, "write failed: " + path);
}

inline PointCloud read_ply(const std::string& path) {
  auto in = detail::open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    fail(errc::io_error, "not a ply file: " + path);

  bool binary = false;
  size_t vertex_count = 0;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  bool in_vertex_element = false;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt == "ascii") binary = false;
      else fail(errc::io_error, "unsupported ply format: " + fmt);
    } else if (tok == "element") {
      std::string name;
      size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
    } else if (tok == "property" && in_vertex_element) {
      Prop p;
      ls >> p.type;
      if (p.type == "list") fail(errc::io_error, "list property on vertex element");
      ls >> p.name;
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
  for (int i = 0; i < int(props.size()); ++i) {
    const std::string& n = props[i].name;
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "nx") inx = i;
    else if (n == "ny") iny = i;
    else if (n == "nz") inz = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) fail(errc::io_error, "ply missing x/y/z properties");
  bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.positions.resize(vertex_count);
  if (with_normals) cloud.normals.resize(vertex_count);

  std::vector<double> row(props.size());
  for (size_t v = 0; v < vertex_count; ++v) {
    if (binary) {
      for (size_t c = 0; c < props.size(); ++c) row[c] = detail::read_scalar_le(in, props[c].type);
    } else {
      for (size_t c = 0; c < props.size(); ++c)
        if (!(in >> row[c])) fail(errc::io_error, "truncated ascii ply: " + path);
    }
    if (!in) fail(errc::io_error, "truncated ply: " + path);
    cloud.positions[v] = {row[ix], row[iy], row[iz]};
    if (with_normals) cloud.normals[v] = {row[inx], row[iny], row[inz]};
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// XYZ text
// ---------------------------------------------------------------------------

inline void write_xyz(const std::string& path, const PointCloud& cloud) {
  auto out = detail::open_out(path, false);
  for (size_t i = 0; i < cloud.size(); ++i) {
    out << cloud.positions[i].x << ' ' << cloud.positions[i].y << ' ' << cloud.positions[i].z;
    if (cloud.has_normals())
      out << ' ' << cloud.normals[i].x << ' ' << cloud.normals[i].y << ' ' << cloud.normals[i].z;
    out << '\n';
  }
}

inline PointCloud read_xyz(const std::string& path) {
  auto in = detail::open_in(path, false);
  PointCloud cloud;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) continue;  // blank or malformed line
    cloud.positions.push_back({x, y, z});
    double nx, ny, nz;
    if (ls >> nx >> ny >> nz) cloud.normals.push_back({nx, ny, nz});
  }
  if (!cloud.normals.empty() && cloud.normals.size() != cloud.positions.size())
    cloud.normals.clear();
  return cloud;
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

inline void write_obj(const std::string& path, const PolyMesh& mesh) {
  auto out = detail::open_out(path, false);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces) {
    out << 'f';
    for (uint32_t idx : f) out << ' ' << (idx + 1);
    out << '\n';
  }
  if (!out) fail(errc::io_error, "write failed: " + path);
}

inline PolyMesh read_obj(const std::string& path) {
  auto in = detail::open_in(path, false);
  PolyMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() < 2) continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "v") {
      double x, y, z;
      if (ls >> x >> y >> z) mesh.vertices.push_back({x, y, z});
    } else if (tok == "f") {
      std::vector<uint32_t> face;
      std::string field;
      while (ls >> field) {
        // "i", "i/j", "i//k", "i/j/k"; negative means relative to current count
        long idx = std::strtol(field.c_str(), nullptr, 10);
        if (idx < 0) idx = long(mesh.vertices.size()) + idx + 1;
        if (idx <= 0) fail(errc::io_error, "bad face index in " + path);
        face.push_back(uint32_t(idx - 1));
      }
      if (face.size() >= 3) mesh.faces.push_back(std::move(face));
    }
  }
  return mesh;
}

}  // namespace locadit
