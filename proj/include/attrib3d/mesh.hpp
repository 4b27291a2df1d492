#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace attrib3d {

/// Small double-precision vector used by all geometry code. Mesh storage is
/// float32 (the PLY interchange precision); arithmetic happens in double.
struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0 ? a / n : Vec3{};
}

using Point3f = std::array<float, 3>;
using Face = std::array<std::uint32_t, 3>;
using Color = std::array<std::uint8_t, 3>;

/// Indexed triangle mesh. Invariants (established by parse_ply and by every
/// generator in this library): face indices < vertex count, coordinates
/// finite, each face has three distinct indices.
struct Mesh {
  std::vector<Point3f> vertices;
  std::vector<Face> faces;
  std::vector<Color> colors;  // empty, or one per vertex
  std::size_t removed_degenerate = 0;

  Vec3 position(std::size_t i) const {
    const auto& p = vertices[i];
    return {p[0], p[1], p[2]};
  }
  bool empty() const { return vertices.empty(); }

  friend bool operator==(const Mesh&, const Mesh&) = default;
};

struct ValidationReport {
  std::size_t vertex_count = 0;
  std::size_t face_count = 0;
  std::size_t removed_degenerate = 0;
  std::vector<std::string> warnings;
};

enum class PlyFormat { ascii, binary_le };

/// Parses ASCII or binary-little-endian PLY 1.0. Polygons are fan-triangulated
/// around their first vertex; faces with repeated indices are dropped and
/// counted in Mesh::removed_degenerate.
///
/// Throws ParseError, IndexError, UnsupportedError or EmptyMeshError.
Mesh parse_ply(std::span<const std::uint8_t> bytes);
Mesh parse_ply(std::string_view bytes);
Mesh read_ply(const std::string& path);

std::vector<std::uint8_t> write_ply(const Mesh& mesh, PlyFormat format);
void write_ply_file(const Mesh& mesh, const std::string& path, PlyFormat format);

ValidationReport validate(const Mesh& mesh);

}  // namespace attrib3d
