#include "attrib3d/primitives.hpp"

#include <cmath>
#include <map>
#include <utility>

namespace attrib3d {
namespace {

Point3f to_point(const Vec3& v) {
  return {static_cast<float>(v.x), static_cast<float>(v.y), static_cast<float>(v.z)};
}

}  // namespace

Mesh make_cube() {
  Mesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.push_back({static_cast<float>(i & 1), static_cast<float>((i >> 1) & 1), static_cast<float>((i >> 2) & 1)});
  }
  // Quads listed counter-clockwise seen from outside, split along one diagonal.
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({static_cast<std::uint32_t>(q[0]), static_cast<std::uint32_t>(q[1]), static_cast<std::uint32_t>(q[2])});
    m.faces.push_back({static_cast<std::uint32_t>(q[0]), static_cast<std::uint32_t>(q[2]), static_cast<std::uint32_t>(q[3])});
  }
  return m;
}

Mesh make_icosphere(int level) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                             {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v = normalized(v);
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},   {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back(normalized((verts[a] + verts[b]) * 0.5));
      const auto idx = static_cast<std::uint32_t>(verts.size() - 1);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const std::uint32_t a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  Mesh m;
  m.vertices.reserve(verts.size());
  for (const auto& v : verts) m.vertices.push_back(to_point(v));
  m.faces = std::move(faces);
  return m;
}

Mesh make_grid(int nx, int ny) {
  Mesh m;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      m.vertices.push_back({static_cast<float>(i) / static_cast<float>(nx - 1),
                            static_cast<float>(j) / static_cast<float>(ny - 1), 0.0f});
    }
  }
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const auto v = static_cast<std::uint32_t>(j * nx + i);
      const auto w = static_cast<std::uint32_t>(nx);
      m.faces.push_back({v, v + 1, v + w + 1});
      m.faces.push_back({v, v + w + 1, v + w});
    }
  }
  return m;
}

Mesh transform_vertices(const Mesh& mesh, const std::function<Vec3(const Vec3&)>& fn) {
  Mesh out = mesh;
  for (std::size_t i = 0; i < out.vertices.size(); ++i) out.vertices[i] = to_point(fn(mesh.position(i)));
  return out;
}

Mesh permute_vertices(const Mesh& mesh, const std::vector<std::uint32_t>& perm) {
  Mesh out = mesh;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) out.vertices[perm[i]] = mesh.vertices[i];
  if (!mesh.colors.empty()) {
    for (std::size_t i = 0; i < mesh.colors.size(); ++i) out.colors[perm[i]] = mesh.colors[i];
  }
  for (auto& f : out.faces) {
    for (auto& idx : f) idx = perm[idx];
  }
  return out;
}

Mesh merge_meshes(const std::vector<Mesh>& parts) {
  Mesh out;
  for (const Mesh& p : parts) {
    const auto offset = static_cast<std::uint32_t>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), p.vertices.begin(), p.vertices.end());
    for (Face f : p.faces) out.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  }
  return out;
}

}  // namespace attrib3d
