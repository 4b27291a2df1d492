#pragma once

#include <cstdint>
#include <functional>

#include "attrib3d/mesh.hpp"

namespace attrib3d {

/// Axis-aligned unit cube [0,1]^3, 8 vertices, 12 outward-wound triangles.
Mesh make_cube();

/// Icosahedron subdivided `level` times and projected to the unit sphere.
/// level 3 gives 642 vertices / 1280 faces.
Mesh make_icosphere(int level);

/// Flat open grid in the z=0 plane with nx*ny vertices spanning [0,1]^2.
Mesh make_grid(int nx, int ny);

/// Applies `fn` to every vertex position (double precision, stored back as float).
Mesh transform_vertices(const Mesh& mesh, const std::function<Vec3(const Vec3&)>& fn);

/// Relabels vertex i as perm[i]; faces are remapped, face order kept.
Mesh permute_vertices(const Mesh& mesh, const std::vector<std::uint32_t>& perm);

/// Concatenates meshes into one (indices offset).
Mesh merge_meshes(const std::vector<Mesh>& parts);

}  // namespace attrib3d
