#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attrib3d/mesh.hpp"

namespace attrib3d {

inline constexpr std::size_t kGeometryDims = 102;
inline constexpr std::size_t kHistogramBins = 16;

/// Offsets of each group inside the flat 102-vector:
/// counts, bbox, topo+shape, edge, face, curvature, spectrum, distance.
inline constexpr std::array<std::size_t, 8> kGeometryGroupOffsets = {0, 3, 10, 22, 38, 54, 70, 86};

using Histogram16 = std::array<double, kHistogramBins>;

struct ScalarStats {
  // counts
  double vtx = 0, face = 0, v_per_f = 0;
  // bbox
  double bx = 0, by = 0, bz = 0, bx_by = 0, by_bz = 0, bx_bz = 0, bmax_bmin = 0;
  // topology + shape
  double area = 0, vol = 0, ncons = 0, cc = 0, wt = 0, mani = 0, wind = 0, euler = 0;
  double nmf = 0, bef = 0, sip = 0, sdiam = 0;

  std::array<double, 22> flatten() const;
};

struct ShapeHistograms {
  Histogram16 edge{}, face{}, curvature{};
};

struct GeometricDescriptor {
  ScalarStats scalars;
  ShapeHistograms histograms;
  Histogram16 spectrum{};
  Histogram16 distance{};

  std::array<double, kGeometryDims> flatten() const;
  static GeometricDescriptor unflatten(const std::array<double, kGeometryDims>& v);
};

/// Names of the 102 flattened entries, e.g. "area", "curv_hist_3".
const std::array<std::string, kGeometryDims>& geometry_feature_names();

/// Undirected edge table shared by the statistics below.
struct EdgeInfo {
  std::uint32_t a = 0, b = 0;  // a < b
  std::uint32_t face_count = 0;
  std::uint32_t forward = 0;  // faces traversing a->b
};
std::vector<EdgeInfo> build_edges(const Mesh& mesh);

ScalarStats compute_scalar_stats(const Mesh& mesh, std::uint64_t seed);
ShapeHistograms compute_histograms(const Mesh& mesh);

/// Smallest 16 eigenvalues of the uniform graph Laplacian; meshes with more
/// than `max_nodes` vertices are first coarsened by seeded edge contraction.
Histogram16 compute_spectrum(const Mesh& mesh, std::uint64_t seed, std::size_t max_nodes = 512);

/// Ascending eigenvalues of L = D - A for a simple undirected graph.
std::vector<double> graph_laplacian_spectrum(std::size_t n,
                                             std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);

/// D2 shape distribution over `samples` area-uniform surface points.
Histogram16 compute_dist_hist(const Mesh& mesh, std::uint64_t seed, std::size_t samples = 1024);

GeometricDescriptor fingerprint(const Mesh& mesh, std::uint64_t seed);

/// Fraction of AABB-overlapping, vertex-disjoint triangle pairs that
/// intersect, over a seeded sample of at most `max_pairs` candidates.
double self_intersection_proxy(const Mesh& mesh, std::uint64_t seed, std::size_t max_pairs = 4096);

bool triangles_intersect(const std::array<Vec3, 3>& t1, const std::array<Vec3, 3>& t2);

}  // namespace attrib3d
