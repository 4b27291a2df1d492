#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "attrib3d/image.hpp"
#include "attrib3d/mesh.hpp"

namespace attrib3d {

struct ViewConfig {
  int resolution = 64;
  std::vector<double> azimuths_deg = {0.0, 90.0, 180.0, 270.0};
  double elevation_deg = 20.0;
  std::array<float, 3> background = {1.0f, 1.0f, 1.0f};

  int views() const { return static_cast<int>(azimuths_deg.size()); }
  void check() const;
};

/// Orthographic camera on the unit view sphere looking at the origin, up = +z.
/// Screen coordinates: x to the right, y down, [-1,1]^2 world units map onto
/// the full image.
struct OrthoCamera {
  Vec3 right, up, toward;  // `toward` points from the origin to the camera

  static OrthoCamera from_angles(double azimuth_deg, double elevation_deg);
  /// Screen-space (pixel) position and depth (larger = farther).
  std::array<double, 3> project(const Vec3& p, int width, int height) const;
  Vec3 to_camera(const Vec3& n) const { return {dot(n, right), dot(n, up), dot(n, toward)}; }
};

inline constexpr std::uint32_t kNoFace = 0xffffffffu;

struct ViewRender {
  Image rgb;
  Image normal;
  std::vector<float> depth;           // +inf on background
  std::vector<std::uint32_t> face_id;  // kNoFace on background
};

struct RenderSet {
  std::vector<Image> rgb;
  std::vector<Image> normal;
  std::vector<std::vector<float>> depth;
};

/// Centroid to origin, max vertex norm to 1. Throws EmptyMeshError or
/// DegenerateError (all vertices coincide).
Mesh normalize_for_render(const Mesh& mesh);

ViewRender render_view(const Mesh& mesh, const OrthoCamera& camera, const ViewConfig& config);

/// One render per azimuth. Flat shading: headlight Lambert on 0.8 gray albedo;
/// normals are camera-space face normals encoded as (n+1)/2; background
/// normal pixels are (0.5, 0.5, 0.5).
RenderSet render_views(const Mesh& mesh, const ViewConfig& config, bool keep_depth = false);

/// Optional horizontal mirror, then per-channel multiplicative jitter drawn
/// uniformly from [1-jitter, 1+jitter], clamped to [0,1].
Image augment(const Image& image, bool flip, double jitter, std::uint64_t seed);

}  // namespace attrib3d
