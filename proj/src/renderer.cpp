#include "attrib3d/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "attrib3d/errors.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d {
namespace {

constexpr float kAlbedo = 0.8f;

double edge_fn(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Top-left rule for the positive orientation used below (y down).
bool is_top_left(double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  return dy < 0 || (dy == 0 && dx > 0);
}

}  // namespace

void ViewConfig::check() const {
  if (resolution < 8) throw InputError("view resolution must be >= 8");
  if (azimuths_deg.empty()) throw InputError("at least one view azimuth is required");
}

OrthoCamera OrthoCamera::from_angles(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  OrthoCamera c;
  c.toward = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  const Vec3 forward = c.toward * -1.0;
  c.right = normalized(cross(forward, Vec3{0, 0, 1}));
  c.up = cross(c.right, forward);
  return c;
}

std::array<double, 3> OrthoCamera::project(const Vec3& p, int width, int height) const {
  const double x = dot(p, right), y = dot(p, up);
  return {(x + 1.0) * 0.5 * width, (1.0 - y) * 0.5 * height, -dot(p, toward)};
}

Mesh normalize_for_render(const Mesh& mesh) {
  if (mesh.empty()) throw EmptyMeshError();
  Vec3 c{};
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) c += mesh.position(i);
  c = c / static_cast<double>(mesh.vertices.size());
  double max_norm = 0;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) max_norm = std::max(max_norm, norm(mesh.position(i) - c));
  if (!(max_norm > 0)) throw DegenerateError("mesh has zero extent");
  Mesh out = mesh;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 p = (mesh.position(i) - c) / max_norm;
    out.vertices[i] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
  }
  return out;
}

ViewRender render_view(const Mesh& mesh, const OrthoCamera& camera, const ViewConfig& config) {
  const int w = config.resolution, h = config.resolution;
  const std::size_t npix = static_cast<std::size_t>(w) * h;
  ViewRender out;
  out.depth.assign(npix, std::numeric_limits<float>::infinity());
  out.face_id.assign(npix, kNoFace);
  std::vector<double> zbuf(npix, std::numeric_limits<double>::infinity());

  std::vector<std::array<double, 3>> screen(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) screen[i] = camera.project(mesh.position(i), w, h);

  for (std::uint32_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const Face& f = mesh.faces[fi];
    std::array<double, 3> v0 = screen[f[0]], v1 = screen[f[1]], v2 = screen[f[2]];
    double area = edge_fn(v0[0], v0[1], v1[0], v1[1], v2[0], v2[1]);
    if (area == 0 || !std::isfinite(area)) continue;
    if (area < 0) {
      std::swap(v1, v2);
      area = -area;
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({v0[0], v1[0], v2[0]}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({v0[0], v1[0], v2[0]}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({v0[1], v1[1], v2[1]}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({v0[1], v1[1], v2[1]}))));
    const bool tl0 = is_top_left(v1[0], v1[1], v2[0], v2[1]);
    const bool tl1 = is_top_left(v2[0], v2[1], v0[0], v0[1]);
    const bool tl2 = is_top_left(v0[0], v0[1], v1[0], v1[1]);
    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double w0 = edge_fn(v1[0], v1[1], v2[0], v2[1], px, py);
        const double w1 = edge_fn(v2[0], v2[1], v0[0], v0[1], px, py);
        const double w2 = edge_fn(v0[0], v0[1], v1[0], v1[1], px, py);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        if ((w0 == 0 && !tl0) || (w1 == 0 && !tl1) || (w2 == 0 && !tl2)) continue;
        const double z = (w0 * v0[2] + w1 * v1[2] + w2 * v2[2]) / area;
        const std::size_t idx = static_cast<std::size_t>(y) * w + x;
        if (z < zbuf[idx]) {
          zbuf[idx] = z;
          out.face_id[idx] = fi;
        }
      }
    }
  }

  out.rgb = Image(w, h, 3);
  out.normal = Image(w, h, 3);
  std::vector<Vec3> cam_normals(mesh.faces.size());
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const Face& f = mesh.faces[fi];
    const Vec3 a = mesh.position(f[0]), b = mesh.position(f[1]), c = mesh.position(f[2]);
    cam_normals[fi] = camera.to_camera(normalized(cross(b - a, c - a)));
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      const std::uint32_t fi = out.face_id[idx];
      if (fi == kNoFace) {
        for (int ch = 0; ch < 3; ++ch) {
          out.rgb.at(y, x, ch) = config.background[ch];
          out.normal.at(y, x, ch) = 0.5f;
        }
        continue;
      }
      const Vec3& n = cam_normals[fi];
      const float shade = kAlbedo * static_cast<float>(std::max(0.0, n.z));
      const double enc[3] = {(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5};
      for (int ch = 0; ch < 3; ++ch) {
        out.rgb.at(y, x, ch) = shade;
        out.normal.at(y, x, ch) = std::clamp(static_cast<float>(enc[ch]), 0.0f, 1.0f);
      }
      out.depth[idx] = static_cast<float>(zbuf[idx]);
    }
  }
  return out;
}

RenderSet render_views(const Mesh& mesh, const ViewConfig& config, bool keep_depth) {
  if (mesh.empty()) throw EmptyMeshError();
  config.check();
  RenderSet set;
  for (double az : config.azimuths_deg) {
    ViewRender v = render_view(mesh, OrthoCamera::from_angles(az, config.elevation_deg), config);
    set.rgb.push_back(std::move(v.rgb));
    set.normal.push_back(std::move(v.normal));
    if (keep_depth) set.depth.push_back(std::move(v.depth));
  }
  return set;
}

Image augment(const Image& image, bool flip, double jitter, std::uint64_t seed) {
  Image out = image;
  if (flip) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
      }
    }
  }
  if (jitter != 0.0) {
    Rng rng(seed);
    std::vector<float> gain(static_cast<std::size_t>(image.channels));
    for (auto& g : gain) g = static_cast<float>(rng.uniform(1.0 - jitter, 1.0 + jitter));
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] = std::clamp(out.data[i] * gain[i % gain.size()], 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace attrib3d
