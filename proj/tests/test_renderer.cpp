#include <algorithm>
#include <cmath>

#include "attrib3d/errors.hpp"
#include "attrib3d/primitives.hpp"
#include "attrib3d/renderer.hpp"
#include "attrib3d/rng.hpp"
#include "doctest.h"

using namespace attrib3d;

namespace {

ViewConfig side_view(int res) {
  ViewConfig cfg;
  cfg.resolution = res;
  cfg.azimuths_deg = {0.0};
  cfg.elevation_deg = 0.0;
  return cfg;
}

Mesh quad_facing_x(float half) {
  Mesh m;
  m.vertices = {{0.2f, -half, -half}, {0.2f, half, -half}, {0.2f, half, half}, {0.2f, -half, half}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

double dist_point_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double t = std::clamp(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(px - ax - t * dx, py - ay - t * dy);
}

}  // namespace

TEST_CASE("camera basis at elevation 0, azimuth 0") {
  const auto cam = OrthoCamera::from_angles(0, 0);
  CHECK(cam.toward.x == doctest::Approx(1));
  CHECK(cam.right.y == doctest::Approx(1));
  CHECK(cam.up.z == doctest::Approx(1));
  CHECK(std::abs(dot(cam.right, cam.up)) < 1e-15);
  CHECK(std::abs(dot(cam.right, cam.toward)) < 1e-15);
}

TEST_CASE("single triangle covers its analytic projection") {
  // At azimuth 0 / elevation 0 world (y, z) maps to screen x = (y+1)/2 W,
  // y = (1-z)/2 H.
  const int res = 48;
  Mesh tri;
  tri.vertices = {{0, -0.7f, -0.6f}, {0, 0.8f, -0.3f}, {0, -0.1f, 0.75f}};
  tri.faces = {{0, 1, 2}};
  const auto v = render_view(tri, OrthoCamera::from_angles(0, 0), side_view(res));
  double sx[3], sy[3];
  for (int k = 0; k < 3; ++k) {
    sx[k] = (tri.vertices[k][1] + 1.0) / 2 * res;
    sy[k] = (1.0 - tri.vertices[k][2]) / 2 * res;
  }
  auto signed_area = [&](double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  const double total = signed_area(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
  int mismatches = 0, covered = 0;
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool inside = true;
      double edge_dist = 1e9;
      for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        inside &= signed_area(sx[k], sy[k], sx[j], sy[j], px, py) * total > 0;
        edge_dist = std::min(edge_dist, dist_point_segment(px, py, sx[k], sy[k], sx[j], sy[j]));
      }
      const bool drawn = v.face_id[y * res + x] == 0;
      covered += drawn;
      if (drawn != inside) {
        ++mismatches;
        CHECK(edge_dist <= 1.0);
      }
    }
  }
  CHECK(covered > 0);
  CHECK(mismatches < res);
}

TEST_CASE("background and facing-square pixels") {
  const auto set = render_views(quad_facing_x(0.5f), side_view(32));
  const Image& rgb = set.rgb[0];
  const Image& nrm = set.normal[0];
  for (int c = 0; c < 3; ++c) {
    CHECK(rgb.at(0, 0, c) == 1.0f);
    CHECK(nrm.at(0, 0, c) == 0.5f);
  }
  CHECK(nrm.at(16, 16, 0) == doctest::Approx(0.5));
  CHECK(nrm.at(16, 16, 1) == doctest::Approx(0.5));
  CHECK(nrm.at(16, 16, 2) == doctest::Approx(1.0));
  CHECK(rgb.at(16, 16, 0) == doctest::Approx(0.8));
}

TEST_CASE("top-left rule: two triangles sharing an edge never double-cover or leave gaps") {
  const auto v = render_view(quad_facing_x(0.5f), OrthoCamera::from_angles(0, 0), side_view(32));
  // the square spans pixels [8, 24) exactly in both axes
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool in = x >= 8 && x < 24 && y >= 8 && y < 24;
      CHECK((v.face_id[y * 32 + x] != kNoFace) == in);
    }
  }
}

TEST_CASE("z-buffer keeps the nearer surface") {
  Mesh m = quad_facing_x(0.5f);
  Mesh back = quad_facing_x(0.9f);
  for (auto& p : back.vertices) p[0] = -0.5f;
  m = merge_meshes({back, m});
  const auto v = render_view(m, OrthoCamera::from_angles(0, 0), side_view(32));
  CHECK(v.face_id[16 * 32 + 16] >= 2);
  CHECK(v.face_id[2 * 32 + 16] < 2);
  CHECK(v.depth[16 * 32 + 16] == doctest::Approx(-0.2));
}

TEST_CASE("normalize_for_render") {
  const Mesh shifted = transform_vertices(make_cube(), [](const Vec3& p) { return p + Vec3{5, 5, 5}; });
  const Mesh n = normalize_for_render(shifted);
  Vec3 c{};
  double mx = 0;
  for (std::size_t i = 0; i < n.vertices.size(); ++i) {
    c += n.position(i);
    mx = std::max(mx, norm(n.position(i)));
  }
  CHECK(norm(c) < 1e-6);
  CHECK(mx == doctest::Approx(1.0).epsilon(1e-7));
  const Mesh sphere = make_icosphere(3);
  const Mesh ns = normalize_for_render(sphere);
  for (std::size_t i = 0; i < sphere.vertices.size(); ++i) CHECK(norm(ns.position(i) - sphere.position(i)) < 1e-6);
  Mesh point;
  point.vertices = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  point.faces = {{0, 1, 2}};
  CHECK_THROWS_AS(normalize_for_render(point), DegenerateError);
  CHECK_THROWS_AS(normalize_for_render(Mesh{}), EmptyMeshError);
  CHECK_THROWS_AS(render_views(Mesh{}, ViewConfig{}), EmptyMeshError);
}

TEST_CASE("scale invariance after normalisation is bitwise") {
  const Mesh m = transform_vertices(make_icosphere(2), [](const Vec3& p) { return Vec3{p.x * 1.3, p.y, p.z * 0.7}; });
  const Mesh m2 = transform_vertices(m, [](const Vec3& p) { return p * 2.0; });
  const auto a = render_views(normalize_for_render(m), ViewConfig{});
  const auto b = render_views(normalize_for_render(m2), ViewConfig{});
  CHECK(a.rgb == b.rgb);
  CHECK(a.normal == b.normal);
}

TEST_CASE("render invariants: value range, shared coverage, determinism") {
  const Mesh m = normalize_for_render(transform_vertices(make_icosphere(3), [](const Vec3& p) {
    return p * (1 + 0.2 * std::sin(5 * p.x) * std::cos(3 * p.z));
  }));
  const auto a = render_views(m, ViewConfig{}, true);
  REQUIRE(a.rgb.size() == 4);
  REQUIRE(a.depth.size() == 4);
  for (int v = 0; v < 4; ++v) {
    for (float x : a.rgb[v].data) CHECK((x >= 0 && x <= 1));
    for (float x : a.normal[v].data) CHECK((x >= 0 && x <= 1));
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const bool bg_rgb = a.rgb[v].at(y, x, 0) == 1.0f && a.rgb[v].at(y, x, 1) == 1.0f;
        const bool bg_depth = std::isinf(a.depth[v][y * 64 + x]);
        CHECK(bg_rgb == bg_depth);  // shaded pixels never reach 1.0 with albedo 0.8
        if (bg_depth) CHECK(a.normal[v].at(y, x, 2) == 0.5f);
      }
    }
  }
  const auto b = render_views(m, ViewConfig{});
  CHECK(a.rgb == b.rgb);
  CHECK(a.normal == b.normal);
}

TEST_CASE("rotating by one azimuth step permutes the views") {
  const Mesh m = normalize_for_render(transform_vertices(make_icosphere(3), [](const Vec3& p) {
    return Vec3{p.x * 0.9, p.y * 0.6, p.z * 0.8};
  }));
  const Mesh rot = transform_vertices(m, [](const Vec3& p) { return Vec3{-p.y, p.x, p.z}; });
  const auto a = render_views(m, ViewConfig{});
  const auto b = render_views(rot, ViewConfig{});
  for (int v = 0; v < 4; ++v) {
    const Image& x = b.rgb[(v + 1) % 4];
    const Image& y = a.rgb[v];
    int differ = 0;
    for (int i = 0; i < 64 * 64; ++i) {
      const bool cx = x.data[i * 3] != 1.0f, cy = y.data[i * 3] != 1.0f;
      differ += cx != cy;
    }
    CHECK(differ <= 64 * 64 / 100);
  }
}

TEST_CASE("augment") {
  Rng rng(1);
  Image img(16, 12, 3);
  for (auto& x : img.data) x = static_cast<float>(rng.uniform());
  CHECK(augment(augment(img, true, 0, 0), true, 0, 0) == img);
  CHECK(augment(img, false, 0.0, 5) == img);
  CHECK(augment(img, false, 0.2, 5) == augment(img, false, 0.2, 5));
  CHECK(augment(img, false, 0.2, 5) != augment(img, false, 0.2, 6));
  const Image f = augment(img, true, 0, 0);
  CHECK(f.at(3, 0, 1) == img.at(3, 15, 1));
  for (float x : augment(img, true, 0.5, 9).data) CHECK((x >= 0 && x <= 1));
}

TEST_CASE("view config validation") {
  ViewConfig cfg;
  cfg.resolution = 4;
  CHECK_THROWS_AS(cfg.check(), InputError);
  cfg.resolution = 64;
  cfg.azimuths_deg.clear();
  CHECK_THROWS_AS(cfg.check(), InputError);
}
