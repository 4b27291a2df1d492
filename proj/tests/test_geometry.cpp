#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "attrib3d/errors.hpp"
#include "attrib3d/geometry_fingerprint.hpp"
#include "attrib3d/primitives.hpp"
#include "attrib3d/rng.hpp"
#include "doctest.h"

using namespace attrib3d;

namespace {

constexpr double kPi = std::numbers::pi;

// Cyclic Jacobi eigenvalue iteration on a dense symmetric matrix.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

Mesh translated(const Mesh& m, Vec3 t) {
  return transform_vertices(m, [&](const Vec3& p) { return p + t; });
}

Vec3 rotate(const Vec3& p, double ax, double ay, double az) {
  Vec3 q = p;
  q = {q.x, std::cos(ax) * q.y - std::sin(ax) * q.z, std::sin(ax) * q.y + std::cos(ax) * q.z};
  q = {std::cos(ay) * q.x + std::sin(ay) * q.z, q.y, -std::sin(ay) * q.x + std::cos(ay) * q.z};
  q = {std::cos(az) * q.x - std::sin(az) * q.y, std::sin(az) * q.x + std::cos(az) * q.y, q.z};
  return q;
}

// Irregular closed mesh: icosphere with seeded radial bumps.
Mesh bumpy_sphere(std::uint64_t seed, int level = 2) {
  Rng rng(seed);
  const double a = rng.uniform(0.05, 0.3), fx = rng.uniform(1, 4), fy = rng.uniform(1, 4);
  return transform_vertices(make_icosphere(level), [&](const Vec3& p) {
    return p * (1.0 + a * std::sin(fx * p.x + 0.3) * std::cos(fy * p.y - 0.7));
  });
}

double sum(const Histogram16& h) { return std::accumulate(h.begin(), h.end(), 0.0); }

std::size_t oracle_bin(double t) { return std::min<std::size_t>(15, static_cast<std::size_t>(t * 16)); }

}  // namespace

TEST_CASE("unit cube closed forms") {
  const Mesh cube = make_cube();
  const ScalarStats s = compute_scalar_stats(cube, 1);
  CHECK(s.vtx == 8);
  CHECK(s.face == 12);
  CHECK(s.v_per_f == doctest::Approx(8.0 / 12.0));
  CHECK(std::abs(s.area - 6.0) <= 1e-9);
  CHECK(std::abs(s.vol - 1.0) <= 1e-9);
  CHECK(s.euler == 2);
  CHECK(s.wt == 1);
  CHECK(s.mani == 1);
  CHECK(s.wind == 1);
  CHECK(s.cc == 1);
  CHECK(s.bef == 0);
  CHECK(s.nmf == 0);
  CHECK(s.sip == 0);
  CHECK(s.sdiam == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s.bx == 1);
  CHECK(s.bmax_bmin == 1);
  CHECK(fingerprint(cube, 0).flatten().size() == kGeometryDims);
}

TEST_CASE("cube edge histogram matches hand enumeration") {
  const Mesh cube = make_cube();
  // Oracle: collect unique undirected edges directly from the face list.
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& f : cube.faces)
    for (int k = 0; k < 3; ++k) edges.insert(std::minmax(f[k], f[(k + 1) % 3]));
  CHECK(edges.size() == 18);
  Histogram16 expect{};
  for (auto [a, b] : edges) expect[oracle_bin(norm(cube.position(a) - cube.position(b)) / std::sqrt(3.0))] += 1.0 / 18;
  const auto h = compute_histograms(cube);
  for (int i = 0; i < 16; ++i) CHECK(h.edge[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK(h.edge[oracle_bin(1 / std::sqrt(3.0))] == doctest::Approx(12.0 / 18));
  CHECK(h.edge[oracle_bin(std::sqrt(2.0 / 3.0))] == doctest::Approx(6.0 / 18));
  CHECK(h.face[15] == doctest::Approx(1.0));
  // every cube corner has deficit 2pi - 3(pi/2) = pi/2
  CHECK(h.curvature[oracle_bin((kPi / 2 + kPi) / (2 * kPi))] == doctest::Approx(1.0));
}

TEST_CASE("two disjoint triangles") {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  const ScalarStats s = compute_scalar_stats(m, 3);
  CHECK(s.cc == 2);
  CHECK(s.bef == 1.0);
  CHECK(s.wt == 0);
  CHECK(s.euler == 2);
  CHECK(s.mani == 1);
}

TEST_CASE("single triangle") {
  Mesh m;
  m.vertices = {{0, 0, 0}, {3, 0, 0}, {0, 4, 0}};
  m.faces = {{0, 1, 2}};
  const ScalarStats s = compute_scalar_stats(m, 3);
  CHECK(s.vtx == 3);
  CHECK(s.face == 1);
  CHECK(s.v_per_f == 3);
  CHECK(s.area == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(s.sdiam == doctest::Approx(5.0));
}

TEST_CASE("equilateral-only mesh puts all face mass in the last bin") {
  const double h = std::sqrt(3.0) / 2;
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0.5f, static_cast<float>(h), 0}, {1.5f, static_cast<float>(h), 0}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  const auto hist = compute_histograms(m);
  CHECK(hist.face[15] == doctest::Approx(1.0));
}

TEST_CASE("flat grid concentrates curvature at zero") {
  const int nx = 9, ny = 7;
  const Mesh grid = make_grid(nx, ny);
  const auto h = compute_histograms(grid);
  const double interior = static_cast<double>((nx - 2) * (ny - 2)) / (nx * ny);
  // deficit 0 sits exactly on the boundary between bins 7 and 8
  CHECK(h.curvature[8] == doctest::Approx(interior));
  // boundary vertices have deficit >= pi and clip into the last bin
  CHECK(h.curvature[15] == doctest::Approx(1.0 - interior));
  CHECK(compute_scalar_stats(grid, 0).ncons == doctest::Approx(1.0));
}

TEST_CASE("6-cycle Laplacian spectrum") {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> cyc;
  for (std::uint32_t i = 0; i < 6; ++i) cyc.emplace_back(i, (i + 1) % 6);
  const auto ev = graph_laplacian_spectrum(6, cyc);
  const double expect[6] = {0, 1, 1, 3, 3, 4};
  REQUIRE(ev.size() == 6);
  for (int k = 0; k < 6; ++k) CHECK(std::abs(ev[k] - expect[k]) <= 1e-8);
}

TEST_CASE("Laplacian spectrum agrees with a Jacobi oracle on random graphs") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::vector<std::vector<double>> lap(n, std::vector<double>(n, 0.0));
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        if (!rng.bernoulli(0.2)) continue;
        edges.emplace_back(i, j);
        lap[i][j] = lap[j][i] = -1;
        lap[i][i] += 1;
        lap[j][j] += 1;
      }
    }
    const auto ev = graph_laplacian_spectrum(n, edges);
    const auto oracle = jacobi_eigenvalues(lap);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(ev[k] - oracle[k]) <= 1e-8);
  }
}

TEST_CASE("zero-eigenvalue multiplicity equals component count") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Mesh> parts;
    const std::size_t k = 1 + rng.index(5);
    for (std::size_t i = 0; i < k; ++i) {
      const Mesh base = rng.bernoulli(0.5) ? make_cube() : make_icosphere(static_cast<int>(rng.index(2)));
      parts.push_back(translated(base, {3.0 * static_cast<double>(i), rng.uniform(-1, 1), 0}));
    }
    const Mesh m = merge_meshes(parts);
    REQUIRE(m.vertices.size() <= 512);
    const auto spec = compute_spectrum(m, 0);
    const double cc = compute_scalar_stats(m, 0).cc;
    CHECK(cc == static_cast<double>(k));
    const auto zeros = std::count_if(spec.begin(), spec.end(), [](double v) { return std::abs(v) < 1e-8; });
    CHECK(static_cast<double>(zeros) == cc);
  }
}

TEST_CASE("coarsened spectrum keeps component count and ordering") {
  const Mesh big = merge_meshes({make_icosphere(3), translated(make_icosphere(3), {3, 0, 0}),
                                 translated(make_icosphere(3), {6, 0, 0})});
  REQUIRE(big.vertices.size() > 512);
  const auto spec = compute_spectrum(big, 9);
  CHECK(std::count_if(spec.begin(), spec.end(), [](double v) { return std::abs(v) < 1e-8; }) == 3);
  for (int i = 1; i < 16; ++i) CHECK(spec[i] >= spec[i - 1]);
  CHECK(spec == compute_spectrum(big, 9));
}

TEST_CASE("small graphs pad with the largest eigenvalue") {
  Mesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  tri.faces = {{0, 1, 2}};
  const auto spec = compute_spectrum(tri, 0);
  CHECK(std::abs(spec[0]) < 1e-12);
  for (int i = 1; i < 16; ++i) CHECK(spec[i] == doctest::Approx(3.0));
}

TEST_CASE("D2 histogram on a sphere matches the analytic density") {
  // For the unit sphere, pair distance d has density d/2 on [0,2], so
  // P(d/2 in [a,b]) = b^2 - a^2.
  const Mesh sphere = make_icosphere(4);
  const auto h = compute_dist_hist(sphere, 3);
  double l1 = 0;
  for (int i = 0; i < 16; ++i) {
    const double a = i / 16.0, b = (i + 1) / 16.0;
    l1 += std::abs(h[i] - (b * b - a * a));
  }
  CHECK(l1 < 0.05);

  // Independent Monte-Carlo sampler on the same mesh, 10^6 pairs.
  Rng rng(12345);
  std::vector<double> cdf;
  double total = 0;
  for (const auto& f : sphere.faces) {
    total += 0.5 * norm(cross(sphere.position(f[1]) - sphere.position(f[0]), sphere.position(f[2]) - sphere.position(f[0])));
    cdf.push_back(total);
  }
  auto sample = [&] {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), rng.uniform() * total);
    const auto& f = sphere.faces[std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    const Vec3 a = sphere.position(f[0]);
    return a + (sphere.position(f[1]) - a) * u + (sphere.position(f[2]) - a) * v;
  };
  std::vector<double> d(1000000);
  double dmax = 0;
  for (auto& x : d) {
    x = norm(sample() - sample());
    dmax = std::max(dmax, x);
  }
  Histogram16 mc{};
  for (double x : d) mc[oracle_bin(x / dmax)] += 1e-6;
  double chi2 = 0;
  for (int i = 0; i < 16; ++i) {
    if (mc[i] > 0) chi2 += (h[i] - mc[i]) * (h[i] - mc[i]) / mc[i];
  }
  CHECK(chi2 < 0.01);
}

TEST_CASE("D2 degenerate and determinism") {
  Mesh point;
  point.vertices = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  point.faces = {{0, 1, 2}};
  const auto h = compute_dist_hist(point, 0);
  CHECK(h[0] == 1.0);
  CHECK(sum(h) == 1.0);
  const Mesh s = bumpy_sphere(1);
  CHECK(compute_dist_hist(s, 77) == compute_dist_hist(s, 77));
  Mesh nofaces = make_cube();
  nofaces.faces.clear();
  CHECK(sum(compute_dist_hist(nofaces, 0)) == 0);
}

TEST_CASE("zero-face mesh is finite with zero flags and histograms") {
  Mesh m = make_cube();
  m.faces.clear();
  const auto d = fingerprint(m, 0);
  CHECK(d.scalars.wt == 0);
  CHECK(d.scalars.mani == 0);
  CHECK(d.scalars.wind == 0);
  CHECK(d.scalars.area == 0);
  CHECK(d.scalars.cc == 8);
  CHECK(sum(d.histograms.edge) == 0);
  for (double v : d.flatten()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(fingerprint(Mesh{}, 0), EmptyMeshError);
}

TEST_CASE("non-manifold and winding flags") {
  Mesh fin;
  fin.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}};
  fin.faces = {{0, 1, 2}, {1, 0, 3}, {0, 1, 4}};
  const auto s = compute_scalar_stats(fin, 0);
  CHECK(s.mani == 0);
  CHECK(s.wind == 0);
  CHECK(s.nmf == doctest::Approx(1.0 / 7));
  Mesh flipped = make_cube();
  std::swap(flipped.faces[0][1], flipped.faces[0][2]);
  const auto t = compute_scalar_stats(flipped, 0);
  CHECK(t.wt == 1);
  CHECK(t.wind == 0);
}

TEST_CASE("self-intersection proxy") {
  const std::array<Vec3, 3> a{Vec3{0, 0, 0}, Vec3{2, 0, 0}, Vec3{0, 2, 0}};
  const std::array<Vec3, 3> pierce{Vec3{0.5, 0.5, -1}, Vec3{0.5, 0.5, 1}, Vec3{0.6, 0.4, 1}};
  const std::array<Vec3, 3> above{Vec3{0, 0, 1}, Vec3{2, 0, 1}, Vec3{0, 2, 1}};
  CHECK(triangles_intersect(a, pierce));
  CHECK(!triangles_intersect(a, above));
  Mesh m;
  for (const auto& t : {a, pierce})
    for (const auto& p : t) m.vertices.push_back({float(p.x), float(p.y), float(p.z)});
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  CHECK(self_intersection_proxy(m, 0) == 1.0);
  CHECK(self_intersection_proxy(make_icosphere(3), 0) == 0.0);
}

TEST_CASE("vertex permutation leaves the descriptor unchanged") {
  Rng rng(3);
  for (const Mesh& base : {make_cube(), bumpy_sphere(4), make_grid(5, 6)}) {
    std::vector<std::uint32_t> perm(base.vertices.size());
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    const Mesh p = permute_vertices(base, perm);
    const auto a = fingerprint(base, 5), b = fingerprint(p, 5);
    CHECK(a.scalars.flatten() == b.scalars.flatten());
    CHECK(a.histograms.edge == b.histograms.edge);
    CHECK(a.histograms.face == b.histograms.face);
    CHECK(a.histograms.curvature == b.histograms.curvature);
    CHECK(a.distance == b.distance);
    for (int i = 0; i < 16; ++i) CHECK(std::abs(a.spectrum[i] - b.spectrum[i]) <= 1e-9);
  }
}

TEST_CASE("rigid-motion invariance") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Mesh base = bumpy_sphere(100 + trial);
    const double ax = rng.uniform(0, 2 * kPi), ay = rng.uniform(0, 2 * kPi), az = rng.uniform(0, 2 * kPi);
    const Vec3 t{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Mesh moved = transform_vertices(base, [&](const Vec3& p) { return rotate(p, ax, ay, az) + t; });
    const auto a = fingerprint(base, 1), b = fingerprint(moved, 1);
    auto rel = [](double x, double y) { return std::abs(x - y) <= 1e-6 * std::max(1.0, std::abs(x)); };
    CHECK(rel(a.scalars.area, b.scalars.area));
    CHECK(rel(a.scalars.vol, b.scalars.vol));
    CHECK(a.scalars.euler == b.scalars.euler);
    CHECK(a.scalars.cc == b.scalars.cc);
    CHECK(a.scalars.wt == b.scalars.wt);
    CHECK(a.scalars.mani == b.scalars.mani);
    CHECK(a.scalars.wind == b.scalars.wind);
    CHECK(a.scalars.nmf == b.scalars.nmf);
    CHECK(a.scalars.bef == b.scalars.bef);
    // edge lengths are normalised by the axis-aligned bbox diagonal, which
    // only survives rotations mapping the box onto itself (checked below)
    for (int i = 0; i < 16; ++i) {
      CHECK(rel(a.histograms.face[i], b.histograms.face[i]));
      CHECK(rel(a.histograms.curvature[i], b.histograms.curvature[i]));
      CHECK(rel(a.spectrum[i], b.spectrum[i]));
    }
    // D2 samples depend on float-rounded areas; compare in distribution
    double l1 = 0;
    for (int i = 0; i < 16; ++i) l1 += std::abs(a.distance[i] - b.distance[i]);
    CHECK(l1 < 1e-2);
  }
}

TEST_CASE("edge histogram is invariant under box-preserving motions") {
  Rng rng(81);
  for (int trial = 0; trial < 24; ++trial) {
    const Mesh base = bumpy_sphere(300 + trial);
    int axes[3] = {0, 1, 2};
    for (int k = 0; k < trial % 6; ++k) std::next_permutation(axes, axes + 3);
    const double sx = trial & 1 ? -1 : 1, sy = trial & 2 ? -1 : 1;
    const Vec3 t{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const Mesh moved = transform_vertices(base, [&](const Vec3& p) {
      return Vec3{sx * p[axes[0]], sy * p[axes[1]], p[axes[2]]} + t;
    });
    const auto a = compute_histograms(base), b = compute_histograms(moved);
    for (int i = 0; i < 16; ++i) CHECK(std::abs(a.edge[i] - b.edge[i]) <= 1e-6 * std::max(1.0, a.edge[i]));
  }
}

TEST_CASE("uniform scaling by powers of two") {
  for (double s : {0.25, 2.0, 8.0}) {
    const Mesh base = bumpy_sphere(21);
    const Mesh scaled = transform_vertices(base, [&](const Vec3& p) { return p * s; });
    const auto a = fingerprint(base, 2), b = fingerprint(scaled, 2);
    CHECK(b.scalars.area == doctest::Approx(a.scalars.area * s * s).epsilon(1e-9));
    CHECK(b.scalars.vol == doctest::Approx(a.scalars.vol * s * s * s).epsilon(1e-9));
    CHECK(a.histograms.edge == b.histograms.edge);
    CHECK(a.histograms.face == b.histograms.face);
    CHECK(a.histograms.curvature == b.histograms.curvature);
    CHECK(a.distance == b.distance);
    CHECK(a.scalars.wt == b.scalars.wt);
    CHECK(a.scalars.wind == b.scalars.wind);
  }
}

TEST_CASE("descriptor invariants hold on random meshes") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    Mesh m;
    const std::size_t nv = 3 + rng.index(80);
    for (std::size_t i = 0; i < nv; ++i)
      m.vertices.push_back({float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))});
    const std::size_t nf = rng.index(120);
    for (std::size_t i = 0; i < nf; ++i) {
      std::uint32_t a = static_cast<std::uint32_t>(rng.index(nv)), b, c;
      do b = static_cast<std::uint32_t>(rng.index(nv)); while (b == a);
      do c = static_cast<std::uint32_t>(rng.index(nv)); while (c == a || c == b);
      m.faces.push_back({a, b, c});
    }
    const auto d = fingerprint(m, trial);
    const auto v = d.flatten();
    CHECK(v.size() == 102);
    for (double x : v) CHECK(std::isfinite(x));
    for (const Histogram16* h : {&d.histograms.edge, &d.histograms.face, &d.histograms.curvature, &d.distance}) {
      const double s = sum(*h);
      CHECK((std::abs(s - 1) <= 1e-9 || (nf == 0 && s == 0)));
    }
    for (double f : {d.scalars.wt, d.scalars.mani, d.scalars.wind}) CHECK((f == 0 || f == 1));
    for (double f : {d.scalars.nmf, d.scalars.bef, d.scalars.sip}) CHECK((f >= 0 && f <= 1));
    CHECK(d.scalars.cc >= 1);
    for (int i = 0; i < 16; ++i) {
      CHECK(d.spectrum[i] >= -1e-9);
      if (i > 0) CHECK(d.spectrum[i] >= d.spectrum[i - 1]);
    }
    CHECK(fingerprint(m, trial).flatten() == v);
  }
}

TEST_CASE("group offsets") {
  const auto d = fingerprint(make_cube(), 0);
  const auto v = d.flatten();
  CHECK(v[kGeometryGroupOffsets[1]] == d.scalars.bx);
  CHECK(v[kGeometryGroupOffsets[2]] == d.scalars.area);
  CHECK(v[kGeometryGroupOffsets[3]] == d.histograms.edge[0]);
  CHECK(v[kGeometryGroupOffsets[6] + 1] == d.spectrum[1]);
  CHECK(v[kGeometryGroupOffsets[7] + 15] == d.distance[15]);
}
