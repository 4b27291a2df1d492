#include "attrib3d/geometry_fingerprint.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "attrib3d/errors.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d {
namespace {

constexpr double kRatioFloor = 1e-12;

// Fixed-shape pairwise reduction: bit-stable regardless of how callers
// parallelise the terms.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// Histogram bin with values snapped to a 1e-9 grid first, so that values
// sitting on a bin edge (flat-region curvature, cube-corner deficits) land in
// the same bin under rigid motions that perturb them by a few ulps.
std::size_t bin_of(double value, double lo, double hi) {
  const double snapped = std::nearbyint(value * 1e9) * 1e-9;
  double t = (snapped - lo) / (hi - lo);
  t = std::clamp(t, 0.0, 1.0);
  auto b = static_cast<std::size_t>(std::floor(t * kHistogramBins));
  return std::min(b, kHistogramBins - 1);
}

void l1_normalize(Histogram16& h) {
  const double s = std::accumulate(h.begin(), h.end(), 0.0);
  if (s > 0) {
    for (double& x : h) x /= s;
  }
}

struct HalfEdge {
  std::uint64_t key;
  std::uint32_t face;
  bool forward;
};

struct EdgeGroup {
  EdgeInfo info;
  std::uint32_t first = 0, count = 0;  // range into the sorted half-edge array
};

struct Topology {
  std::vector<HalfEdge> half_edges;
  std::vector<EdgeGroup> edges;
};

Topology build_topology(const Mesh& mesh) {
  Topology t;
  t.half_edges.reserve(mesh.faces.size() * 3);
  for (std::uint32_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const Face& f = mesh.faces[fi];
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = f[k], b = f[(k + 1) % 3];
      const std::uint32_t lo = std::min(a, b), hi = std::max(a, b);
      t.half_edges.push_back({(static_cast<std::uint64_t>(lo) << 32) | hi, fi, a < b});
    }
  }
  std::sort(t.half_edges.begin(), t.half_edges.end(), [](const HalfEdge& x, const HalfEdge& y) {
    return x.key != y.key ? x.key < y.key : x.face < y.face;
  });
  for (std::uint32_t i = 0; i < t.half_edges.size();) {
    std::uint32_t j = i;
    EdgeGroup g;
    g.info.a = static_cast<std::uint32_t>(t.half_edges[i].key >> 32);
    g.info.b = static_cast<std::uint32_t>(t.half_edges[i].key & 0xffffffffu);
    while (j < t.half_edges.size() && t.half_edges[j].key == t.half_edges[i].key) {
      ++g.info.face_count;
      if (t.half_edges[j].forward) ++g.info.forward;
      ++j;
    }
    g.first = i;
    g.count = j - i;
    t.edges.push_back(g);
    i = j;
  }
  return t;
}

Vec3 face_normal_raw(const Mesh& m, const Face& f) {
  const Vec3 a = m.position(f[0]), b = m.position(f[1]), c = m.position(f[2]);
  return cross(b - a, c - a);
}

double triangle_area(const Mesh& m, const Face& f) { return 0.5 * norm(face_normal_raw(m, f)); }

struct UnionFind {
  std::vector<std::uint32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (a < b) std::swap(a, b);
    parent[a] = b;
    return true;
  }
};

double shape_diameter(const Mesh& mesh, std::uint64_t seed) {
  const std::size_t n = mesh.vertices.size();
  const std::size_t s = std::min<std::size_t>(n, 512);
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i < s && s < n; ++i) {
    std::swap(idx[i], idx[i + rng.index(n - i)]);
  }
  double best = 0;
  std::uint32_t ea = idx[0], eb = idx[0];
  for (std::size_t i = 0; i < s; ++i) {
    const Vec3 p = mesh.position(idx[i]);
    for (std::size_t j = i + 1; j < s; ++j) {
      const double d = norm(p - mesh.position(idx[j]));
      if (d > best) {
        best = d;
        ea = idx[i];
        eb = idx[j];
      }
    }
  }
  // One furthest-point sweep from each endpoint over all vertices.
  for (std::uint32_t start : {ea, eb}) {
    const Vec3 p = mesh.position(start);
    for (std::size_t v = 0; v < n; ++v) best = std::max(best, norm(p - mesh.position(v)));
  }
  return best;
}

std::array<Vec3, 3> triangle_points(const Mesh& m, const Face& f) {
  return {m.position(f[0]), m.position(f[1]), m.position(f[2])};
}

bool segment_hits_triangle(const Vec3& p, const Vec3& q, const std::array<Vec3, 3>& t) {
  const Vec3 dir = q - p;
  const Vec3 e1 = t[1] - t[0], e2 = t[2] - t[0];
  const Vec3 h = cross(dir, e2);
  const double det = dot(e1, h);
  const double scale = norm(dir) * norm(e1) * norm(e2);
  if (scale == 0 || std::abs(det) <= 1e-12 * scale) return false;  // parallel or degenerate
  const double inv = 1.0 / det;
  const Vec3 s = p - t[0];
  const double u = dot(s, h) * inv;
  if (u < 0 || u > 1) return false;
  const Vec3 qv = cross(s, e1);
  const double v = dot(dir, qv) * inv;
  if (v < 0 || u + v > 1) return false;
  const double tt = dot(e2, qv) * inv;
  return tt >= 0 && tt <= 1;
}

}  // namespace

std::array<double, 22> ScalarStats::flatten() const {
  return {vtx, face, v_per_f, bx,   by,    bz,  bx_by, by_bz, bx_bz, bmax_bmin, area,
          vol, ncons, cc,     wt,   mani,  wind, euler, nmf,  bef,   sip,  sdiam};
}

std::array<double, kGeometryDims> GeometricDescriptor::flatten() const {
  std::array<double, kGeometryDims> out{};
  const auto s = scalars.flatten();
  std::copy(s.begin(), s.end(), out.begin());
  std::size_t o = kGeometryGroupOffsets[3];
  for (const Histogram16* h : {&histograms.edge, &histograms.face, &histograms.curvature, &spectrum, &distance}) {
    std::copy(h->begin(), h->end(), out.begin() + static_cast<std::ptrdiff_t>(o));
    o += kHistogramBins;
  }
  return out;
}

GeometricDescriptor GeometricDescriptor::unflatten(const std::array<double, kGeometryDims>& v) {
  GeometricDescriptor d;
  ScalarStats& s = d.scalars;
  double* fields[] = {&s.vtx,  &s.face, &s.v_per_f, &s.bx,    &s.by,   &s.bz,    &s.bx_by, &s.by_bz,
                      &s.bx_bz, &s.bmax_bmin, &s.area, &s.vol, &s.ncons, &s.cc, &s.wt,  &s.mani,
                      &s.wind, &s.euler, &s.nmf, &s.bef,  &s.sip,  &s.sdiam};
  for (std::size_t i = 0; i < 22; ++i) *fields[i] = v[i];
  std::size_t o = kGeometryGroupOffsets[3];
  for (Histogram16* h : {&d.histograms.edge, &d.histograms.face, &d.histograms.curvature, &d.spectrum, &d.distance}) {
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(o), v.begin() + static_cast<std::ptrdiff_t>(o + kHistogramBins),
              h->begin());
    o += kHistogramBins;
  }
  return d;
}

const std::array<std::string, kGeometryDims>& geometry_feature_names() {
  static const std::array<std::string, kGeometryDims> names = [] {
    std::array<std::string, kGeometryDims> n;
    const char* scalars[] = {"vtx",   "face",  "v_per_f", "bx",   "by",  "bz",  "bx_by", "by_bz",
                             "bx_bz", "bmax_bmin", "area", "vol", "ncons", "cc", "wt",  "mani",
                             "wind",  "euler", "nmf",   "bef",  "sip", "sdiam"};
    for (std::size_t i = 0; i < 22; ++i) n[i] = scalars[i];
    std::size_t o = 22;
    for (const char* h : {"edge_hist", "face_hist", "curv_hist", "spectrum", "dist_hist"}) {
      for (std::size_t b = 0; b < kHistogramBins; ++b) n[o++] = std::string(h) + "_" + std::to_string(b);
    }
    return n;
  }();
  return names;
}

std::vector<EdgeInfo> build_edges(const Mesh& mesh) {
  const Topology t = build_topology(mesh);
  std::vector<EdgeInfo> out;
  out.reserve(t.edges.size());
  for (const auto& g : t.edges) out.push_back(g.info);
  return out;
}

bool triangles_intersect(const std::array<Vec3, 3>& t1, const std::array<Vec3, 3>& t2) {
  for (int k = 0; k < 3; ++k) {
    if (segment_hits_triangle(t1[k], t1[(k + 1) % 3], t2)) return true;
    if (segment_hits_triangle(t2[k], t2[(k + 1) % 3], t1)) return true;
  }
  return false;
}

double self_intersection_proxy(const Mesh& mesh, std::uint64_t seed, std::size_t max_pairs) {
  const std::size_t nf = mesh.faces.size();
  if (nf < 2) return 0.0;
  struct Box {
    double lo[3], hi[3];
  };
  std::vector<Box> boxes(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    Box b{};
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::numeric_limits<double>::infinity();
      b.hi[a] = -std::numeric_limits<double>::infinity();
    }
    for (auto vi : mesh.faces[i]) {
      for (int a = 0; a < 3; ++a) {
        b.lo[a] = std::min<double>(b.lo[a], mesh.vertices[vi][a]);
        b.hi[a] = std::max<double>(b.hi[a], mesh.vertices[vi][a]);
      }
    }
    boxes[i] = b;
  }
  std::vector<std::uint32_t> order(nf);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return boxes[a].lo[0] != boxes[b].lo[0] ? boxes[a].lo[0] < boxes[b].lo[0] : a < b;
  });

  // Sweep-and-prune over x, reservoir-sampling the candidate stream.
  Rng rng(seed);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> sample;
  sample.reserve(std::min<std::size_t>(max_pairs, 1 << 16));
  std::uint64_t seen = 0;
  for (std::size_t oi = 0; oi < nf; ++oi) {
    const std::uint32_t i = order[oi];
    const Face& fi = mesh.faces[i];
    for (std::size_t oj = oi + 1; oj < nf; ++oj) {
      const std::uint32_t j = order[oj];
      if (boxes[j].lo[0] > boxes[i].hi[0]) break;
      if (boxes[j].lo[1] > boxes[i].hi[1] || boxes[j].hi[1] < boxes[i].lo[1]) continue;
      if (boxes[j].lo[2] > boxes[i].hi[2] || boxes[j].hi[2] < boxes[i].lo[2]) continue;
      const Face& fj = mesh.faces[j];
      bool shared = false;
      for (auto a : fi) {
        for (auto b : fj) shared |= (a == b);
      }
      if (shared) continue;
      ++seen;
      if (sample.size() < max_pairs) {
        sample.emplace_back(i, j);
      } else {
        const std::uint64_t r = rng.index(seen);
        if (r < max_pairs) sample[r] = {i, j};
      }
    }
  }
  if (sample.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto [i, j] : sample) {
    if (triangles_intersect(triangle_points(mesh, mesh.faces[i]), triangle_points(mesh, mesh.faces[j]))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sample.size());
}

ScalarStats compute_scalar_stats(const Mesh& mesh, std::uint64_t seed) {
  if (mesh.empty()) throw EmptyMeshError();
  ScalarStats s;
  const std::size_t nv = mesh.vertices.size();
  const std::size_t nf = mesh.faces.size();
  s.vtx = static_cast<double>(nv);
  s.face = static_cast<double>(nf);
  s.v_per_f = s.vtx / static_cast<double>(std::max<std::size_t>(nf, 1));

  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi = lo * -1.0;
  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3 p = mesh.position(i);
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  s.bx = hi.x - lo.x;
  s.by = hi.y - lo.y;
  s.bz = hi.z - lo.z;
  auto ratio = [](double a, double b) { return a / std::max(b, kRatioFloor); };
  s.bx_by = ratio(s.bx, s.by);
  s.by_bz = ratio(s.by, s.bz);
  s.bx_bz = ratio(s.bx, s.bz);
  s.bmax_bmin = ratio(std::max({s.bx, s.by, s.bz}), std::min({s.bx, s.by, s.bz}));

  std::vector<double> areas(nf), vols(nf);
  std::vector<Vec3> normals(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    const Face& f = mesh.faces[i];
    const Vec3 a = mesh.position(f[0]), b = mesh.position(f[1]), c = mesh.position(f[2]);
    const Vec3 n = cross(b - a, c - a);
    areas[i] = 0.5 * norm(n);
    vols[i] = dot(a, cross(b, c)) / 6.0;
    normals[i] = normalized(n);
  }
  s.area = pairwise_sum(areas);
  s.vol = std::abs(pairwise_sum(vols));

  const Topology topo = build_topology(mesh);
  const std::size_t ne = topo.edges.size();
  std::size_t boundary = 0, nonmanifold = 0, interior = 0;
  bool winding_ok = true;
  std::vector<double> ncons_terms;
  UnionFind uf(nv);
  for (const auto& g : topo.edges) {
    uf.unite(g.info.a, g.info.b);
    if (g.info.face_count == 1) ++boundary;
    if (g.info.face_count > 2) {
      ++nonmanifold;
      winding_ok = false;
    }
    if (g.info.face_count == 2) {
      ++interior;
      if (g.info.forward != 1) winding_ok = false;
      const Vec3& n0 = normals[topo.half_edges[g.first].face];
      const Vec3& n1 = normals[topo.half_edges[g.first + 1].face];
      ncons_terms.push_back((dot(n0, n1) + 1.0) / 2.0);
    }
  }
  std::size_t components = 0;
  for (std::uint32_t v = 0; v < nv; ++v) components += uf.find(v) == v ? 1 : 0;
  s.cc = static_cast<double>(components);
  // sorted so the sum does not depend on vertex labelling
  std::sort(ncons_terms.begin(), ncons_terms.end());
  s.ncons = interior > 0 ? pairwise_sum(ncons_terms) / static_cast<double>(interior) : 0.0;
  const bool has_faces = nf > 0;
  s.wt = has_faces && boundary == 0 && nonmanifold == 0 ? 1.0 : 0.0;
  s.mani = has_faces && nonmanifold == 0 ? 1.0 : 0.0;
  s.wind = has_faces && winding_ok ? 1.0 : 0.0;
  s.euler = static_cast<double>(nv) - static_cast<double>(ne) + static_cast<double>(nf);
  s.nmf = ne > 0 ? static_cast<double>(nonmanifold) / static_cast<double>(ne) : 0.0;
  s.bef = ne > 0 ? static_cast<double>(boundary) / static_cast<double>(ne) : 0.0;
  s.sip = self_intersection_proxy(mesh, derive_seed(seed, 1));
  s.sdiam = shape_diameter(mesh, derive_seed(seed, 2));
  return s;
}

ShapeHistograms compute_histograms(const Mesh& mesh) {
  ShapeHistograms h;
  if (mesh.faces.empty()) return h;

  Vec3 lo = mesh.position(0), hi = lo;
  for (std::size_t i = 1; i < mesh.vertices.size(); ++i) {
    const Vec3 p = mesh.position(i);
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const double diag = norm(hi - lo);
  for (const EdgeInfo& e : build_edges(mesh)) {
    const double len = norm(mesh.position(e.a) - mesh.position(e.b));
    h.edge[diag > 0 ? bin_of(len / diag, 0.0, 1.0) : 0] += 1;
  }
  l1_normalize(h.edge);

  std::vector<double> areas(mesh.faces.size());
  double max_area = 0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    areas[i] = triangle_area(mesh, mesh.faces[i]);
    max_area = std::max(max_area, areas[i]);
  }
  for (double a : areas) h.face[max_area > 0 ? bin_of(a / max_area, 0.0, 1.0) : 0] += 1;
  l1_normalize(h.face);

  std::vector<double> angle_sum(mesh.vertices.size(), 0.0);
  std::vector<bool> touched(mesh.vertices.size(), false);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 p = mesh.position(f[k]);
      const Vec3 u = mesh.position(f[(k + 1) % 3]) - p;
      const Vec3 w = mesh.position(f[(k + 2) % 3]) - p;
      angle_sum[f[k]] += std::atan2(norm(cross(u, w)), dot(u, w));
      touched[f[k]] = true;
    }
  }
  constexpr double pi = std::numbers::pi;
  for (std::size_t v = 0; v < angle_sum.size(); ++v) {
    if (!touched[v]) continue;
    const double deficit = std::clamp(2.0 * pi - angle_sum[v], -pi, pi);
    h.curvature[bin_of(deficit, -pi, pi)] += 1;
  }
  l1_normalize(h.curvature);
  return h;
}

std::vector<double> graph_laplacian_spectrum(std::size_t n,
                                             std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  if (n == 0) return {};
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (auto [a, b] : edges) {
    if (a == b) continue;
    if (lap(a, b) != 0) continue;  // simple graph: ignore repeats
    lap(a, b) = lap(b, a) = -1.0;
    lap(a, a) += 1.0;
    lap(b, b) += 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  return std::vector<double>(ev.data(), ev.data() + ev.size());
}

Histogram16 compute_spectrum(const Mesh& mesh, std::uint64_t seed, std::size_t max_nodes) {
  if (mesh.empty()) throw EmptyMeshError();
  const std::size_t nv = mesh.vertices.size();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const EdgeInfo& e : build_edges(mesh)) edges.emplace_back(e.a, e.b);

  std::size_t n = nv;
  if (nv > max_nodes) {
    // Seeded random edge contraction; merging only along edges preserves the
    // component count whenever it is <= max_nodes.
    std::vector<std::size_t> order(edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 3));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    UnionFind uf(nv);
    std::size_t clusters = nv;
    for (std::size_t k = 0; k < order.size() && clusters > max_nodes; ++k) {
      if (uf.unite(edges[order[k]].first, edges[order[k]].second)) --clusters;
    }
    std::vector<std::uint32_t> label(nv, UINT32_MAX);
    std::vector<std::uint32_t> root_label(nv, UINT32_MAX);
    std::uint32_t next = 0;
    for (std::uint32_t v = 0; v < nv; ++v) {
      const std::uint32_t r = uf.find(v);
      if (root_label[r] == UINT32_MAX) root_label[r] = next++;
      label[v] = root_label[r];
    }
    if (next > max_nodes) {
      // More components than nodes allowed: fold clusters round-robin.
      for (auto& l : label) l = static_cast<std::uint32_t>(l % max_nodes);
      next = static_cast<std::uint32_t>(max_nodes);
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> coarse;
    coarse.reserve(edges.size());
    for (auto [a, b] : edges) {
      std::uint32_t la = label[a], lb = label[b];
      if (la == lb) continue;
      if (la > lb) std::swap(la, lb);
      coarse.emplace_back(la, lb);
    }
    std::sort(coarse.begin(), coarse.end());
    coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());
    edges = std::move(coarse);
    n = next;
  }

  const std::vector<double> ev = graph_laplacian_spectrum(n, edges);
  Histogram16 out{};
  for (std::size_t i = 0; i < kHistogramBins; ++i) out[i] = i < ev.size() ? ev[i] : ev.back();
  return out;
}

Histogram16 compute_dist_hist(const Mesh& mesh, std::uint64_t seed, std::size_t samples) {
  Histogram16 h{};
  if (mesh.faces.empty() || samples < 2) return h;
  const std::size_t nf = mesh.faces.size();
  std::vector<double> cdf(nf);
  double total = 0;
  for (std::size_t i = 0; i < nf; ++i) {
    total += triangle_area(mesh, mesh.faces[i]);
    cdf[i] = total;
  }
  Rng rng(derive_seed(seed, 4));
  std::vector<Vec3> pts(samples);
  for (auto& p : pts) {
    std::size_t fi;
    if (total > 0) {
      const double r = rng.uniform() * total;
      fi = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
      fi = std::min(fi, nf - 1);
    } else {
      fi = rng.index(nf);  // zero area: sampling by area is undefined, pick uniformly
    }
    const auto t = triangle_points(mesh, mesh.faces[fi]);
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    p = t[0] + (t[1] - t[0]) * (r1 * (1.0 - r2)) + (t[2] - t[0]) * (r1 * r2);
  }
  std::vector<double> dists;
  dists.reserve(samples * (samples - 1) / 2);
  double dmax = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t j = i + 1; j < samples; ++j) {
      const double d = norm(pts[i] - pts[j]);
      dists.push_back(d);
      dmax = std::max(dmax, d);
    }
  }
  for (double d : dists) h[dmax > 0 ? bin_of(d / dmax, 0.0, 1.0) : 0] += 1;
  l1_normalize(h);
  return h;
}

GeometricDescriptor fingerprint(const Mesh& mesh, std::uint64_t seed) {
  if (mesh.empty()) throw EmptyMeshError();
  GeometricDescriptor d;
  d.scalars = compute_scalar_stats(mesh, seed);
  d.histograms = compute_histograms(mesh);
  d.spectrum = compute_spectrum(mesh, seed);
  d.distance = compute_dist_hist(mesh, seed);
  return d;
}

}  // namespace attrib3d
