#include "attrib3d/synthetic_benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "attrib3d/errors.hpp"
#include "attrib3d/parallel.hpp"
#include "attrib3d/primitives.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d {

namespace fs = std::filesystem;

// ---- profiles -----------------------------------------------------------------

void FamilyProfile::check() const {
  auto fail = [&](const std::string& what) { throw InputError("family profile " + id + ": " + what); };
  if (id.empty()) throw InputError("family profile without id");
  if (!(exponent_min > 0 && exponent_max >= exponent_min && exponent_max <= 4)) fail("bad exponent range");
  if (!(aspect_jitter >= 0 && aspect_jitter < 1)) fail("aspect_jitter must be in [0, 1)");
  if (subdivision < 1 || subdivision > 5) fail("subdivision must be in [1, 5]");
  if (!(noise_amplitude >= 0 && noise_amplitude <= 0.5)) fail("noise_amplitude must be in [0, 0.5]");
  if (!std::isfinite(spectral_slope)) fail("spectral_slope must be finite");
  if (smoothing < 0) fail("smoothing must be >= 0");
  if (!(backface_amplitude >= 0 && backface_amplitude <= 1)) fail("backface_amplitude must be in [0, 1]");
  if (!(hole_probability >= 0 && hole_probability <= 1)) fail("hole_probability must be in [0, 1]");
}

nlohmann::json FamilyProfile::to_json() const {
  return {{"id", id},
          {"exponent_min", exponent_min},
          {"exponent_max", exponent_max},
          {"aspect_jitter", aspect_jitter},
          {"subdivision", subdivision},
          {"noise_amplitude", noise_amplitude},
          {"spectral_slope", spectral_slope},
          {"smoothing", smoothing},
          {"backface_amplitude", backface_amplitude},
          {"hole_probability", hole_probability}};
}

FamilyProfile FamilyProfile::from_json(const nlohmann::json& j) {
  FamilyProfile p;
  p.id = j.at("id");
  p.exponent_min = j.at("exponent_min");
  p.exponent_max = j.at("exponent_max");
  p.aspect_jitter = j.at("aspect_jitter");
  p.subdivision = j.at("subdivision");
  p.noise_amplitude = j.at("noise_amplitude");
  p.spectral_slope = j.at("spectral_slope");
  p.smoothing = j.at("smoothing");
  p.backface_amplitude = j.at("backface_amplitude");
  p.hole_probability = j.at("hole_probability");
  p.check();
  return p;
}

namespace {

FamilyProfile make_profile(std::string id, double emin, double emax, double noise, double slope, int smooth,
                           double push, double holes, int subdiv = 3) {
  FamilyProfile p;
  p.id = std::move(id);
  p.exponent_min = emin;
  p.exponent_max = emax;
  p.noise_amplitude = noise;
  p.spectral_slope = slope;
  p.smoothing = smooth;
  p.backface_amplitude = push;
  p.hole_probability = holes;
  p.subdivision = subdiv;
  return p;
}

}  // namespace

std::vector<FamilyProfile> generator_profiles(int k) {
  if (k < 1) throw InputError("at least one generator family is required");
  std::vector<FamilyProfile> base = {
      make_profile("g1", 0.3, 0.6, 0.0, 1.0, 0, 0.0, 0.0),    // clean, boxy
      make_profile("g2", 0.5, 1.0, 0.03, 0.5, 0, 0.0, 0.0),   // fine-grained noise
      make_profile("g3", 0.5, 1.0, 0.06, 2.5, 1, 0.0, 0.0),   // broad lumps
      make_profile("g4", 0.6, 1.2, 0.05, 1.0, 8, 0.0, 0.0),   // over-smoothed
      make_profile("g5", 0.5, 1.0, 0.01, 1.0, 1, 0.4, 0.0),   // collapsed back
      make_profile("g6", 0.5, 1.0, 0.02, 1.0, 1, 0.0, 1.0),   // open surfaces
  };
  std::vector<FamilyProfile> out;
  for (int i = 0; i < k; ++i) {
    if (i < static_cast<int>(base.size())) {
      out.push_back(base[static_cast<std::size_t>(i)]);
      continue;
    }
    Rng rng(derive_seed(0x67656e73ull, static_cast<std::uint64_t>(i)));
    const double e = rng.uniform(0.3, 1.2);
    out.push_back(make_profile("g" + std::to_string(i + 1), e, e + 0.3, rng.uniform(0.0, 0.06), rng.uniform(0.3, 2.5),
                               static_cast<int>(rng.index(9)), rng.bernoulli(0.3) ? rng.uniform(0.1, 0.5) : 0.0,
                               rng.bernoulli(0.3) ? rng.uniform(0.3, 1.0) : 0.0));
  }
  return out;
}

std::vector<FamilyProfile> unknown_profiles(int n) {
  if (n < 0) throw InputError("unknown family count must be >= 0");
  std::vector<FamilyProfile> base = {
      make_profile("u1", 0.4, 1.0, 0.02, 1.5, 3, 0.2, 0.0),
      make_profile("u2", 0.7, 1.4, 0.06, 0.8, 0, 0.0, 0.4),
  };
  std::vector<FamilyProfile> out;
  for (int i = 0; i < n; ++i) {
    if (i < static_cast<int>(base.size())) {
      out.push_back(base[static_cast<std::size_t>(i)]);
      continue;
    }
    Rng rng(derive_seed(0x756e6b6eull, static_cast<std::uint64_t>(i)));
    const double e = rng.uniform(0.4, 1.2);
    out.push_back(make_profile("u" + std::to_string(i + 1), e, e + 0.3, rng.uniform(0.01, 0.05), rng.uniform(0.5, 2.0),
                               static_cast<int>(rng.index(5)), rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.5)));
  }
  return out;
}

FamilyProfile real_profile() { return make_profile("real", 0.8, 1.2, 0.0, 1.0, 15, 0.0, 0.0, 4); }

// ---- mesh synthesis -------------------------------------------------------------

namespace {

std::vector<std::vector<std::uint32_t>> vertex_neighbors(const Mesh& m) {
  std::vector<std::set<std::uint32_t>> nb(m.vertices.size());
  for (const Face& f : m.faces) {
    for (int k = 0; k < 3; ++k) {
      nb[f[k]].insert(f[(k + 1) % 3]);
      nb[f[k]].insert(f[(k + 2) % 3]);
    }
  }
  std::vector<std::vector<std::uint32_t>> out(nb.size());
  for (std::size_t i = 0; i < nb.size(); ++i) out[i].assign(nb[i].begin(), nb[i].end());
  return out;
}

void laplacian_smooth(std::vector<Vec3>& pos, const std::vector<std::vector<std::uint32_t>>& nb, int iterations) {
  std::vector<Vec3> next(pos.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (nb[i].empty()) {
        next[i] = pos[i];
        continue;
      }
      Vec3 c{};
      for (auto j : nb[i]) c += pos[j];
      c = c / static_cast<double>(nb[i].size());
      next[i] = pos[i] + (c - pos[i]) * 0.5;
    }
    pos.swap(next);
  }
}

Vec3 random_direction(Rng& rng) {
  for (;;) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(v);
    if (n > 1e-6) return v / n;
  }
}

// Band-limited radial noise on the unit sphere, unit RMS over `dirs`.
std::vector<double> spectral_noise(const std::vector<Vec3>& dirs, double slope, Rng& rng) {
  constexpr int kBands = 12, kWaves = 4;
  std::vector<double> n(dirs.size(), 0.0);
  for (int f = 1; f <= kBands; ++f) {
    const double amp = std::pow(static_cast<double>(f), -slope);
    for (int w = 0; w < kWaves; ++w) {
      const Vec3 axis = random_direction(rng);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < dirs.size(); ++i) {
        n[i] += amp * std::cos(std::numbers::pi * f * dot(axis, dirs[i]) + phase);
      }
    }
  }
  double ss = 0;
  for (double x : n) ss += x * x;
  const double rms = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(1, n.size())));
  if (rms > 0) {
    for (double& x : n) x /= rms;
  }
  return n;
}

Mesh with_positions(const Mesh& topo, const std::vector<Vec3>& pos) {
  Mesh m;
  m.faces = topo.faces;
  m.vertices.reserve(pos.size());
  for (const auto& p : pos) m.vertices.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)});
  return m;
}

Mesh drop_unreferenced(const Mesh& m) {
  std::vector<std::uint32_t> remap(m.vertices.size(), kNoFace);
  Mesh out;
  for (const Face& f : m.faces) {
    Face g;
    for (int k = 0; k < 3; ++k) {
      if (remap[f[k]] == kNoFace) {
        remap[f[k]] = static_cast<std::uint32_t>(out.vertices.size());
        out.vertices.push_back(m.vertices[f[k]]);
      }
      g[k] = remap[f[k]];
    }
    out.faces.push_back(g);
  }
  return out;
}

}  // namespace

GeneratedMesh generate_family_mesh(const FamilyProfile& profile, std::uint64_t seed, const ViewConfig& views) {
  profile.check();
  Rng shape_rng(derive_seed(seed, 1));
  Rng noise_rng(derive_seed(seed, 2));
  Rng hole_rng(derive_seed(seed, 3));

  GeneratedMesh out;
  ShapeParams& sp = out.shape;
  sp.e1 = shape_rng.uniform(profile.exponent_min, profile.exponent_max);
  sp.e2 = shape_rng.uniform(profile.exponent_min, profile.exponent_max);
  sp.ax = shape_rng.uniform(1 - profile.aspect_jitter, 1 + profile.aspect_jitter);
  sp.ay = shape_rng.uniform(1 - profile.aspect_jitter, 1 + profile.aspect_jitter);
  sp.az = shape_rng.uniform(1 - profile.aspect_jitter, 1 + profile.aspect_jitter);

  const Mesh sphere = make_icosphere(profile.subdivision);
  std::vector<Vec3> dirs(sphere.vertices.size()), pos(dirs.size());
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const Vec3 d = normalized(sphere.position(i));
    dirs[i] = d;
    const double fx = std::pow(std::abs(d.x / sp.ax), 2.0 / sp.e2);
    const double fy = std::pow(std::abs(d.y / sp.ay), 2.0 / sp.e2);
    const double fz = std::pow(std::abs(d.z / sp.az), 2.0 / sp.e1);
    const double F = std::pow(fx + fy, sp.e2 / sp.e1) + fz;
    pos[i] = d * std::pow(F, -sp.e1 / 2.0);
  }
  out.base = normalize_for_render(with_positions(sphere, pos));

  if (profile.noise_amplitude > 0) {
    const auto n = spectral_noise(dirs, profile.spectral_slope, noise_rng);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = pos[i] * (1.0 + profile.noise_amplitude * n[i]);
  }
  if (profile.smoothing > 0) laplacian_smooth(pos, vertex_neighbors(sphere), profile.smoothing);
  Mesh mesh = normalize_for_render(with_positions(sphere, pos));

  if (hole_rng.bernoulli(profile.hole_probability)) {
    const std::size_t holes = 1 + hole_rng.index(2);
    std::vector<std::uint8_t> removed(mesh.faces.size(), 0);
    for (std::size_t h = 0; h < holes; ++h) {
      const Vec3 c = mesh.position(hole_rng.index(mesh.vertices.size()));
      for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        const Vec3 centroid = (mesh.position(t[0]) + mesh.position(t[1]) + mesh.position(t[2])) / 3.0;
        if (norm(centroid - c) < 0.25) removed[f] = 1;
      }
    }
    Mesh kept;
    kept.vertices = mesh.vertices;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      if (!removed[f]) kept.faces.push_back(mesh.faces[f]);
    }
    if (!kept.faces.empty() && kept.faces.size() < mesh.faces.size()) {
      mesh = drop_unreferenced(kept);
      out.holes = holes;
    }
  }

  if (profile.backface_amplitude > 0) {
    const double az0 = 0.0;
    const OrthoCamera cam = OrthoCamera::from_angles(az0, views.elevation_deg);
    const ViewRender front = render_view(mesh, cam, views);
    std::vector<std::uint8_t> frozen(mesh.vertices.size(), 0);
    for (std::uint32_t f : front.face_id) {
      if (f == kNoFace) continue;
      for (auto v : mesh.faces[f]) frozen[v] = 1;
    }
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      if (frozen[i]) continue;
      const Vec3 p = mesh.position(i);
      const double w = std::clamp(-dot(p, cam.toward), 0.0, 1.0);
      if (w <= 0) continue;
      const Vec3 q = p - cam.toward * (profile.backface_amplitude * w);
      mesh.vertices[i] = {static_cast<float>(q.x), static_cast<float>(q.y), static_cast<float>(q.z)};
      ++out.pushed_vertices;
    }
  }
  out.mesh = std::move(mesh);
  return out;
}

std::string prompt_for(const ShapeParams& shape, std::uint64_t seed) {
  const double e = 0.5 * (shape.e1 + shape.e2);
  const char* roundness = e < 0.55 ? "boxy" : e < 0.85 ? "beveled" : e < 1.15 ? "rounded" : "pinched";
  const double hi = std::max({shape.ax, shape.ay, shape.az}), lo = std::min({shape.ax, shape.ay, shape.az});
  const char* proportion = "compact";
  if (hi / lo > 1.15) {
    if (shape.az == hi) {
      proportion = "tall";
    } else if (shape.az == lo) {
      proportion = "flat";
    } else {
      proportion = "elongated";
    }
  }
  static const char* nouns[] = {"vase", "stone", "toy", "sculpture", "container", "ornament", "pebble", "lamp"};
  static const char* materials[] = {"clay", "wood", "marble", "plastic", "bronze", "glass", "porcelain", "resin"};
  static const char* colors[] = {"white", "gray", "red", "blue", "green", "ochre", "black", "teal"};
  Rng rng(derive_seed(seed, 4));
  const char* noun = nouns[rng.index(8)];
  const char* material = materials[rng.index(8)];
  const char* color = colors[rng.index(8)];
  const char* article = proportion[0] == 'e' ? "an " : "a ";
  return std::string(article) + proportion + " " + roundness + " " + color + " " + noun + " made of " + material;
}

// ---- observations -----------------------------------------------------------------

std::uint64_t descriptor_seed(std::uint64_t asset_seed) { return derive_seed(asset_seed, 5); }

void compute_observations(AssetRecord& record, const ViewConfig& views) {
  const RenderSet set = render_views(record.mesh, views);
  RenderSet quantized;
  record.rgb.clear();
  record.normal.clear();
  for (std::size_t v = 0; v < set.rgb.size(); ++v) {
    record.rgb.push_back(quantize(set.rgb[v]));
    record.normal.push_back(quantize(set.normal[v]));
    quantized.rgb.push_back(dequantize(record.rgb.back()));
  }
  record.geometry = fingerprint(record.mesh, descriptor_seed(record.seed));
  record.frequency = multi_view_fft(quantized);
}

AssetRecord generate_family_asset(const FamilyProfile& profile, const std::string& label, const std::string& id,
                                  std::uint64_t seed, const ViewConfig& views) {
  GeneratedMesh g = generate_family_mesh(profile, seed, views);
  AssetRecord r;
  r.id = id;
  r.family = profile.id;
  r.label = label;
  r.seed = seed;
  r.mesh = std::move(g.mesh);
  compute_observations(r, views);
  r.prompt = prompt_for(g.shape, seed);
  r.prompt_image = quantize(render_view(g.base, OrthoCamera::from_angles(0.0, views.elevation_deg), views).rgb);
  return r;
}

// ---- benchmark ----------------------------------------------------------------------

void BenchmarkConfig::check() const {
  if (families < 2) throw InputError("benchmark needs at least 2 generator families");
  if (per_family < 1) throw InputError("per_family must be positive");
  if (unknown < 0) throw InputError("unknown family count must be >= 0");
  if (resolution < 16) throw InputError("resolution must be >= 16");
}

ViewConfig BenchmarkConfig::views() const {
  ViewConfig v;
  v.resolution = resolution;
  return v;
}

LabelSpace BenchmarkConfig::label_space() const {
  return include_real ? LabelSpace::mixed(families) : LabelSpace::synthetic(families);
}

nlohmann::json BenchmarkConfig::to_json() const {
  return {{"families", families}, {"per_family", per_family}, {"unknown", unknown},
          {"include_real", include_real}, {"seed", seed}, {"resolution", resolution}};
}

BenchmarkConfig BenchmarkConfig::from_json(const nlohmann::json& j) {
  BenchmarkConfig c;
  c.families = j.value("families", c.families);
  c.per_family = j.value("per_family", c.per_family);
  c.unknown = j.value("unknown", c.unknown);
  c.include_real = j.value("include_real", c.include_real);
  c.seed = j.value("seed", c.seed);
  c.resolution = j.value("resolution", c.resolution);
  return c;
}

const FamilyProfile& Dataset::profile(const std::string& family) const {
  for (const auto& p : profiles) {
    if (p.id == family) return p;
  }
  throw InputError("dataset has no family " + family);
}

namespace {

std::string family_label(const std::string& family) {
  if (family == "real") return "r";
  if (!family.empty() && family[0] == 'u') return "u";
  return family;
}

std::string asset_id(const std::string& family, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d", family.c_str(), i);
  return buf;
}

}  // namespace

Dataset generate_benchmark(const BenchmarkConfig& config, int jobs) {
  config.check();
  Dataset ds;
  ds.config = config;
  ds.labels = config.label_space();
  ds.profiles = generator_profiles(config.families);
  for (auto& p : unknown_profiles(config.unknown)) ds.profiles.push_back(p);
  if (config.include_real) ds.profiles.push_back(real_profile());

  struct Job {
    std::size_t profile;
    int index;
  };
  std::vector<Job> plan;
  for (std::size_t p = 0; p < ds.profiles.size(); ++p) {
    for (int i = 0; i < config.per_family; ++i) plan.push_back({p, i});
  }
  const ViewConfig views = config.views();
  ds.assets.resize(plan.size());
  parallel_for(plan.size(), jobs, [&](std::size_t k) {
    const FamilyProfile& prof = ds.profiles[plan[k].profile];
    ds.assets[k] = generate_family_asset(prof, family_label(prof.id), asset_id(prof.id, plan[k].index),
                                         derive_seed(config.seed, k), views);
  });
  return ds;
}

// ---- dataset io ---------------------------------------------------------------------

nlohmann::json features_json(const AssetRecord& record) {
  nlohmann::json fft = nlohmann::json::array();
  for (const auto& v : record.frequency.per_view) fft.push_back(v);
  return {{"id", record.id},
          {"geometry", record.geometry.flatten()},
          {"geometry_names", geometry_feature_names()},
          {"fft", fft},
          {"fft_padded", {record.frequency.padded_height, record.frequency.padded_width}}};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string view_file(int v, const char* kind) { return "view" + std::to_string(v) + "." + kind + ".ppm"; }

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir, int jobs) {
  const fs::path root(dir);
  for (const char* sub : {"meshes", "renders", "features", "prompts"}) fs::create_directories(root / sub);
  nlohmann::json assets = nlohmann::json::array();
  for (const auto& a : ds.assets) {
    assets.push_back({{"id", a.id}, {"family", a.family}, {"label", a.label}, {"seed", a.seed},
                      {"has_prompt_image", a.prompt_image.width > 0}});
  }
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : ds.profiles) profiles.push_back(p.to_json());
  const nlohmann::json manifest = {{"format", "attrib3d-dataset"}, {"version", 1},
                                   {"config", ds.config.to_json()}, {"label_space", ds.labels.to_json()},
                                   {"profiles", profiles},          {"assets", assets}};
  parallel_for(ds.assets.size(), jobs, [&](std::size_t i) {
    const AssetRecord& a = ds.assets[i];
    write_ply_file(a.mesh, (root / "meshes" / (a.id + ".ply")).string(), PlyFormat::binary_le);
    const fs::path rdir = root / "renders" / a.id;
    fs::create_directories(rdir);
    for (std::size_t v = 0; v < a.rgb.size(); ++v) {
      write_ppm(a.rgb[v], (rdir / view_file(static_cast<int>(v), "rgb")).string());
      write_ppm(a.normal[v], (rdir / view_file(static_cast<int>(v), "normal")).string());
    }
    write_text(root / "features" / (a.id + ".json"), features_json(a).dump());
    write_text(root / "prompts" / (a.id + ".txt"), a.prompt + "\n");
    if (a.prompt_image.width > 0) write_ppm(a.prompt_image, (root / "prompts" / (a.id + ".ppm")).string());
  });
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir, int jobs) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "attrib3d-dataset") {
    throw InputError(manifest_path.string() + ": not an attrib3d dataset manifest");
  }
  Dataset ds;
  ds.config = BenchmarkConfig::from_json(manifest.at("config"));
  ds.labels = LabelSpace::from_json(manifest.at("label_space"));
  for (const auto& p : manifest.at("profiles")) ds.profiles.push_back(FamilyProfile::from_json(p));
  const auto& list = manifest.at("assets");
  ds.assets.resize(list.size());
  const int views = ds.config.views().views();
  parallel_for(list.size(), jobs, [&](std::size_t i) {
    const auto& e = list[i];
    AssetRecord& a = ds.assets[i];
    a.id = e.at("id");
    a.family = e.at("family");
    a.label = e.at("label");
    a.seed = e.at("seed");
    ds.labels.id_of(a.label);
    const fs::path mesh_path = root / "meshes" / (a.id + ".ply");
    if (!fs::exists(mesh_path)) throw InputError("cannot read " + mesh_path.string());
    a.mesh = read_ply(mesh_path.string());
    const fs::path rdir = root / "renders" / a.id;
    for (int v = 0; v < views; ++v) {
      for (const char* kind : {"rgb", "normal"}) {
        const fs::path p = rdir / view_file(v, kind);
        if (!fs::exists(p)) throw InputError("cannot read " + p.string());
        (std::string(kind) == "rgb" ? a.rgb : a.normal).push_back(read_ppm(p.string()));
      }
    }
    const fs::path fpath = root / "features" / (a.id + ".json");
    nlohmann::json f;
    try {
      f = nlohmann::json::parse(read_text(fpath));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError(fpath.string() + ": " + ex.what());
    }
    a.geometry = GeometricDescriptor::unflatten(f.at("geometry").get<std::array<double, kGeometryDims>>());
    for (const auto& v : f.at("fft")) a.frequency.per_view.push_back(v.get<FftVector>());
    a.frequency.padded_height = f.at("fft_padded").at(0);
    a.frequency.padded_width = f.at("fft_padded").at(1);
    std::string prompt = read_text(root / "prompts" / (a.id + ".txt"));
    while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r')) prompt.pop_back();
    a.prompt = prompt;
    if (e.value("has_prompt_image", false)) a.prompt_image = read_ppm((root / "prompts" / (a.id + ".ppm")).string());
  });
  return ds;
}

}  // namespace attrib3d
