#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrib3d/frequency_fingerprint.hpp"
#include "attrib3d/geometry_fingerprint.hpp"
#include "attrib3d/image.hpp"
#include "attrib3d/mesh.hpp"
#include "attrib3d/model.hpp"
#include "attrib3d/renderer.hpp"
#include "json.hpp"

namespace attrib3d {

/// Knobs of one simulated generator family.
struct FamilyProfile {
  std::string id;
  double exponent_min = 0.5, exponent_max = 1.0;  // superquadric exponents
  double aspect_jitter = 0.2;                      // axis scales drawn from [1-j, 1+j]
  int subdivision = 3;                             // icosphere level of the base tessellation
  double noise_amplitude = 0.0;                    // RMS radial displacement
  double spectral_slope = 1.0;                     // band amplitude ~ f^-slope
  int smoothing = 0;                               // Laplacian iterations
  double backface_amplitude = 0.0;                 // push of hidden back region
  double hole_probability = 0.0;

  /// Throws InputError on out-of-range values.
  void check() const;
  nlohmann::json to_json() const;
  static FamilyProfile from_json(const nlohmann::json& j);
};

/// Labeled generator families g1..gK.
std::vector<FamilyProfile> generator_profiles(int k);
/// Held-out families u1..un, all labeled u.
std::vector<FamilyProfile> unknown_profiles(int n);
/// Watertight, noise-free, heavily smoothed stand-in for scanned assets.
FamilyProfile real_profile();

/// Shape parameters drawn for one asset; also drive the prompt text.
struct ShapeParams {
  double e1 = 1, e2 = 1;
  double ax = 1, ay = 1, az = 1;
};

struct GeneratedMesh {
  Mesh mesh;
  Mesh base;  // superquadric before any fingerprint is planted, normalised
  ShapeParams shape;
  std::size_t pushed_vertices = 0;
  std::size_t holes = 0;
};

/// Procedural mesh for one asset. The result is normalised (centroid at the
/// origin, max radius 1) before the back-face push, which only moves
/// vertices not seen from azimuth 0 and only along that view direction.
GeneratedMesh generate_family_mesh(const FamilyProfile& profile, std::uint64_t seed, const ViewConfig& views);

std::string prompt_for(const ShapeParams& shape, std::uint64_t seed);

struct AssetRecord {
  std::string id;
  std::string family;
  std::string label;
  std::uint64_t seed = 0;
  Mesh mesh;
  std::vector<ByteImage> rgb, normal;
  GeometricDescriptor geometry;
  FrequencyDescriptor frequency;
  std::string prompt;
  ByteImage prompt_image;  // empty (0x0) when absent
};

/// Geometry descriptor seed for an asset seed.
std::uint64_t descriptor_seed(std::uint64_t asset_seed);

/// Renders (quantised to 8 bits), geometry and frequency descriptors of a
/// mesh. Frequency descriptors use the quantised renders so a dataset
/// reloaded from disk reproduces them exactly.
void compute_observations(AssetRecord& record, const ViewConfig& views);

AssetRecord generate_family_asset(const FamilyProfile& profile, const std::string& label, const std::string& id,
                                  std::uint64_t seed, const ViewConfig& views);

struct BenchmarkConfig {
  int families = 6;
  int per_family = 200;
  int unknown = 2;
  bool include_real = false;
  std::uint64_t seed = 1;
  int resolution = 64;

  void check() const;
  ViewConfig views() const;
  LabelSpace label_space() const;
  nlohmann::json to_json() const;
  static BenchmarkConfig from_json(const nlohmann::json& j);
};

struct Dataset {
  BenchmarkConfig config;
  LabelSpace labels;
  std::vector<FamilyProfile> profiles;
  std::vector<AssetRecord> assets;

  int label_id(std::size_t i) const { return labels.id_of(assets[i].label); }
  const FamilyProfile& profile(const std::string& family) const;
};

/// Family assets first (g1..gK, then u1..un, then real), per_family each.
/// Asset i uses seed derive_seed(config.seed, i).
Dataset generate_benchmark(const BenchmarkConfig& config, int jobs = 1);

/// Writes manifest.json, meshes/, renders/, features/, prompts/.
void save_dataset(const Dataset& dataset, const std::string& dir, int jobs = 1);
/// Throws InputError naming the path on missing or unreadable files.
Dataset load_dataset(const std::string& dir, int jobs = 1);

nlohmann::json features_json(const AssetRecord& record);

}  // namespace attrib3d
