#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "attrib3d/tensor.hpp"
#include "json.hpp"

namespace attrib3d::nn {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Named float32 arrays plus free-form JSON metadata. On disk: manifest.json
/// (name -> shape, dtype, byte offset, plus metadata) and one little-endian
/// float32 blob, weights.bin.
struct Archive {
  std::vector<NamedArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  void add(std::string name, Shape shape, std::vector<float> values);
  const NamedArray* find(const std::string& name) const;
  /// Throws StateError if missing, ShapeError if the stored shape differs.
  const NamedArray& require(const std::string& name, const Shape& expected) const;
};

void save_archive(const std::filesystem::path& dir, const Archive& archive);
/// Throws InputError on missing/corrupt files.
Archive load_archive(const std::filesystem::path& dir);

}  // namespace attrib3d::nn
