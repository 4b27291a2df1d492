#include "attrib3d/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "attrib3d/errors.hpp"

namespace attrib3d::nn {
namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "weights.bin";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

}  // namespace

void Archive::add(std::string name, Shape shape, std::vector<float> values) {
  if (values.size() != numel(shape)) throw ShapeError("archive: " + name + " has wrong element count");
  arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

const NamedArray* Archive::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Archive::require(const std::string& name, const Shape& expected) const {
  const NamedArray* a = find(name);
  if (!a) throw StateError("checkpoint is missing tensor " + name);
  if (a->shape != expected) {
    throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(a->shape) + ", model expects " +
                     shape_str(expected));
  }
  return *a;
}

void save_archive(const std::filesystem::path& dir, const Archive& archive) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "attrib3d-tensors";
  manifest["version"] = 1;
  manifest["blob"] = kBlob;
  manifest["tensors"] = nlohmann::json::object();
  manifest["order"] = nlohmann::json::array();
  std::ofstream blob(dir / kBlob, std::ios::binary);
  if (!blob) throw InputError("cannot write " + (dir / kBlob).string());
  std::size_t offset = 0;
  for (const auto& a : archive.arrays) {
    manifest["tensors"][a.name] = {{"shape", a.shape}, {"dtype", "float32"}, {"offset", offset}};
    manifest["order"].push_back(a.name);
    for (float f : a.values) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      blob.write(reinterpret_cast<const char*>(&bits), 4);
    }
    offset += a.values.size() * 4;
  }
  manifest["meta"] = archive.meta;
  std::ofstream out(dir / kManifest);
  if (!out) throw InputError("cannot write " + (dir / kManifest).string());
  out << manifest.dump(2) << "\n";
}

Archive load_archive(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw InputError("cannot open " + (dir / kManifest).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corrupt manifest " + (dir / kManifest).string() + ": " + e.what());
  }
  std::ifstream blob_in(dir / kBlob, std::ios::binary);
  if (!blob_in) throw InputError("cannot open " + (dir / kBlob).string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
  Archive archive;
  try {
    archive.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& name : manifest.at("order")) {
      const auto& entry = manifest.at("tensors").at(name.get<std::string>());
      if (entry.at("dtype") != "float32") throw InputError("unsupported dtype for " + name.get<std::string>());
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = numel(shape);
      if (offset + n * 4 > blob.size()) throw InputError("weights blob truncated at " + name.get<std::string>());
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, blob.data() + offset + i * 4, 4);
        values[i] = std::bit_cast<float>(to_le(bits));
      }
      archive.arrays.push_back({name.get<std::string>(), shape, std::move(values)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest " + (dir / kManifest).string() + ": " + e.what());
  }
  return archive;
}

}  // namespace attrib3d::nn
