#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "attrib3d/errors.hpp"
#include "attrib3d/mesh.hpp"

namespace attrib3d {
namespace {

enum class ScalarType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<ScalarType> scalar_type_from_name(std::string_view name) {
  static const std::map<std::string_view, ScalarType> kTypes = {
      {"char", ScalarType::i8},    {"int8", ScalarType::i8},     {"uchar", ScalarType::u8},
      {"uint8", ScalarType::u8},   {"short", ScalarType::i16},   {"int16", ScalarType::i16},
      {"ushort", ScalarType::u16}, {"uint16", ScalarType::u16},  {"int", ScalarType::i32},
      {"int32", ScalarType::i32},  {"uint", ScalarType::u32},    {"uint32", ScalarType::u32},
      {"float", ScalarType::f32},  {"float32", ScalarType::f32}, {"double", ScalarType::f64},
      {"float64", ScalarType::f64}};
  auto it = kTypes.find(name);
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::i8:
    case ScalarType::u8:
      return 1;
    case ScalarType::i16:
    case ScalarType::u16:
      return 2;
    case ScalarType::i32:
    case ScalarType::u32:
    case ScalarType::f32:
      return 4;
    case ScalarType::f64:
      return 8;
  }
  return 0;
}

bool is_integral(ScalarType t) { return t != ScalarType::f32 && t != ScalarType::f64; }

struct Property {
  std::string name;
  ScalarType type = ScalarType::f32;
  bool is_list = false;
  ScalarType count_type = ScalarType::u8;
};

struct Element {
  std::string name;
  std::uint64_t count = 0;
  std::vector<Property> properties;
  std::size_t header_line = 0;
};

struct Header {
  bool binary = false;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
  std::size_t line_count = 0;
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Header parse_header(std::string_view text) {
  Header header;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_format = false;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= text.size()) return std::nullopt;
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) return std::nullopt;
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return line;
  };

  auto first = next_line();
  if (!first || split_ws(*first) != std::vector<std::string_view>{"ply"}) {
    throw ParseError(1, "missing 'ply' magic");
  }
  while (true) {
    auto line = next_line();
    if (!line) throw ParseError(line_no + 1, "header not terminated by end_header");
    const auto tok = split_ws(*line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) throw ParseError(line_no, "malformed format line");
      if (tok[2] != "1.0") throw UnsupportedError("unsupported PLY version " + std::string(tok[2]));
      if (tok[1] == "ascii") {
        header.binary = false;
      } else if (tok[1] == "binary_little_endian") {
        header.binary = true;
      } else if (tok[1] == "binary_big_endian") {
        throw UnsupportedError("binary_big_endian PLY is not supported");
      } else {
        throw ParseError(line_no, "unknown format '" + std::string(tok[1]) + "'");
      }
      saw_format = true;
      continue;
    }
    if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(line_no, "malformed element line");
      Element e;
      e.name = std::string(tok[1]);
      auto [ptr, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
      if (ec != std::errc() || ptr != tok[2].data() + tok[2].size()) {
        throw ParseError(line_no, "bad element count");
      }
      e.header_line = line_no;
      header.elements.push_back(std::move(e));
      continue;
    }
    if (tok[0] == "property") {
      if (header.elements.empty()) throw ParseError(line_no, "property before any element");
      Property p;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = scalar_type_from_name(tok[2]);
        auto it = scalar_type_from_name(tok[3]);
        if (!ct || !it || !is_integral(*ct)) throw ParseError(line_no, "bad list property types");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        auto t = scalar_type_from_name(tok[1]);
        if (!t) throw ParseError(line_no, "unknown property type '" + std::string(tok[1]) + "'");
        p.type = *t;
        p.name = std::string(tok[2]);
      } else {
        throw ParseError(line_no, "malformed property line");
      }
      header.elements.back().properties.push_back(std::move(p));
      continue;
    }
    throw ParseError(line_no, "unexpected header keyword '" + std::string(tok[0]) + "'");
  }
  if (!saw_format) throw ParseError(line_no, "missing format line");
  header.body_offset = pos;
  header.line_count = line_no;
  return header;
}

// Reads one element instance worth of values, in either encoding.
class BodyReader {
 public:
  BodyReader(std::string_view body, bool binary, std::size_t first_line)
      : body_(body), binary_(binary), line_(first_line) {}

  std::size_t line() const { return line_; }
  std::size_t remaining_bytes() const { return body_.size() - pos_; }

  void begin_instance() {
    if (binary_) return;
    // ASCII: one element instance per line; skip blank lines.
    while (true) {
      if (pos_ >= body_.size()) throw ParseError(line_, "unexpected end of data");
      std::size_t nl = body_.find('\n', pos_);
      if (nl == std::string_view::npos) nl = body_.size();
      std::string_view l = body_.substr(pos_, nl - pos_);
      pos_ = std::min(body_.size(), nl + 1);
      ++line_;
      tokens_ = split_ws(l);
      tok_ = 0;
      if (!tokens_.empty()) return;
    }
  }

  void end_instance() {
    if (!binary_ && tok_ != tokens_.size()) throw ParseError(line_, "trailing values on line");
  }

  double read(ScalarType t) {
    if (binary_) return read_binary(t);
    if (tok_ >= tokens_.size()) throw ParseError(line_, "too few values on line");
    std::string_view s = tokens_[tok_++];
    double v = 0;
    if (is_integral(t)) {
      std::int64_t iv = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), iv);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line_, "bad integer '" + std::string(s) + "'");
      }
      v = static_cast<double>(iv);
    } else {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line_, "bad number '" + std::string(s) + "'");
      }
    }
    return v;
  }

 private:
  template <typename U>
  U load() {
    U out{};
    std::memcpy(&out, body_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
      auto* b = reinterpret_cast<unsigned char*>(&out);
      std::reverse(b, b + sizeof(U));
    }
    pos_ += sizeof(U);
    return out;
  }

  double read_binary(ScalarType t) {
    if (body_.size() - pos_ < scalar_size(t)) throw ParseError(line_, "truncated binary data");
    switch (t) {
      case ScalarType::i8:
        return load<std::int8_t>();
      case ScalarType::u8:
        return load<std::uint8_t>();
      case ScalarType::i16:
        return load<std::int16_t>();
      case ScalarType::u16:
        return load<std::uint16_t>();
      case ScalarType::i32:
        return load<std::int32_t>();
      case ScalarType::u32:
        return load<std::uint32_t>();
      case ScalarType::f32:
        return load<float>();
      case ScalarType::f64:
        return load<double>();
    }
    return 0;
  }

  std::string_view body_;
  bool binary_;
  std::size_t pos_ = 0;
  std::size_t line_;
  std::vector<std::string_view> tokens_;
  std::size_t tok_ = 0;
};

std::size_t min_instance_bytes(const Element& e) {
  std::size_t n = 0;
  for (const auto& p : e.properties) n += p.is_list ? scalar_size(p.count_type) : scalar_size(p.type);
  return std::max<std::size_t>(n, 1);
}

int find_property(const Element& e, std::string_view name) {
  for (std::size_t i = 0; i < e.properties.size(); ++i) {
    if (e.properties[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

constexpr std::uint64_t kMaxListLength = 1u << 16;

}  // namespace

Mesh parse_ply(std::string_view text) {
  const Header header = parse_header(text);
  const std::string_view body = text.substr(header.body_offset);
  BodyReader reader(body, header.binary, header.line_count);

  const Element* vertex_el = nullptr;
  for (const auto& e : header.elements) {
    if (e.name == "vertex") vertex_el = &e;
  }
  if (vertex_el == nullptr || vertex_el->count == 0) throw EmptyMeshError();

  Mesh mesh;
  const std::uint64_t vertex_count = vertex_el->count;
  std::size_t face_id = 0;

  for (const auto& e : header.elements) {
    // Every instance costs at least one byte (binary) or one line (ASCII), so
    // this bound rejects absurd counts before anything is allocated.
    const std::size_t min_bytes = header.binary ? min_instance_bytes(e) : 2;
    if (e.count > reader.remaining_bytes() / min_bytes + 1 && e.count > 0) {
      throw ParseError(e.header_line, "element '" + e.name + "' count exceeds data size");
    }
    const bool is_vertex = &e == vertex_el;
    const bool is_face = e.name == "face";
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, ilist = -1;
    if (is_vertex) {
      ix = find_property(e, "x");
      iy = find_property(e, "y");
      iz = find_property(e, "z");
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError(e.header_line, "vertex element lacks x/y/z");
      for (int i : {ix, iy, iz}) {
        if (e.properties[i].is_list) throw ParseError(e.header_line, "vertex coordinate is a list");
      }
      ir = find_property(e, "red");
      ig = find_property(e, "green");
      ib = find_property(e, "blue");
      if (ir < 0 || ig < 0 || ib < 0 || e.properties[ir].is_list || e.properties[ig].is_list ||
          e.properties[ib].is_list) {
        ir = ig = ib = -1;
      }
      mesh.vertices.reserve(e.count);
      if (ir >= 0) mesh.colors.reserve(e.count);
    }
    if (is_face) {
      ilist = find_property(e, "vertex_indices");
      if (ilist < 0) ilist = find_property(e, "vertex_index");
      if (ilist < 0 || !e.properties[ilist].is_list) {
        throw ParseError(e.header_line, "face element lacks a vertex_indices list");
      }
    }

    std::vector<double> scalars(e.properties.size());
    std::vector<std::int64_t> poly;
    for (std::uint64_t n = 0; n < e.count; ++n) {
      reader.begin_instance();
      for (std::size_t pi = 0; pi < e.properties.size(); ++pi) {
        const Property& p = e.properties[pi];
        if (!p.is_list) {
          scalars[pi] = reader.read(p.type);
          continue;
        }
        const double count_d = reader.read(p.count_type);
        if (count_d < 0 || count_d > static_cast<double>(kMaxListLength)) {
          throw ParseError(reader.line(), "bad list length");
        }
        const auto count = static_cast<std::size_t>(count_d);
        const bool keep = is_face && static_cast<int>(pi) == ilist;
        if (keep) poly.assign(count, 0);
        for (std::size_t k = 0; k < count; ++k) {
          const double v = reader.read(p.type);
          if (keep) {
            if (!std::isfinite(v) || v != std::floor(v)) throw ParseError(reader.line(), "non-integral index");
            poly[k] = v < -1.0 ? -1 : (v > 9.0e18 ? std::numeric_limits<std::int64_t>::max()
                                                   : static_cast<std::int64_t>(v));
          }
        }
      }
      reader.end_instance();

      if (is_vertex) {
        const double x = scalars[ix], y = scalars[iy], z = scalars[iz];
        const Point3f pt{static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1]) || !std::isfinite(pt[2])) {
          throw ParseError(reader.line(), "non-finite vertex coordinate");
        }
        mesh.vertices.push_back(pt);
        if (ir >= 0) {
          auto to_u8 = [&](int idx) {
            double v = scalars[idx];
            if (!is_integral(e.properties[idx].type)) v *= 255.0;
            return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
          };
          mesh.colors.push_back({to_u8(ir), to_u8(ig), to_u8(ib)});
        }
      } else if (is_face) {
        for (std::int64_t idx : poly) {
          if (idx < 0 || static_cast<std::uint64_t>(idx) >= vertex_count) {
            throw IndexError(face_id, "vertex index " + std::to_string(idx) + " out of range (" +
                                          std::to_string(vertex_count) + " vertices)");
          }
        }
        if (poly.size() < 3) {
          ++mesh.removed_degenerate;
        } else {
          for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
            const Face f{static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
                         static_cast<std::uint32_t>(poly[k + 1])};
            if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
              ++mesh.removed_degenerate;
            } else {
              mesh.faces.push_back(f);
            }
          }
        }
        ++face_id;
      }
    }
  }
  return mesh;
}

Mesh parse_ply(std::span<const std::uint8_t> bytes) {
  return parse_ply(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Mesh read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_ply(std::string_view(data));
}

namespace {

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

void append_text(std::vector<std::uint8_t>& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

void append_float(std::vector<std::uint8_t>& out, float v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
  out.insert(out.end(), buf, ptr);
}

}  // namespace

std::vector<std::uint8_t> write_ply(const Mesh& mesh, PlyFormat format) {
  const bool with_color = !mesh.colors.empty() && mesh.colors.size() == mesh.vertices.size();
  std::ostringstream h;
  h << "ply\n"
    << "format " << (format == PlyFormat::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
    << "element vertex " << mesh.vertices.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n";
  if (with_color) h << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  h << "element face " << mesh.faces.size() << "\n"
    << "property list uchar uint vertex_indices\n"
    << "end_header\n";

  std::vector<std::uint8_t> out;
  append_text(out, h.str());
  if (format == PlyFormat::binary_le) {
    out.reserve(out.size() + mesh.vertices.size() * 15 + mesh.faces.size() * 13);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      for (float c : mesh.vertices[i]) append_le(out, c);
      if (with_color) {
        for (std::uint8_t c : mesh.colors[i]) out.push_back(c);
      }
    }
    for (const Face& f : mesh.faces) {
      out.push_back(3);
      for (std::uint32_t idx : f) append_le(out, idx);
    }
  } else {
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& p = mesh.vertices[i];
      append_float(out, p[0]);
      out.push_back(' ');
      append_float(out, p[1]);
      out.push_back(' ');
      append_float(out, p[2]);
      if (with_color) {
        for (std::uint8_t c : mesh.colors[i]) append_text(out, " " + std::to_string(c));
      }
      out.push_back('\n');
    }
    for (const Face& f : mesh.faces) {
      append_text(out, "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n");
    }
  }
  return out;
}

void write_ply_file(const Mesh& mesh, const std::string& path, PlyFormat format) {
  const auto bytes = write_ply(mesh, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ValidationReport validate(const Mesh& mesh) {
  ValidationReport r;
  r.vertex_count = mesh.vertices.size();
  r.face_count = mesh.faces.size();
  r.removed_degenerate = mesh.removed_degenerate;

  if (mesh.vertices.empty()) r.warnings.emplace_back("no vertices");
  if (mesh.faces.empty()) r.warnings.emplace_back("no faces");

  std::size_t bad_index = 0, degenerate = 0;
  std::set<Face> seen;
  std::size_t duplicates = 0;
  std::vector<bool> referenced(mesh.vertices.size(), false);
  for (const Face& f : mesh.faces) {
    if (f[0] >= mesh.vertices.size() || f[1] >= mesh.vertices.size() || f[2] >= mesh.vertices.size()) {
      ++bad_index;
      continue;
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) ++degenerate;
    for (auto i : f) referenced[i] = true;
    Face key = f;
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second) ++duplicates;
  }
  std::size_t non_finite = 0;
  for (const auto& p : mesh.vertices) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) ++non_finite;
  }
  const auto unreferenced = static_cast<std::size_t>(std::count(referenced.begin(), referenced.end(), false));

  if (bad_index) r.warnings.push_back(std::to_string(bad_index) + " faces with out-of-range indices");
  if (degenerate) r.warnings.push_back(std::to_string(degenerate) + " faces with repeated indices");
  if (duplicates) r.warnings.push_back(std::to_string(duplicates) + " duplicate faces");
  if (non_finite) r.warnings.push_back(std::to_string(non_finite) + " non-finite vertices");
  if (!mesh.faces.empty() && unreferenced) {
    r.warnings.push_back(std::to_string(unreferenced) + " unreferenced vertices");
  }
  return r;
}

}  // namespace attrib3d
