#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vrn/mesh.hpp"

namespace vrn {

enum class MeshFormat { obj, ply };

inline MeshFormat format_from_path(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return MeshFormat::obj;
  if (ext == ".ply") return MeshFormat::ply;
  throw ParseError("cannot infer mesh format from extension '" + ext + "'");
}

inline constexpr std::size_t kNumLandmarks = 68;

enum class LandmarkFrame { image, scene };

// Exactly 68 points: 2D pixel coordinates (image frame, z unused) or 3D scene points.
struct LandmarkSet {
  std::array<Vec3, kNumLandmarks> points{};
  LandmarkFrame frame = LandmarkFrame::image;

  Vec2 xy(std::size_t k) const { return points[k].head<2>(); }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("unexpected end of binary data");
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream out(p, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  return out;
}

// OBJ face token "i", "i/t", "i//n" or "i/t/n"; negative indices are relative.
inline std::uint32_t parse_obj_index(const std::string& tok, std::size_t nverts, std::size_t line_no) {
  const auto slash = tok.find('/');
  const std::string head = tok.substr(0, slash);
  long long idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoll(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad face index '" + tok + "'");
  }
  if (idx < 0) idx = static_cast<long long>(nverts) + idx + 1;
  if (idx <= 0) throw IndexError("line " + std::to_string(line_no) + ": face index " + head + " out of range");
  return static_cast<std::uint32_t>(idx - 1);
}

inline Mesh load_obj(const std::filesystem::path& path, bool triangulate) {
  auto in = open_in(path);
  Mesh m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z()))
        throw ParseError("line " + std::to_string(line_no) + ": malformed vertex");
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(parse_obj_index(tok, m.vertices.size(), line_no));
      if (idx.size() < 3) throw ParseError("line " + std::to_string(line_no) + ": face with fewer than 3 vertices");
      if (idx.size() > 3 && !triangulate)
        throw ParseError("line " + std::to_string(line_no) + ": non-triangle face (enable triangulation to fan-split)");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
    // vt, vn, g, o, s, usemtl, mtllib: ignored
  }
  return m;
}

inline void save_obj(const Mesh& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out.precision(17);
  for (const auto& v : m.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : m.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct PlyProperty {
  std::string name;
  std::string type;
  std::string count_type;  // non-empty for list properties
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw ParseError("unknown PLY property type '" + t + "'");
}

inline double ply_read_scalar(std::istream& in, const std::string& t) {
  if (t == "char" || t == "int8") return read_le<std::int8_t>(in);
  if (t == "uchar" || t == "uint8") return read_le<std::uint8_t>(in);
  if (t == "short" || t == "int16") return read_le<std::int16_t>(in);
  if (t == "ushort" || t == "uint16") return read_le<std::uint16_t>(in);
  if (t == "int" || t == "int32") return read_le<std::int32_t>(in);
  if (t == "uint" || t == "uint32") return read_le<std::uint32_t>(in);
  if (t == "float" || t == "float32") return read_le<float>(in);
  if (t == "double" || t == "float64") return read_le<double>(in);
  throw ParseError("unknown PLY property type '" + t + "'");
}

inline Mesh load_ply(const std::filesystem::path& path, bool triangulate) {
  auto in = open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw ParseError("missing 'ply' magic");
  std::vector<PlyElement> elements;
  bool binary_le = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw ParseError("unsupported PLY format '" + fmt + "'");
      binary_le = true;
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError("PLY property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!binary_le) throw ParseError("PLY header lacks a format line");

  Mesh m;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        if (e.props[k].name == "x") ix = int(k);
        if (e.props[k].name == "y") iy = int(k);
        if (e.props[k].name == "z") iz = int(k);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY vertex element lacks x/y/z");
      m.vertices.resize(e.count);
      std::vector<double> vals(e.props.size());
      for (std::size_t i = 0; i < e.count; ++i) {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          if (!e.props[k].count_type.empty()) throw ParseError("list property in PLY vertex element");
          vals[k] = ply_read_scalar(in, e.props[k].type);
        }
        m.vertices[i] = Vec3(vals[ix], vals[iy], vals[iz]);
      }
    } else if (e.name == "face") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (p.count_type.empty()) {
            ply_read_scalar(in, p.type);
            continue;
          }
          const auto n = static_cast<std::size_t>(ply_read_scalar(in, p.count_type));
          std::vector<std::uint32_t> idx(n);
          for (auto& v : idx) {
            const double raw = ply_read_scalar(in, p.type);
            if (raw < 0) throw IndexError("negative PLY face index");
            v = static_cast<std::uint32_t>(raw);
          }
          if (p.name != "vertex_indices" && p.name != "vertex_index") continue;
          if (n < 3) throw ParseError("PLY face with fewer than 3 vertices");
          if (n > 3 && !triangulate) throw ParseError("non-triangle PLY face (enable triangulation to fan-split)");
          for (std::size_t k = 1; k + 1 < n; ++k) m.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i)
        for (const auto& p : e.props) {
          const std::size_t n = p.count_type.empty() ? 1 : std::size_t(ply_read_scalar(in, p.count_type));
          in.ignore(std::streamsize(n * ply_type_size(p.type)));
        }
    }
  }
  return m;
}

inline void save_ply(const Mesh& m, const std::filesystem::path& path) {
  auto out = open_out(path, true);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << m.vertices.size() << "\nproperty double x\nproperty double y\nproperty double z\n"
      << "element face " << m.triangles.size() << "\nproperty list uchar uint vertex_indices\nend_header\n";
  for (const auto& v : m.vertices) {
    write_le(out, v.x());
    write_le(out, v.y());
    write_le(out, v.z());
  }
  for (const auto& t : m.triangles) {
    write_le<std::uint8_t>(out, 3);
    for (auto i : t) write_le<std::uint32_t>(out, i);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& mesh_path) {
  return mesh_path.string() + ".json";
}

}  // namespace detail

struct LoadOptions {
  bool triangulate = false;
};

// Loads and validates a mesh. A sidecar "<path>.json" may declare the scene
// unit ("unit") and the evaluation region ("face_region": vertex indices).
inline Mesh load_mesh(const std::filesystem::path& path, MeshFormat format, LoadOptions opts = {}) {
  if (!std::filesystem::exists(path)) throw IoError("no such file '" + path.string() + "'");
  Mesh m = format == MeshFormat::obj ? detail::load_obj(path, opts.triangulate) : detail::load_ply(path, opts.triangulate);
  const auto side = detail::sidecar_path(path);
  if (std::filesystem::exists(side)) {
    auto in = detail::open_in(side);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad mesh sidecar '" + side.string() + "': " + e.what());
    }
    m.unit = j.value("unit", m.unit);
    if (j.contains("face_region")) {
      m.face_region.assign(m.vertices.size(), 0);
      for (auto idx : j["face_region"].get<std::vector<std::uint32_t>>()) {
        if (idx >= m.vertices.size()) throw IndexError("face_region index out of range in sidecar");
        m.face_region[idx] = 1;
      }
    }
  }
  validate(m);
  return m;
}

inline Mesh load_mesh(const std::filesystem::path& path, LoadOptions opts = {}) {
  return load_mesh(path, format_from_path(path), opts);
}

inline void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  if (mesh.vertices.size() < 3 || mesh.triangles.empty()) throw EmptyMeshError("refusing to save an empty mesh");
  for (const auto& t : mesh.triangles)
    for (auto i : t)
      if (i >= mesh.vertices.size()) throw IndexError("triangle index out of range");
  if (format == MeshFormat::obj)
    detail::save_obj(mesh, path);
  else
    detail::save_ply(mesh, path);
  const auto side = detail::sidecar_path(path);
  if (!mesh.face_region.empty() || mesh.unit != "scene") {
    nlohmann::json j;
    j["unit"] = mesh.unit;
    if (!mesh.face_region.empty()) j["face_region"] = mesh.region_indices();
    auto out = detail::open_out(side);
    out << j.dump() << '\n';
  } else if (std::filesystem::exists(side)) {
    std::filesystem::remove(side);
  }
}

inline void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  save_mesh(mesh, path, format_from_path(path));
}

// One point per row, "x y" or "x y z". Blank lines and '#' comments are skipped.
inline LandmarkSet load_landmarks(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("landmark line " + std::to_string(line_no) + ": non-numeric field '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (row.size() != 2 && row.size() != 3)
      throw ParseError("landmark line " + std::to_string(line_no) + ": expected 2 or 3 coordinates");
    if (!rows.empty() && rows.front().size() != row.size())
      throw ParseError("landmark line " + std::to_string(line_no) + ": mixed 2D/3D rows");
    rows.push_back(std::move(row));
  }
  if (rows.size() != kNumLandmarks)
    throw ParseError("expected " + std::to_string(kNumLandmarks) + " landmark rows, found " + std::to_string(rows.size()));
  LandmarkSet lms;
  lms.frame = rows.front().size() == 3 ? LandmarkFrame::scene : LandmarkFrame::image;
  for (std::size_t k = 0; k < kNumLandmarks; ++k)
    lms.points[k] = Vec3(rows[k][0], rows[k][1], rows[k].size() == 3 ? rows[k][2] : 0.0);
  return lms;
}

inline void save_landmarks(const LandmarkSet& lms, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out.precision(17);
  for (const auto& p : lms.points) {
    out << p.x() << ' ' << p.y();
    if (lms.frame == LandmarkFrame::scene) out << ' ' << p.z();
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace vrn
