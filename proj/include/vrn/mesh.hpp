#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vrn {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Triangle = std::array<std::uint32_t, 3>;

// Base for every error raised by the library; the CLI maps it to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct EmptyMeshError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Triangle mesh in scene units.
//
// face_region is either empty (every vertex is evaluated) or holds one flag
// per vertex marking the evaluation region used by the error metric.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::vector<std::uint8_t> face_region;
  std::string unit = "scene";

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
  bool empty() const { return vertices.empty() || triangles.empty(); }

  bool in_region(std::size_t v) const { return face_region.empty() || face_region[v] != 0; }

  std::vector<std::uint32_t> region_indices() const {
    std::vector<std::uint32_t> out;
    out.reserve(vertices.size());
    for (std::size_t i = 0; i < vertices.size(); ++i)
      if (in_region(i)) out.push_back(static_cast<std::uint32_t>(i));
    return out;
  }
};

struct Bounds {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

inline Bounds bounds_of(std::span<const Vec3> pts) {
  Bounds b;
  for (const auto& p : pts) b.extend(p);
  return b;
}

inline Bounds bounds_of(const Mesh& m) { return bounds_of(m.vertices); }

inline double triangle_area(const Mesh& m, const Triangle& t) {
  const Vec3& a = m.vertices[t[0]];
  return 0.5 * (m.vertices[t[1]] - a).cross(m.vertices[t[2]] - a).norm();
}

// Checks the structural invariants. Degenerate triangles are removed when
// drop_degenerate is set, otherwise they are left alone.
inline void validate(Mesh& m, bool drop_degenerate = true) {
  if (m.vertices.size() < 3 || m.triangles.empty())
    throw EmptyMeshError("mesh is empty (needs >= 3 vertices and >= 1 triangle)");
  const auto n = m.vertices.size();
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    for (auto idx : m.triangles[i])
      if (idx >= n)
        throw IndexError("triangle " + std::to_string(i) + " references vertex " + std::to_string(idx) +
                         " but mesh has " + std::to_string(n) + " vertices");
  }
  if (!m.face_region.empty() && m.face_region.size() != n)
    throw Error("face_region mask has " + std::to_string(m.face_region.size()) + " entries for " +
                std::to_string(n) + " vertices");
  if (drop_degenerate) {
    std::erase_if(m.triangles, [&](const Triangle& t) {
      return t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || triangle_area(m, t) == 0.0;
    });
    if (m.triangles.empty()) throw EmptyMeshError("mesh has no non-degenerate triangles");
  }
}

// Rigid transform p -> R p + t.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  RigidTransform then(const RigidTransform& next) const {
    RigidTransform out;
    out.rotation = next.rotation * rotation;
    out.translation = next.rotation * translation + next.translation;
    return out;
  }

  // Rotation angle in radians.
  double angle() const {
    const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
  }

  static RigidTransform from_euler_deg(double yaw, double pitch, double roll, const Vec3& t = Vec3::Zero()) {
    constexpr double k = 3.14159265358979323846 / 180.0;
    RigidTransform out;
    out.rotation = (Eigen::AngleAxisd(roll * k, Vec3::UnitZ()) * Eigen::AngleAxisd(yaw * k, Vec3::UnitY()) *
                    Eigen::AngleAxisd(pitch * k, Vec3::UnitX()))
                       .toRotationMatrix();
    out.translation = t;
    return out;
  }
};

inline Mesh transformed(const Mesh& m, const RigidTransform& tf) {
  Mesh out = m;
  for (auto& v : out.vertices) v = tf.apply(v);
  return out;
}

// Geodesic sphere built by subdividing an icosahedron; 20 * 4^level triangles.
inline Mesh make_icosphere(int level, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::vector<Triangle> next;
    next.reserve(m.triangles.size() * 4);
    std::unordered_map<std::uint64_t, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const std::uint64_t key = (std::uint64_t(std::min(a, b)) << 32) | std::max(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(m.vertices.size() - 1);
      midpoints.emplace(key, idx);
      return idx;
    };
    for (const auto& t : m.triangles) {
      const auto ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v = center + radius * v;
  return m;
}

}  // namespace vrn
