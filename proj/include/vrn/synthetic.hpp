#pragma once

#include <map>
#include <random>

#include "vrn/guidance.hpp"
#include "vrn/voxelizer.hpp"

namespace vrn {

// Procedural head: a displaced ellipsoid seen by an orthographic camera
// looking along +z. Scene axes: x right, y down, z away from the camera.
// In the canonical pose the face points to -z.
struct SyntheticFaceSpec {
  Vec3 radii{0.58, 0.72, 0.58};
  double nose = 0.22;        // tip height, relative to the radius
  double brow = 0.05;
  double chin = 0.06;
  double cheek = 0.04;
  double expression = 0.0;   // 0 closed mouth, 1 open
  double yaw = 0, pitch = 0, roll = 0;  // degrees
  Vec2 shift{0, 0};          // in-plane translation, scene units
  std::array<double, 3> skin{0.86, 0.67, 0.55};
  int mesh_level = 5;
};

struct SyntheticRanges {
  double max_yaw = 80, max_pitch = 15, max_roll = 15;
  double max_shift = 0.06;
  double radius_jitter = 0.12;
  double nose_min = 0.12, nose_max = 0.32;
  double brow_min = 0.02, brow_max = 0.08;
  double chin_min = 0.02, chin_max = 0.10;
  double cheek_min = 0.0, cheek_max = 0.08;
};

inline SyntheticFaceSpec random_face_spec(std::uint64_t seed, const SyntheticRanges& r = {}) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SyntheticFaceSpec s;
  // Depth follows width: an independent depth radius could not be read off a
  // frontal image.
  const double jx = uni(-r.radius_jitter, r.radius_jitter), jy = uni(-r.radius_jitter, r.radius_jitter);
  s.radii = Vec3(s.radii.x() * (1 + jx), s.radii.y() * (1 + jy), s.radii.z() * (1 + jx));
  s.nose = uni(r.nose_min, r.nose_max);
  s.brow = uni(r.brow_min, r.brow_max);
  s.chin = uni(r.chin_min, r.chin_max);
  s.cheek = uni(r.cheek_min, r.cheek_max);
  s.expression = uni(0, 1);
  s.yaw = uni(-r.max_yaw, r.max_yaw);
  s.pitch = uni(-r.max_pitch, r.max_pitch);
  s.roll = uni(-r.max_roll, r.max_roll);
  s.shift = Vec2(uni(-r.max_shift, r.max_shift), uni(-r.max_shift, r.max_shift));
  const double tone = uni(0.75, 1.0);
  s.skin = {0.86 * tone, 0.67 * tone * uni(0.9, 1.05), 0.55 * tone * uni(0.85, 1.1)};
  return s;
}

namespace synth {

// Face-plane coordinates (X right, Y up) of the 68 landmarks on the unit
// sphere; index layout follows the common 68-point markup.
inline std::array<Vec2, kNumLandmarks> landmark_layout() {
  std::array<Vec2, kNumLandmarks> p;
  constexpr double deg = 3.14159265358979323846 / 180.0;
  for (int k = 0; k <= 16; ++k) {
    const double a = (-100.0 + 12.5 * k) * deg;
    p[k] = {0.92 * std::sin(a), -0.05 - 0.80 * std::cos(a)};
  }
  for (int j = 0; j < 5; ++j) {
    const double arch = 0.38 + 0.06 * std::sin(3.14159265358979323846 * (j + 0.5) / 5.0);
    p[17 + j] = {-0.62 + 0.1125 * j, arch};
    p[26 - j] = {0.62 - 0.1125 * j, arch};
  }
  const double bridge[4] = {0.22, 0.10, -0.02, -0.14};
  for (int j = 0; j < 4; ++j) p[27 + j] = {0.0, bridge[j]};
  const double nx[5] = {-0.16, -0.08, 0.0, 0.08, 0.16}, ny[5] = {-0.24, -0.26, -0.27, -0.26, -0.24};
  for (int j = 0; j < 5; ++j) p[31 + j] = {nx[j], ny[j]};
  const Vec2 eye[6] = {{-0.51, 0.2}, {-0.41, 0.25}, {-0.31, 0.25}, {-0.21, 0.2}, {-0.31, 0.15}, {-0.41, 0.15}};
  for (int j = 0; j < 6; ++j) p[36 + j] = eye[j];
  // Right eye mirrors the left: 42..47 <- 39,38,37,36,41,40.
  const int mirror[6] = {39, 38, 37, 36, 41, 40};
  for (int j = 0; j < 6; ++j) p[42 + j] = {-eye[mirror[j] - 36].x(), eye[mirror[j] - 36].y()};
  const Vec2 outer[12] = {{-0.28, -0.46}, {-0.18, -0.40}, {-0.08, -0.37}, {0.0, -0.38}, {0.08, -0.37}, {0.18, -0.40},
                          {0.28, -0.46},  {0.18, -0.53},  {0.08, -0.56},  {0.0, -0.57}, {-0.08, -0.56}, {-0.18, -0.53}};
  for (int j = 0; j < 12; ++j) p[48 + j] = outer[j];
  const Vec2 inner[8] = {{-0.22, -0.46}, {-0.09, -0.43}, {0.0, -0.43}, {0.09, -0.43},
                         {0.22, -0.46},  {0.09, -0.49},  {0.0, -0.49}, {-0.09, -0.49}};
  for (int j = 0; j < 8; ++j) p[60 + j] = inner[j];
  return p;
}

// Unit direction in scene axes for a face-plane point.
inline Vec3 face_direction(const Vec2& q) {
  return Vec3(q.x(), -q.y(), -std::sqrt(std::max(0.0, 1.0 - q.squaredNorm())));
}

struct Bump {
  Vec2 at;
  double amp, wx, wy;
};

inline double bump(const Vec2& q, const Bump& b) {
  const double dx = (q.x() - b.at.x()) / b.wx, dy = (q.y() - b.at.y()) / b.wy;
  return b.amp * std::exp(-0.5 * (dx * dx + dy * dy));
}

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

// Per-vertex albedo from face-plane position and frontness.
inline Vec3 albedo(const SyntheticFaceSpec& s, const Vec2& q, double front) {
  const Vec3 skin(s.skin[0], s.skin[1], s.skin[2]);
  const Vec3 hair(0.22, 0.15, 0.10);
  double dark = 0;
  for (double sx : {-1.0, 1.0}) {
    dark = std::max(dark, bump(q, {{sx * 0.36, 0.2}, 0.75, 0.09, 0.04}));
    dark = std::max(dark, bump(q, {{sx * 0.4, 0.38}, 0.6, 0.15, 0.035}));
  }
  Vec3 c = skin * (1.0 - dark);
  const double lip = bump(q, {{0.0, -0.465}, 1.0, 0.2, 0.06});
  c = c.cwiseProduct(Vec3(1.0, 1.0 - 0.45 * lip, 1.0 - 0.4 * lip));
  // Hair above the forehead and around the back.
  const double h = std::max(smoothstep(0.5, 0.62, q.y()) * smoothstep(-0.3, 0.0, front), smoothstep(0.15, -0.15, front));
  return (1 - h) * c + h * hair;
}

}  // namespace synth

struct SyntheticFace {
  Mesh mesh;                       // posed, scene coordinates, face region set
  Mesh canonical;                  // same topology before the pose
  std::vector<Vec3> albedo;        // per vertex
  std::array<std::uint32_t, kNumLandmarks> landmark_vertices{};
  RigidTransform pose;

  std::uint32_t left_eye_outer() const { return landmark_vertices[36]; }
  std::uint32_t right_eye_outer() const { return landmark_vertices[45]; }
};

inline SyntheticFace build_face(const SyntheticFaceSpec& s) {
  if ((s.radii.array() <= 0).any()) throw Error("synthetic face radii must be > 0");
  if (std::abs(s.yaw) > 90) throw Error("synthetic face |yaw| must be <= 90 degrees");
  using namespace synth;
  SyntheticFace f;
  f.canonical = make_icosphere(s.mesh_level);
  const std::size_t n = f.canonical.vertices.size();

  const std::vector<Bump> bumps = {
      {{0.0, 0.05}, 0.45 * s.nose, 0.06, 0.15},    // bridge
      {{0.0, -0.17}, s.nose, 0.08, 0.08},          // tip
      {{-0.4, 0.36}, s.brow, 0.16, 0.05},
      {{0.4, 0.36}, s.brow, 0.16, 0.05},
      {{-0.36, 0.2}, -0.05, 0.12, 0.07},           // eye sockets
      {{0.36, 0.2}, -0.05, 0.12, 0.07},
      {{-0.45, -0.15}, s.cheek, 0.15, 0.15},
      {{0.45, -0.15}, s.cheek, 0.15, 0.15},
      {{0.0, -0.40}, 0.03, 0.14, 0.03},            // upper lip
      {{0.0, -0.53 - 0.03 * s.expression}, 0.03, 0.14, 0.03},
      {{0.0, -0.465}, -(0.025 + 0.08 * s.expression), 0.2, 0.02 + 0.04 * s.expression},
      {{0.0, -0.72}, s.chin, 0.12, 0.1},
  };

  // Landmarks sit at fixed vertices chosen on the undeformed unit sphere.
  const auto layout = landmark_layout();
  for (int k = 0; k < kNumLandmarks; ++k) {
    const Vec3 dir = face_direction(layout[k]);
    std::uint32_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (f.canonical.vertices[i] - dir).squaredNorm();
      if (d < bd) {
        bd = d;
        best = std::uint32_t(i);
      }
    }
    f.landmark_vertices[k] = best;
  }

  f.albedo.resize(n);
  f.canonical.face_region.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = f.canonical.vertices[i];
    const Vec2 q(u.x(), -u.y());
    const double front = -u.z();
    double r = 1.0;
    if (front > 0) {
      const double gate = smoothstep(0.0, 0.35, front);
      for (const auto& b : bumps) r += gate * bump(q, b);
    }
    f.canonical.vertices[i] = r * u.cwiseProduct(s.radii);
    f.albedo[i] = albedo(s, q, front);
    f.canonical.face_region[i] = front > 0.3 && q.y() < 0.55 && std::abs(q.x()) < 0.85;
  }

  f.pose = RigidTransform::from_euler_deg(s.yaw, s.pitch, s.roll, Vec3(s.shift.x(), s.shift.y(), 0.0));
  f.mesh = transformed(f.canonical, f.pose);
  return f;
}

// Scene frame shared by every synthetic sample: x,y in [-1,1] mapped onto
// the image, z in [-1,1] onto `depth` slices.
inline VolumeMeta synthetic_meta(std::uint32_t size, std::uint32_t depth) {
  VolumeMeta m;
  m.width = m.height = size;
  m.depth = depth;
  m.pixel_pitch = 2.0 / size;
  m.depth_pitch = 2.0 / depth;
  m.origin = Vec3(-1, -1, -1);
  return m;
}

// Pixel coordinates (u right, v down; integer u at pixel centers) of a scene
// point, keeping z.
inline Vec3 scene_to_image(const VolumeMeta& m, const Vec3& p) {
  return Vec3((p.x() - m.origin.x()) / m.pixel_pitch - 0.5, (p.y() - m.origin.y()) / m.pixel_pitch - 0.5, p.z());
}

struct RenderResult {
  Image image;
  std::vector<std::uint8_t> coverage;  // 1 where a pixel center hits the mesh
};

// Orthographic z-buffer render with Lambertian shading from a light near the
// camera; background is black.
inline RenderResult render_lambertian(const Mesh& mesh, const std::vector<Vec3>& albedo, const VolumeMeta& meta) {
  const int W = int(meta.width), H = int(meta.height);
  const double p = meta.pixel_pitch;
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (const auto& t : mesh.triangles) {
    const Vec3 fn = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto i : t) normals[i] += fn;
  }
  for (auto& nrm : normals) nrm.normalize();

  std::vector<double> zbuf(std::size_t(W) * H, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> tri(std::size_t(W) * H, -1);
  std::vector<Vec3> bary(std::size_t(W) * H);
  for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
    const auto& t = mesh.triangles[ti];
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    const double lo_x = std::min({a.x(), b.x(), c.x()}), hi_x = std::max({a.x(), b.x(), c.x()});
    const double lo_y = std::min({a.y(), b.y(), c.y()}), hi_y = std::max({a.y(), b.y(), c.y()});
    const int u0 = std::max(0, int(std::ceil((lo_x - meta.origin.x()) / p - 0.5)));
    const int u1 = std::min(W - 1, int(std::floor((hi_x - meta.origin.x()) / p - 0.5)));
    const int v0 = std::max(0, int(std::ceil((lo_y - meta.origin.y()) / p - 0.5)));
    const int v1 = std::min(H - 1, int(std::floor((hi_y - meta.origin.y()) / p - 0.5)));
    for (int v = v0; v <= v1; ++v)
      for (int u = u0; u <= u1; ++u) {
        const Vec2 q(meta.origin.x() + (u + 0.5) * p, meta.origin.y() + (v + 0.5) * p);
        const auto hit = raster::cover(a, b, c, q);
        if (!hit) continue;
        const std::size_t k = std::size_t(v) * W + u;
        if (hit->z < zbuf[k]) {
          zbuf[k] = hit->z;
          tri[k] = std::int64_t(ti);
          bary[k] = Vec3(hit->b0, hit->b1, hit->b2);
        }
      }
  }

  const Vec3 light = Vec3(-0.3, -0.4, -1.0).normalized();
  RenderResult out{Image(W, H), std::vector<std::uint8_t>(std::size_t(W) * H, 0)};
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const std::size_t k = std::size_t(v) * W + u;
      if (tri[k] < 0) continue;
      const auto& t = mesh.triangles[std::size_t(tri[k])];
      const Vec3& w = bary[k];
      const Vec3 nrm = (w[0] * normals[t[0]] + w[1] * normals[t[1]] + w[2] * normals[t[2]]).normalized();
      const Vec3 alb = w[0] * albedo[t[0]] + w[1] * albedo[t[1]] + w[2] * albedo[t[2]];
      const double shade = 0.25 + 0.75 * std::max(0.0, nrm.dot(light));
      for (int c = 0; c < 3; ++c) out.image.at(c, u, v) = static_cast<float>(std::clamp(alb[c] * shade, 0.0, 1.0));
      out.coverage[k] = 1;
    }
  return out;
}

struct SyntheticSample {
  Image image;
  BinaryVolume volume;           // aligned with the image
  BinaryVolume frontal_volume;   // canonical orientation, pose removed
  LandmarkSet landmarks;         // image frame: pixel u, v and scene z
  SyntheticFace face;
  std::map<std::string, std::string> tags;
};

inline std::string yaw_bucket(double yaw) {
  const double a = std::abs(yaw);
  if (a < 15) return "00-15";
  if (a < 45) return "15-45";
  if (a < 70) return "45-70";
  return "70-90";
}

// Throws DepthWindowError when the posed head leaves the depth window.
inline SyntheticSample generate_synthetic(const SyntheticFaceSpec& spec, const VolumeMeta& meta) {
  meta.check();
  SyntheticSample s;
  s.face = build_face(spec);
  s.image = render_lambertian(s.face.mesh, s.face.albedo, meta).image;
  s.volume = voxelize(s.face.mesh, meta, nullptr, 1);
  s.frontal_volume = voxelize(s.face.canonical, meta, nullptr, 1);
  s.landmarks.frame = LandmarkFrame::image;
  for (int k = 0; k < kNumLandmarks; ++k)
    s.landmarks.points[k] = scene_to_image(meta, s.face.mesh.vertices[s.face.landmark_vertices[k]]);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f", spec.yaw);
  s.tags["yaw"] = buf;
  std::snprintf(buf, sizeof buf, "%.0f", std::abs(spec.yaw));
  s.tags["abs_yaw"] = buf;
  s.tags["yaw_bucket"] = yaw_bucket(spec.yaw);
  std::snprintf(buf, sizeof buf, "%.2f", spec.expression);
  s.tags["expression"] = buf;
  return s;
}

}  // namespace vrn
