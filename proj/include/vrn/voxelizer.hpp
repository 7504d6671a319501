#pragma once

#include <atomic>
#include <cmath>

#include "vrn/parallel.hpp"
#include "vrn/raster.hpp"
#include "vrn/volume.hpp"

namespace vrn {

struct DepthWindowError : Error { using Error::Error; };
struct SingularTransformError : Error { using Error::Error; };

struct VoxelizeStats {
  // Columns whose ray crossed the surface an odd number of times; the last
  // crossing is dropped in each.
  std::size_t odd_columns = 0;
};

// Isotropic volume whose xy window frames the mesh with a relative margin,
// with the depth window centered on the mesh z-extent.
inline VolumeMeta fit_meta(const Mesh& mesh, std::uint32_t w, std::uint32_t h, std::uint32_t d, double margin = 0.1) {
  const Bounds b = bounds_of(mesh);
  const double span = std::max(b.extent().x(), b.extent().y()) * (1.0 + 2.0 * margin);
  VolumeMeta m;
  m.width = w;
  m.height = h;
  m.depth = d;
  m.pixel_pitch = span / std::max(w, h);
  m.depth_pitch = m.pixel_pitch;
  const Vec3 c = b.center();
  m.origin = Vec3(c.x() - 0.5 * w * m.pixel_pitch, c.y() - 0.5 * h * m.pixel_pitch, c.z() - 0.5 * d * m.depth_pitch);
  return m;
}

// Re-centers the depth window on the mesh z-extent, keeping the xy framing.
inline VolumeMeta center_depth(VolumeMeta m, const Mesh& mesh) {
  const Bounds b = bounds_of(mesh);
  m.origin.z() = b.center().z() - 0.5 * m.depth * m.depth_pitch;
  return m;
}

// Solid even-odd fill: a ray along +z through every column center is
// intersected with all triangles; sorted crossings are paired and voxels
// whose centers lie in [z_enter, z_exit) are set.
inline BinaryVolume voxelize(const Mesh& mesh, const VolumeMeta& meta, VoxelizeStats* stats = nullptr,
                             unsigned threads = num_threads()) {
  meta.check();
  if (mesh.empty()) throw EmptyMeshError("cannot voxelize an empty mesh");
  const Bounds b = bounds_of(mesh);
  if (b.lo.z() < meta.depth_min() || b.hi.z() >= meta.depth_max())
    throw DepthWindowError("mesh z-extent [" + std::to_string(b.lo.z()) + ", " + std::to_string(b.hi.z()) +
                           "] exceeds depth window [" + std::to_string(meta.depth_min()) + ", " +
                           std::to_string(meta.depth_max()) + ")");

  const double p = meta.pixel_pitch;
  const Vec3& o = meta.origin;
  // Column index range whose centers may fall inside [lo, hi] along one axis.
  auto column_range = [&](double lo, double hi, double org, std::uint32_t n) {
    const long first = std::max(0L, static_cast<long>(std::ceil((lo - org) / p - 0.5)));
    const long last = std::min(static_cast<long>(n) - 1, static_cast<long>(std::floor((hi - org) / p - 0.5)));
    return std::pair{first, last};
  };

  std::vector<std::vector<std::uint32_t>> rows(meta.height);
  for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const double y0 = std::min({mesh.vertices[tri[0]].y(), mesh.vertices[tri[1]].y(), mesh.vertices[tri[2]].y()});
    const double y1 = std::max({mesh.vertices[tri[0]].y(), mesh.vertices[tri[1]].y(), mesh.vertices[tri[2]].y()});
    const auto [h0, h1] = column_range(y0, y1, o.y(), meta.height);
    for (long h = h0; h <= h1; ++h) rows[h].push_back(t);
  }

  BinaryVolume vol(meta, 0);
  std::atomic<std::size_t> odd{0};
  parallel_for(
      meta.height,
      [&](std::size_t h) {
        std::vector<std::vector<double>> cols(meta.width);
        const double yc = o.y() + (h + 0.5) * p;
        for (auto t : rows[h]) {
          const auto& tri = mesh.triangles[t];
          const Vec3 &a = mesh.vertices[tri[0]], &bb = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
          const auto [w0, w1] =
              column_range(std::min({a.x(), bb.x(), c.x()}), std::max({a.x(), bb.x(), c.x()}), o.x(), meta.width);
          for (long w = w0; w <= w1; ++w) {
            const Vec2 q(o.x() + (w + 0.5) * p, yc);
            if (auto hit = raster::cover(a, bb, c, q)) cols[w].push_back(hit->z);
          }
        }
        std::size_t local_odd = 0;
        for (std::uint32_t w = 0; w < meta.width; ++w) {
          auto& zs = cols[w];
          if (zs.empty()) continue;
          std::sort(zs.begin(), zs.end());
          if (zs.size() % 2 == 1) {
            zs.pop_back();
            ++local_odd;
          }
          for (std::size_t i = 0; i + 1 < zs.size(); i += 2) {
            const double d0 = std::ceil((zs[i] - o.z()) / meta.depth_pitch - 0.5);
            const double d1 = std::ceil((zs[i + 1] - o.z()) / meta.depth_pitch - 0.5);
            const long first = std::max(0L, static_cast<long>(d0));
            const long end = std::min(static_cast<long>(meta.depth), static_cast<long>(d1));
            for (long d = first; d < end; ++d) vol.at(w, h, d) = 1;
          }
        }
        odd += local_odd;
      },
      threads);
  if (stats) stats->odd_columns = odd.load();
  return vol;
}

// Removes a pose from a mesh: v -> R^-1 (v - t). Used to build the
// fixed-orientation target of the no-alignment variant.
inline Mesh frontalize_target(const Mesh& mesh, const RigidTransform& pose) {
  const double det = pose.rotation.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) throw SingularTransformError("pose is not invertible");
  const Eigen::Matrix3d inv = pose.rotation.inverse();
  Mesh out = mesh;
  for (auto& v : out.vertices) v = inv * (v - pose.translation);
  return out;
}

}  // namespace vrn
