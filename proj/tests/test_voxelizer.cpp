#include <chrono>
#include <numbers>

#include "test_util.hpp"
#include "vrn/discretization.hpp"
#include "vrn/voxelizer.hpp"

using namespace vrn;

namespace {

VolumeMeta cube_meta(std::uint32_t n, double half) {
  VolumeMeta m;
  m.width = m.height = m.depth = n;
  m.pixel_pitch = m.depth_pitch = 2 * half / n;
  m.origin = Vec3::Constant(-half);
  return m;
}

// Brute-force oracle: a voxel is occupied iff its center is inside the
// analytic sphere. Only used to bound the mismatch near the surface.
std::size_t analytic_count(const VolumeMeta& m, double r) {
  std::size_t n = 0;
  for (std::size_t d = 0; d < m.depth; ++d)
    for (std::size_t h = 0; h < m.height; ++h)
      for (std::size_t w = 0; w < m.width; ++w) n += m.voxel_center(w, h, d).norm() < r;
  return n;
}

}  // namespace

TEST(Voxelizer, SphereVolumeMatchesAnalytic) {
  const Mesh sphere = make_icosphere(5);
  const VolumeMeta meta = cube_meta(128, 1.2);
  const auto t0 = std::chrono::steady_clock::now();
  VoxelizeStats stats;
  const BinaryVolume v = voxelize(sphere, meta, &stats, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double vol = double(count_occupied(v)) * std::pow(meta.pixel_pitch, 3);
  EXPECT_NEAR(vol / (4.0 / 3.0 * std::numbers::pi), 1.0, 0.02);
  EXPECT_EQ(stats.odd_columns, 0u);
  EXPECT_LT(secs, 5.0);
  // Differs from the analytic center test only within a thin shell.
  const double a = double(analytic_count(meta, 1.0));
  EXPECT_NEAR(double(count_occupied(v)) / a, 1.0, 0.01);
}

TEST(Voxelizer, OccupancyConvergesWithPitch) {
  const Mesh sphere = make_icosphere(6);
  // The tessellation itself encloses slightly less than the analytic ball.
  double prev = 1.0;
  for (std::uint32_t n : {16u, 32u, 64u}) {
    const VolumeMeta meta = cube_meta(n, 1.2);
    const double vol = double(count_occupied(voxelize(sphere, meta))) * std::pow(meta.pixel_pitch, 3);
    const double err = std::abs(vol / (4.0 / 3.0 * std::numbers::pi) - 1.0);
    EXPECT_LT(err, 3.0 * meta.pixel_pitch + 0.01) << n;
    if (n > 16) EXPECT_LT(err, prev) << n;
    prev = err;
  }
}

TEST(Voxelizer, EmptyColumnsStayZero) {
  const Mesh sphere = make_icosphere(3, 0.5);
  const BinaryVolume v = voxelize(sphere, cube_meta(32, 1.2));
  for (std::size_t d = 0; d < 32; ++d) {
    EXPECT_EQ(v.at(0, 0, d), 0);
    EXPECT_EQ(v.at(31, 16, d), 0);
  }
  EXPECT_EQ(v.at(16, 16, 16), 1);
}

TEST(Voxelizer, DefaultShapeIs192x192x200) {
  const VolumeMeta meta;
  EXPECT_EQ(meta.width, 192u);
  EXPECT_EQ(meta.height, 192u);
  EXPECT_EQ(meta.depth, 200u);
  const Mesh sphere = make_icosphere(3);
  const VolumeMeta fitted = fit_meta(sphere, 192, 192, 200);
  const BinaryVolume v = voxelize(sphere, fitted);
  EXPECT_EQ(v.data.size(), 192u * 192u * 200u);
  EXPECT_GT(count_occupied(v), 0u);
}

TEST(Voxelizer, RejectsMeshOutsideDepthWindow) {
  const Mesh sphere = make_icosphere(2);
  VolumeMeta meta = cube_meta(32, 1.2);
  meta.depth = 10;
  EXPECT_THROW(voxelize(sphere, meta), DepthWindowError);
  EXPECT_NO_THROW(voxelize(sphere, center_depth(cube_meta(32, 1.2), sphere)));
}

TEST(Voxelizer, OpenSurfaceIsCountedNotFatal) {
  Mesh tri;
  tri.vertices = {{-1, -1, 0}, {1, -1, 0.1}, {0, 1, 0.2}};
  tri.triangles = {{0, 1, 2}};
  VoxelizeStats stats;
  const BinaryVolume v = voxelize(tri, cube_meta(16, 1.2), &stats);
  EXPECT_GT(stats.odd_columns, 0u);
  EXPECT_EQ(count_occupied(v), 0u);
}

TEST(Voxelizer, SharedEdgesAreCountedOnce) {
  // Columns pass exactly through shared edges and vertices of a cube split
  // into triangles; an exact fill needs each crossing counted once.
  Mesh cube;
  cube.vertices = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, -1, 1}, {1, 1, 1}, {-1, 1, 1}};
  cube.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                    {3, 7, 6}, {3, 6, 2}, {0, 4, 7}, {0, 7, 3}, {1, 2, 6}, {1, 6, 5}};
  VolumeMeta meta;
  meta.width = meta.height = meta.depth = 5;
  meta.pixel_pitch = meta.depth_pitch = 1.0;
  meta.origin = Vec3(-2.5, -2.5, -2.5);  // centers at -2..2, so x=0 hits the diagonal
  VoxelizeStats stats;
  const BinaryVolume v = voxelize(cube, meta, &stats);
  EXPECT_EQ(stats.odd_columns, 0u);
  for (std::size_t h = 0; h < 5; ++h)
    for (std::size_t w = 0; w < 5; ++w) {
      const double x = w - 2.0, y = h - 2.0;
      const bool inside_xy = std::abs(x) < 1 && std::abs(y) < 1;
      // interior column (0,0) covers z in [-1,1): centers -1 and 0
      if (inside_xy) {
        EXPECT_EQ(v.at(w, h, 1), 1);
        EXPECT_EQ(v.at(w, h, 2), 1);
        EXPECT_EQ(v.at(w, h, 3), 0);
      }
    }
}

TEST(Voxelizer, DeterministicAndThreadIndependent) {
  Mesh m = make_icosphere(4, 0.9);
  for (auto& v : m.vertices) v = Vec3(v.x() * 1.1, v.y() * 0.8 + 0.05 * std::sin(7 * v.x()), v.z());
  const VolumeMeta meta = cube_meta(64, 1.2);
  const BinaryVolume a = voxelize(m, meta, nullptr, 1);
  const BinaryVolume b = voxelize(m, meta, nullptr, 1);
  const BinaryVolume c = voxelize(m, meta, nullptr, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Frontalize, IdentityRoundTripAndSingular) {
  const Mesh m = make_icosphere(2, 0.7, Vec3(0.3, 0, 0));
  const Mesh same = frontalize_target(m, RigidTransform{});
  EXPECT_EQ(same.vertices, m.vertices);

  const RigidTransform pose = RigidTransform::from_euler_deg(33, -12, 7, Vec3(0.2, -0.1, 0.5));
  const Mesh back = frontalize_target(transformed(m, pose), pose);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_LE((back.vertices[i] - m.vertices[i]).norm(), 1e-6);

  RigidTransform singular;
  singular.rotation.setZero();
  EXPECT_THROW(frontalize_target(m, singular), SingularTransformError);
}

TEST(Frontalize, NinetyDegreeYawRestoresBoundingBox) {
  Mesh m = make_icosphere(3);
  for (auto& v : m.vertices) v = Vec3(0.6 * v.x(), 0.8 * v.y(), 0.4 * v.z() - 0.2 * std::max(0.0, -v.z()));
  const double pitch = 2.0 / 64;
  const RigidTransform pose = RigidTransform::from_euler_deg(90, 0, 0);
  const Mesh posed = transformed(m, pose);
  const Bounds before = bounds_of(m), turned = bounds_of(posed), after = bounds_of(frontalize_target(posed, pose));
  EXPECT_GT((turned.extent() - before.extent()).norm(), 0.1);
  EXPECT_LE((after.lo - before.lo).cwiseAbs().maxCoeff(), pitch);
  EXPECT_LE((after.hi - before.hi).cwiseAbs().maxCoeff(), pitch);
}

TEST(Discretization, SphereErrorDecreasesWithDensity) {
  const Mesh sphere = make_icosphere(5);
  double prev = std::numeric_limits<double>::infinity();
  for (std::uint32_t n : {32u, 64u, 128u, 256u}) {
    const VolumeMeta meta = cube_meta(n, 1.2);
    const double e = discretization_error(sphere, meta, 1.0);
    EXPECT_LT(e, prev) << n;
    EXPECT_LT(e, 1.5 * meta.pixel_pitch) << n;
    prev = e;
  }
}

TEST(Discretization, FineGridBound) {
  // pitch < 1e-3 of the mesh extent over a narrow window around the poles;
  // the evaluation region is the part of the sphere inside the window.
  Mesh sphere = make_icosphere(7);
  const double pitch = 1.5e-3;
  VolumeMeta meta;
  meta.width = meta.height = 100;
  meta.depth = static_cast<std::uint32_t>(std::ceil(2.1 / pitch));
  meta.pixel_pitch = meta.depth_pitch = pitch;
  meta.origin = Vec3(-0.5 * 100 * pitch, -0.5 * 100 * pitch, -1.05);
  sphere.face_region.assign(sphere.num_vertices(), 0);
  for (std::size_t i = 0; i < sphere.num_vertices(); ++i)
    sphere.face_region[i] = sphere.vertices[i].head<2>().cwiseAbs().maxCoeff() < 30 * pitch;
  ASSERT_GT(sphere.region_indices().size(), 4u);
  const double e = discretization_error(sphere, meta, 1.0);
  EXPECT_LT(e, 1.5 * pitch);
}

TEST(Discretization, SingleVoxelGridIsCoarse) {
  const Mesh sphere = make_icosphere(3);
  const double e = discretization_error(sphere, cube_meta(1, 1.2), 1.0);
  EXPECT_GT(e, 0.05);
  EXPECT_LT(e, 2.0 * 2.0);  // extent / d
}
