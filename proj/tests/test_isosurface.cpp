#include <map>

#include "test_util.hpp"
#include "vrn/isosurface.hpp"
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

// Soft sphere from the analytic signed distance: sigmoid(-(|x| - r) / width).
SoftVolume soft_sphere(const VolumeMeta& m, double r, double width) {
  SoftVolume v(m);
  for (std::size_t d = 0; d < m.depth; ++d)
    for (std::size_t h = 0; h < m.height; ++h)
      for (std::size_t w = 0; w < m.width; ++w) {
        const double sd = m.voxel_center(w, h, d).norm() - r;
        v.at(w, h, d) = static_cast<float>(1.0 / (1.0 + std::exp(sd / width)));
      }
  return v;
}

double rms_radial(const Mesh& m, double r) {
  double s = 0;
  for (const auto& v : m.vertices) s += (v.norm() - r) * (v.norm() - r);
  return std::sqrt(s / double(m.vertices.size()));
}

// Every undirected edge used by exactly two triangles, once in each direction.
bool closed_and_oriented(const Mesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
  for (const auto& [e, n] : directed) {
    if (n != 1) return false;
    auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

double signed_volume(const Mesh& m) {
  double s = 0;
  for (const auto& t : m.triangles) s += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  return s;
}

}  // namespace

TEST(Binarize, BoundaryIsInclusive) {
  SoftVolume v(cube_meta(4, 1), 0.5f);
  const BinaryVolume b = binarize(v, 0.5);
  EXPECT_EQ(count_occupied(b), b.data.size());
  EXPECT_THROW(binarize(v, 0.0), Error);
  EXPECT_THROW(binarize(v, 1.0), Error);
}

TEST(Binarize, BinaryInputIsFixedPoint) {
  const BinaryVolume gt = voxelize(make_icosphere(3), cube_meta(24, 1.2));
  for (double t : {0.1, 0.5, 0.9}) EXPECT_EQ(binarize(to_soft(gt), t), gt);
}

TEST(Binarize, SoftSphereWithinOneVoxelShell) {
  const VolumeMeta m = cube_meta(48, 1.2);
  const BinaryVolume b = binarize(soft_sphere(m, 1.0, m.pixel_pitch), 0.5);
  for (std::size_t d = 0; d < m.depth; ++d)
    for (std::size_t h = 0; h < m.height; ++h)
      for (std::size_t w = 0; w < m.width; ++w) {
        const double r = m.voxel_center(w, h, d).norm();
        if (r < 1.0 - m.pixel_pitch) EXPECT_EQ(b.at(w, h, d), 1);
        if (r > 1.0 + m.pixel_pitch) EXPECT_EQ(b.at(w, h, d), 0);
      }
}

TEST(MarchingCubes, TableIsClosedUnderComplement) {
  const auto& tab = mc::table();
  EXPECT_EQ(tab.count[0], 0);
  EXPECT_EQ(tab.count[255], 0);
  EXPECT_EQ(tab.count[1], 1);
  for (int cs = 1; cs < 255; ++cs) EXPECT_GT(tab.count[cs], 0) << cs;
}

TEST(MarchingCubes, EveryCaseGivesClosedSurfaceInIsolation) {
  // One configuration per case inside a 4x4x4 grid padded with zeros: the
  // inner cell carries the case; neighbouring cells close it off.
  for (int cs = 1; cs < 256; ++cs) {
    VolumeMeta m = cube_meta(4, 2);
    SoftVolume v(m, 0.0f);
    for (int k = 0; k < 8; ++k) {
      const auto& c = mc::kCorner[k];
      v.at(1 + c[0], 1 + c[1], 1 + c[2]) = (cs >> k) & 1 ? 1.0f : 0.0f;
    }
    const Mesh s = extract_isosurface(v, 0.5);
    EXPECT_TRUE(closed_and_oriented(s)) << cs;
    EXPECT_GT(signed_volume(s), 0.0) << cs;
  }
}

TEST(MarchingCubes, SoftSphereVerticesNearAnalytic) {
  const VolumeMeta m = cube_meta(40, 1.2);
  const Mesh s = extract_isosurface(soft_sphere(m, 1.0, m.pixel_pitch), 0.5);
  for (const auto& v : s.vertices) EXPECT_LE(std::abs(v.norm() - 1.0), m.pixel_pitch);
  EXPECT_TRUE(closed_and_oriented(s));
  EXPECT_GT(signed_volume(s), 0.0);
}

TEST(MarchingCubes, ConstantVolumeHasNoSurface) {
  SoftVolume v(cube_meta(8, 1), 0.3f);
  EXPECT_THROW(extract_isosurface(v, 0.5), EmptySurfaceError);
  EXPECT_THROW(extract_isosurface(v, 0.3), EmptySurfaceError);
}

TEST(MarchingCubes, SoftBeatsHardOnSphere) {
  const VolumeMeta m = cube_meta(40, 1.2);
  const SoftVolume soft = soft_sphere(m, 1.0, m.pixel_pitch);
  const Mesh from_soft = extract_isosurface(soft, 0.5);
  const Mesh from_hard = extract_isosurface(to_soft(binarize(soft, 0.5)), 0.5);
  EXPECT_LT(rms_radial(from_soft, 1.0), rms_radial(from_hard, 1.0));
}

TEST(MarchingCubes, PaddingDoesNotMoveTheSurface) {
  const VolumeMeta m = cube_meta(24, 1.2);
  const SoftVolume v = soft_sphere(m, 0.8, m.pixel_pitch);
  auto sorted = [](Mesh s) {
    std::sort(s.vertices.begin(), s.vertices.end(),
              [](const Vec3& a, const Vec3& b) { return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3); });
    return s.vertices;
  };
  const auto a = sorted(extract_isosurface(v, 0.5));
  const auto b = sorted(extract_isosurface(pad_volume<float>(v, 2, 0.0f), 0.5));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE((a[i] - b[i]).norm(), 1e-9);
}

TEST(MarchingCubes, Deterministic) {
  const VolumeMeta m = cube_meta(20, 1.2);
  const SoftVolume v = soft_sphere(m, 0.9, m.pixel_pitch);
  const Mesh a = extract_isosurface(v, 0.5), b = extract_isosurface(v, 0.5);
  EXPECT_EQ(a.vertices, b.vertices);
  EXPECT_EQ(a.triangles, b.triangles);
}

TEST(VolumeIo, Vxv1RoundTripAndLayout) {
  vrn::test::TempDir dir;
  VolumeMeta m;
  m.width = 3;
  m.height = 2;
  m.depth = 4;
  m.pixel_pitch = 0.25;
  m.depth_pitch = 0.5;
  m.origin = Vec3(1, 2, 3);
  BinaryVolume b(m, 0);
  b.at(2, 1, 3) = 1;
  vxv::write(b, dir / "b.vxv");
  EXPECT_EQ(vxv::read<std::uint8_t>(dir / "b.vxv"), b);
  EXPECT_EQ(std::filesystem::file_size(dir / "b.vxv"), 4 + 12 + 1 + 24 + 56u);
  std::ifstream in(dir / "b.vxv", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VXV1");
  EXPECT_EQ(bytes[16], 0);                        // dtype
  EXPECT_EQ(bytes[17 + (3 * 2 + 1) * 3 + 2], 1);  // (d*H + h)*W + w

  SoftVolume s(m, 0.25f);
  s.at(0, 1, 2) = 0.75f;
  vxv::write(s, dir / "s.vxv");
  EXPECT_EQ(vxv::read<float>(dir / "s.vxv"), s);
  EXPECT_THROW(vxv::read<float>(dir / "missing.vxv"), IoError);
}
