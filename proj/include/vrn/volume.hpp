#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "vrn/mesh.hpp"
#include "vrn/mesh_io.hpp"

namespace vrn {

// Image <-> volume alignment. Voxel (w,h,d) covers
//   [origin + (w,h,d) * pitch, origin + (w+1,h+1,d+1) * pitch)
// with pixel_pitch along x/y and depth_pitch along z, so image pixel (u,v)
// is voxel column (w=u, h=v).
struct VolumeMeta {
  std::uint32_t width = 192;
  std::uint32_t height = 192;
  std::uint32_t depth = 200;
  double pixel_pitch = 1.0;
  double depth_pitch = 1.0;
  Vec3 origin = Vec3::Zero();

  std::size_t size() const { return std::size_t(width) * height * depth; }
  std::size_t index(std::size_t w, std::size_t h, std::size_t d) const { return (d * height + h) * width + w; }

  Vec3 voxel_center(double w, double h, double d) const {
    return origin + Vec3((w + 0.5) * pixel_pitch, (h + 0.5) * pixel_pitch, (d + 0.5) * depth_pitch);
  }
  double depth_min() const { return origin.z(); }
  double depth_max() const { return origin.z() + depth * depth_pitch; }

  void check() const {
    if (width < 1 || height < 1 || depth < 1) throw Error("volume dimensions must be >= 1");
    if (!(pixel_pitch > 0) || !(depth_pitch > 0)) throw Error("volume pitches must be > 0");
  }

  bool operator==(const VolumeMeta&) const = default;
};

template <typename T>
struct Volume {
  VolumeMeta meta;
  std::vector<T> data;

  Volume() = default;
  explicit Volume(const VolumeMeta& m, T fill = T{}) : meta(m), data(m.size(), fill) {}

  T& at(std::size_t w, std::size_t h, std::size_t d) { return data[meta.index(w, h, d)]; }
  const T& at(std::size_t w, std::size_t h, std::size_t d) const { return data[meta.index(w, h, d)]; }

  bool operator==(const Volume&) const = default;
};

// Occupancy in {0,1}.
using BinaryVolume = Volume<std::uint8_t>;
// Per-voxel occupancy probability in [0,1].
using SoftVolume = Volume<float>;

inline std::size_t count_occupied(const BinaryVolume& v) {
  std::size_t n = 0;
  for (auto b : v.data) n += b != 0;
  return n;
}

inline SoftVolume to_soft(const BinaryVolume& v) {
  SoftVolume out(v.meta);
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = v.data[i] ? 1.0f : 0.0f;
  return out;
}

// Soft intersection-over-union: sum(p*q) / sum(p + q - p*q).
inline double soft_iou(const SoftVolume& pred, const BinaryVolume& target) {
  if (pred.data.size() != target.data.size()) throw Error("soft_iou: volume size mismatch");
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p = pred.data[i], q = target.data[i];
    inter += p * q;
    uni += p + q - p * q;
  }
  return uni > 0 ? inter / uni : 1.0;
}

// Adds a shell of `pad` voxels with value `fill` on every side, shifting the
// origin so existing voxels keep their scene positions.
template <typename T>
Volume<T> pad_volume(const Volume<T>& v, std::uint32_t pad, T fill = T{}) {
  VolumeMeta m = v.meta;
  m.width += 2 * pad;
  m.height += 2 * pad;
  m.depth += 2 * pad;
  m.origin -= Vec3(pad * m.pixel_pitch, pad * m.pixel_pitch, pad * m.depth_pitch);
  Volume<T> out(m, fill);
  for (std::size_t d = 0; d < v.meta.depth; ++d)
    for (std::size_t h = 0; h < v.meta.height; ++h)
      for (std::size_t w = 0; w < v.meta.width; ++w) out.at(w + pad, h + pad, d + pad) = v.at(w, h, d);
  return out;
}

// VXV1: "VXV1", u32 W, u32 H, u32 D, u8 dtype (0 = u8, 1 = f32), payload in
// ((d*H + h)*W + w) order, then 7 f64: pixel_pitch, depth_pitch, origin xyz, 0, 0.
namespace vxv {

inline constexpr char kMagic[4] = {'V', 'X', 'V', '1'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, std::uint8_t>)
    return 0;
  else {
    static_assert(std::is_same_v<T, float>, "VXV1 stores u8 or f32 payloads");
    return 1;
  }
}

template <typename T>
void write(const Volume<T>& v, const std::filesystem::path& path) {
  auto out = detail::open_out(path, true);
  out.write(kMagic, 4);
  detail::write_le<std::uint32_t>(out, v.meta.width);
  detail::write_le<std::uint32_t>(out, v.meta.height);
  detail::write_le<std::uint32_t>(out, v.meta.depth);
  detail::write_le<std::uint8_t>(out, dtype_code<T>());
  out.write(reinterpret_cast<const char*>(v.data.data()), std::streamsize(v.data.size() * sizeof(T)));
  for (double x : {v.meta.pixel_pitch, v.meta.depth_pitch, v.meta.origin.x(), v.meta.origin.y(), v.meta.origin.z(), 0.0, 0.0})
    detail::write_le<double>(out, x);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct Header {
  VolumeMeta meta;
  std::uint8_t dtype = 0;
};

inline Header read_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a VXV1 file");
  Header h;
  h.meta.width = detail::read_le<std::uint32_t>(in);
  h.meta.height = detail::read_le<std::uint32_t>(in);
  h.meta.depth = detail::read_le<std::uint32_t>(in);
  h.dtype = detail::read_le<std::uint8_t>(in);
  if (h.dtype > 1) throw ParseError("unknown VXV1 dtype " + std::to_string(h.dtype));
  return h;
}

inline void read_trailer(std::istream& in, VolumeMeta& m) {
  m.pixel_pitch = detail::read_le<double>(in);
  m.depth_pitch = detail::read_le<double>(in);
  m.origin.x() = detail::read_le<double>(in);
  m.origin.y() = detail::read_le<double>(in);
  m.origin.z() = detail::read_le<double>(in);
  detail::read_le<double>(in);
  detail::read_le<double>(in);
}

// Reads either payload type and converts to T (u8 -> f32 is exact; f32 -> u8 thresholds at 0.5).
template <typename T>
Volume<T> read(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  const Header h = read_header(in);
  h.meta.check();
  Volume<T> v(h.meta);
  const std::size_t n = h.meta.size();
  if (h.dtype == dtype_code<T>()) {
    if (!in.read(reinterpret_cast<char*>(v.data.data()), std::streamsize(n * sizeof(T))))
      throw ParseError("truncated VXV1 payload");
  } else if (h.dtype == 0) {
    std::vector<std::uint8_t> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n))) throw ParseError("truncated VXV1 payload");
    for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<T>(raw[i]);
  } else {
    std::vector<float> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * 4))) throw ParseError("truncated VXV1 payload");
    for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<T>(raw[i] >= 0.5f ? 1 : 0);
  }
  read_trailer(in, v.meta);
  return v;
}

}  // namespace vxv
}  // namespace vrn
