#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "vrn/synthetic.hpp"

namespace vrn {

// splitmix64 finaliser; combines a master seed with stream indices.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

struct DatasetSample {
  std::string id;
  Image image;
  BinaryVolume volume;          // image-aligned target
  BinaryVolume frontal_volume;  // canonical-orientation target (may be empty)
  std::optional<LandmarkSet> landmarks;  // image frame
  Mesh mesh;                    // ground truth in scene coordinates, face region set
  RigidTransform pose;          // canonical -> scene
  std::optional<std::array<std::uint32_t, 2>> eye_corners;  // outer eye-corner vertices
  std::map<std::string, std::string> tags;

  Mesh frontal_mesh() const { return frontalize_target(mesh, pose); }
};

struct Dataset {
  VolumeMeta meta;
  std::vector<DatasetSample> samples;
};

namespace detail {

inline nlohmann::json meta_to_json(const VolumeMeta& m) {
  return {{"width", m.width},
          {"height", m.height},
          {"depth", m.depth},
          {"pixel_pitch", m.pixel_pitch},
          {"depth_pitch", m.depth_pitch},
          {"origin", {m.origin.x(), m.origin.y(), m.origin.z()}}};
}

inline VolumeMeta meta_from_json(const nlohmann::json& j) {
  VolumeMeta m;
  m.width = j.at("width").get<std::uint32_t>();
  m.height = j.at("height").get<std::uint32_t>();
  m.depth = j.at("depth").get<std::uint32_t>();
  m.pixel_pitch = j.at("pixel_pitch").get<double>();
  m.depth_pitch = j.at("depth_pitch").get<double>();
  const auto o = j.at("origin").get<std::vector<double>>();
  if (o.size() != 3) throw ParseError("volume origin needs 3 numbers");
  m.origin = Vec3(o[0], o[1], o[2]);
  m.check();
  return m;
}

inline nlohmann::json pose_to_json(const RigidTransform& t) {
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[std::size_t(i * 3 + k)] = t.rotation(i, k);
  return {{"rotation", r}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline RigidTransform pose_from_json(const nlohmann::json& j) {
  RigidTransform t;
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto tr = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || tr.size() != 3) throw ParseError("pose needs a 3x3 rotation and a 3-vector translation");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) t.rotation(i, k) = r[std::size_t(i * 3 + k)];
  t.translation = Vec3(tr[0], tr[1], tr[2]);
  return t;
}

}  // namespace detail

struct SynthOptions {
  std::size_t count = 64;
  std::uint64_t seed = 1;
  std::uint32_t image_size = 64;
  std::uint32_t depth = 36;
  SyntheticRanges ranges;
  // When non-empty, sample i gets |yaw| = yaws[i % size] with a random sign.
  std::vector<double> yaws;
  std::string prefix = "face";
};

// Writes image (PPM), aligned and frontal volumes (VXV1), mesh (PLY with a
// region sidecar) and landmarks per sample, plus manifest.json. Output is a
// pure function of the options.
inline std::filesystem::path write_synthetic_dataset(const SynthOptions& o, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const VolumeMeta meta = synthetic_meta(o.image_size, o.depth);
  nlohmann::json manifest = {{"format", "vrn-dataset"}, {"version", 1}, {"volume", detail::meta_to_json(meta)}};
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < o.count; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu", o.prefix.c_str(), i);
    std::optional<SyntheticSample> s;
    for (std::uint64_t attempt = 0; !s; ++attempt) {
      if (attempt > 100) throw Error("could not place synthetic face " + std::string(name) + " inside the volume");
      SyntheticFaceSpec spec = random_face_spec(derive_seed(o.seed, i, attempt), o.ranges);
      if (!o.yaws.empty()) {
        const double sign = (derive_seed(o.seed, i, attempt, 1) & 1) ? 1.0 : -1.0;
        spec.yaw = sign * o.yaws[i % o.yaws.size()];
      }
      try {
        s = generate_synthetic(spec, meta);
      } catch (const DepthWindowError&) {
      }
    }
    const std::string id = name;
    save_ppm(s->image, dir / (id + ".ppm"));
    vxv::write(s->volume, dir / (id + ".vxv"));
    vxv::write(s->frontal_volume, dir / (id + "_frontal.vxv"));
    save_mesh(s->face.mesh, dir / (id + ".ply"));
    save_landmarks(s->landmarks, dir / (id + "_lm.txt"));
    samples.push_back({{"id", id},
                       {"image", id + ".ppm"},
                       {"volume", id + ".vxv"},
                       {"frontal_volume", id + "_frontal.vxv"},
                       {"mesh", id + ".ply"},
                       {"landmarks", id + "_lm.txt"},
                       {"pose", detail::pose_to_json(s->face.pose)},
                       {"eye_corners", {s->face.left_eye_outer(), s->face.right_eye_outer()}},
                       {"tags", s->tags}});
  }
  manifest["samples"] = samples;
  const auto path = dir / "manifest.json";
  auto out = detail::open_out(path);
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
  return path;
}

// Paths in the manifest are relative to its directory. Only id, image and
// mesh are required per sample: a missing volume is voxelised from the mesh
// and a missing pose is the identity. Samples without eye corners can be
// trained on but not evaluated.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  auto in = detail::open_in(manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  const auto base = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.meta = detail::meta_from_json(j.at("volume"));
    for (const auto& e : j.at("samples")) {
      DatasetSample s;
      s.id = e.at("id").get<std::string>();
      s.image = load_ppm(base / e.at("image").get<std::string>());
      if (s.image.width != int(ds.meta.width) || s.image.height != int(ds.meta.height))
        throw ParseError("sample " + s.id + ": image size does not match the volume frame");
      s.mesh = load_mesh(base / e.at("mesh").get<std::string>());
      if (e.contains("pose")) s.pose = detail::pose_from_json(e.at("pose"));
      s.volume = e.contains("volume") ? vxv::read<std::uint8_t>(base / e.at("volume").get<std::string>())
                                      : voxelize(s.mesh, ds.meta);
      if (!(s.volume.meta == ds.meta)) throw ParseError("sample " + s.id + ": volume meta differs from the manifest");
      if (e.contains("frontal_volume"))
        s.frontal_volume = vxv::read<std::uint8_t>(base / e.at("frontal_volume").get<std::string>());
      if (e.contains("landmarks")) s.landmarks = load_landmarks(base / e.at("landmarks").get<std::string>());
      if (e.contains("eye_corners")) {
        const auto ec = e.at("eye_corners").get<std::vector<std::uint32_t>>();
        if (ec.size() != 2) throw ParseError("sample " + s.id + ": eye_corners needs two vertex indices");
        s.eye_corners = std::array<std::uint32_t, 2>{ec[0], ec[1]};
      }
      if (e.contains("tags"))
        for (const auto& [k, v] : e.at("tags").items()) s.tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad manifest '" + manifest_path.string() + "': " + e.what());
  }
  return ds;
}

// Canonical-orientation target, computed from mesh and pose when the
// manifest does not provide one.
inline const BinaryVolume& frontal_target(DatasetSample& s, const VolumeMeta& meta) {
  if (s.frontal_volume.data.empty()) s.frontal_volume = voxelize(s.frontal_mesh(), meta);
  return s.frontal_volume;
}

}  // namespace vrn
