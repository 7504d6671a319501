#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include "vrn/mesh_io.hpp"
#include "vrn/nn/layers.hpp"

namespace vrn::nn {

struct CheckpointError : Error { using Error::Error; };

inline constexpr char kCheckpointMagic[4] = {'V', 'R', 'N', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// VRNW: magic, u32 version, then one record per parameter until EOF:
// u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data.
template <typename T>
void save_checkpoint(const ParamSet<T>& params, const std::filesystem::path& path) {
  auto out = vrn::detail::open_out(path, true);
  out.write(kCheckpointMagic, 4);
  vrn::detail::write_le(out, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    vrn::detail::write_le(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    vrn::detail::write_le(out, std::uint32_t(t.shape().size()));
    for (int d : t.shape()) vrn::detail::write_le(out, std::uint32_t(d));
    for (T v : t.data()) vrn::detail::write_le(out, static_cast<float>(v));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Fills `params` in place. Every parameter must appear exactly once with a
// matching shape; unknown names are an error.
template <typename T>
void load_checkpoint(ParamSet<T>& params, const std::filesystem::path& path) {
  auto in = vrn::detail::open_in(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("'" + path.string() + "' is not a VRNW checkpoint");
  const auto version = vrn::detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  std::map<std::string, Tensor<T>> by_name;
  for (auto& [name, t] : params) by_name.emplace(name, t);
  std::set<std::string> seen;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = vrn::detail::read_le<std::uint32_t>(in);
    if (len > 4096) throw CheckpointError("corrupt checkpoint: name length " + std::to_string(len));
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw CheckpointError("truncated checkpoint");
    const auto rank = vrn::detail::read_le<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("corrupt checkpoint: rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = int(vrn::detail::read_le<std::uint32_t>(in));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has unknown parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + to_string(shape) + " vs model " +
                            to_string(it->second.shape()));
    if (!seen.insert(name).second) throw CheckpointError("duplicate parameter '" + name + "' in checkpoint");
    for (auto& v : it->second.data()) v = static_cast<T>(vrn::detail::read_le<float>(in));
  }
  if (seen.size() != by_name.size()) {
    for (const auto& [name, _] : by_name)
      if (!seen.count(name)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
  }
}

}  // namespace vrn::nn
