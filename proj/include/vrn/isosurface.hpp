#pragma once

#include <array>
#include <unordered_map>

#include "vrn/volume.hpp"

namespace vrn {

struct EmptySurfaceError : Error { using Error::Error; };

inline BinaryVolume binarize(const SoftVolume& v, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("binarize threshold must lie in (0,1)");
  BinaryVolume out(v.meta);
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = v.data[i] >= threshold ? 1 : 0;
  return out;
}

namespace mc {

// Corner k sits at offset (x,y,z) = kCorner[k] within a cell.
inline constexpr std::array<std::array<int, 3>, 8> kCorner = {
    {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};

inline constexpr std::array<std::array<int, 2>, 12> kEdge = {
    {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

// Face corners, counter-clockwise seen from outside the cell.
inline constexpr std::array<std::array<int, 4>, 6> kFace = {
    {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}}};

// Triangles per case as edge triples; at most 12 triangles.
struct CaseTable {
  std::array<std::array<std::array<std::int8_t, 3>, 12>, 256> tris{};
  std::array<std::uint8_t, 256> count{};
};

inline int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
  return -1;
}

// Builds the 256-case table. On every face, each run of inside corners is cut
// off by a segment from the crossing entering the run to the crossing leaving
// it (walking counter-clockwise). Ambiguous faces therefore always separate
// inside corners, and both cells sharing a face agree on the segments, so the
// assembled surface is closed. Chaining segments gives loops whose fan
// triangulation faces away from the inside corners.
inline CaseTable build_table() {
  CaseTable table;
  for (int cs = 0; cs < 256; ++cs) {
    auto inside = [&](int corner) { return (cs >> corner) & 1; };
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& face : kFace) {
      std::array<int, 4> entry_at{}, exit_at{};
      int n_entries = 0;
      for (int k = 0; k < 4; ++k) {
        const int a = face[k], b = face[(k + 1) % 4];
        entry_at[k] = !inside(a) && inside(b);
        exit_at[k] = inside(a) && !inside(b);
        n_entries += entry_at[k];
      }
      if (n_entries == 0) continue;
      for (int k = 0; k < 4; ++k) {
        if (!entry_at[k]) continue;
        for (int j = 1; j < 4; ++j) {
          const int m = (k + j) % 4;
          if (exit_at[m]) {
            const int from = edge_between(face[k], face[(k + 1) % 4]);
            const int to = edge_between(face[m], face[(m + 1) % 4]);
            next[from] = to;
            break;
          }
        }
      }
    }
    std::array<bool, 12> used{};
    int count = 0;
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> loop;
      for (int e = start; !used[e]; e = next[e]) {
        used[e] = true;
        loop.push_back(e);
      }
      for (std::size_t i = 1; i + 1 < loop.size(); ++i)
        table.tris[cs][count++] = {std::int8_t(loop[0]), std::int8_t(loop[i]), std::int8_t(loop[i + 1])};
    }
    table.count[cs] = static_cast<std::uint8_t>(count);
  }
  return table;
}

inline const CaseTable& table() {
  static const CaseTable t = build_table();
  return t;
}

}  // namespace mc

// Marching cubes over voxel centers. A corner is inside when its value is
// >= level; vertices are placed by linear interpolation along cell edges and
// shared between neighbouring cells. Triangles face away from the inside.
inline Mesh extract_isosurface(const SoftVolume& v, double level = 0.5) {
  v.meta.check();
  const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
  if (!(level > *mn && level < *mx))
    throw EmptySurfaceError("iso level " + std::to_string(level) + " outside value range (" + std::to_string(*mn) +
                            ", " + std::to_string(*mx) + ")");
  const auto& meta = v.meta;
  const std::size_t W = meta.width, H = meta.height, D = meta.depth;
  if (W < 2 || H < 2 || D < 2) throw EmptySurfaceError("volume too thin for a surface");

  const auto& tab = mc::table();
  Mesh out;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  // Vertex on the grid edge from corner (w,h,d) along `axis`.
  auto vertex_on = [&](std::size_t w, std::size_t h, std::size_t d, int axis) {
    const std::uint64_t key = meta.index(w, h, d) * 3 + axis;
    if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;
    std::size_t w1 = w, h1 = h, d1 = d;
    (axis == 0 ? w1 : axis == 1 ? h1 : d1) += 1;
    const double va = v.at(w, h, d), vb = v.at(w1, h1, d1);
    double t = (level - va) / (vb - va);
    t = std::clamp(t, 1e-7, 1.0 - 1e-7);
    const Vec3 pa = meta.voxel_center(double(w), double(h), double(d));
    const Vec3 pb = meta.voxel_center(double(w1), double(h1), double(d1));
    out.vertices.push_back(pa + t * (pb - pa));
    const auto idx = static_cast<std::uint32_t>(out.vertices.size() - 1);
    edge_vertex.emplace(key, idx);
    return idx;
  };

  std::array<std::uint32_t, 12> cell_vertex{};
  for (std::size_t d = 0; d + 1 < D; ++d)
    for (std::size_t h = 0; h + 1 < H; ++h)
      for (std::size_t w = 0; w + 1 < W; ++w) {
        int cs = 0;
        for (int k = 0; k < 8; ++k) {
          const auto& c = mc::kCorner[k];
          if (v.at(w + c[0], h + c[1], d + c[2]) >= level) cs |= 1 << k;
        }
        if (tab.count[cs] == 0) continue;
        std::array<bool, 12> have{};
        for (int i = 0; i < tab.count[cs]; ++i)
          for (int e : tab.tris[cs][i]) {
            if (have[e]) continue;
            have[e] = true;
            const auto& c0 = mc::kCorner[mc::kEdge[e][0]];
            const auto& c1 = mc::kCorner[mc::kEdge[e][1]];
            const int axis = c0[0] != c1[0] ? 0 : c0[1] != c1[1] ? 1 : 2;
            const std::size_t bw = w + std::min(c0[0], c1[0]), bh = h + std::min(c0[1], c1[1]),
                              bd = d + std::min(c0[2], c1[2]);
            cell_vertex[e] = vertex_on(bw, bh, bd, axis);
          }
        for (int i = 0; i < tab.count[cs]; ++i) {
          const auto& t = tab.tris[cs][i];
          out.triangles.push_back({cell_vertex[t[0]], cell_vertex[t[1]], cell_vertex[t[2]]});
        }
      }
  if (out.triangles.empty()) throw EmptySurfaceError("no iso-surface crossing");
  return out;
}

}  // namespace vrn
