#pragma once

#include "vrn/isosurface.hpp"
#include "vrn/metrics.hpp"
#include "vrn/voxelizer.hpp"

namespace vrn {

// Error introduced by voxelising `mesh` on the grid `meta`: voxelise, pad with
// an empty shell, extract the 0.5 iso-surface and measure its NME against the
// source mesh under the evaluation protocol (correspondence only, no rigid
// alignment). `d` is the normaliser.
inline double discretization_error(const Mesh& mesh, const VolumeMeta& meta, double d) {
  const BinaryVolume vol = voxelize(mesh, meta);
  if (count_occupied(vol) == 0) throw EmptySurfaceError("voxelisation left no occupied voxels");
  const Mesh recovered = extract_isosurface(to_soft(pad_volume<std::uint8_t>(vol, 1, 0)), 0.5);
  const Correspondence corr = establish_correspondence(recovered, mesh, false);
  return nme(recovered, mesh, corr, d).nme;
}

}  // namespace vrn
