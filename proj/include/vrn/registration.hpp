#pragma once

#include <Eigen/SVD>

#include "vrn/kdtree.hpp"
#include "vrn/mesh.hpp"

namespace vrn {

struct RankDeficiencyError : Error { using Error::Error; };

// Least-squares rigid transform mapping src[i] onto dst[i] (Kabsch with
// reflection correction).
inline RigidTransform fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.empty()) throw Error("fit_rigid needs two equally sized, non-empty point sets");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= double(src.size());
  cd /= double(dst.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) cov += (src[i] - cs) * (dst[i] - cd).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(1) <= 1e-12 * sv(0))
    throw RankDeficiencyError("degenerate covariance: correspondences are collinear or coincident");
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransform tf;
  tf.rotation = svd.matrixV() * fix * svd.matrixU().transpose();
  tf.translation = cd - tf.rotation * cs;
  return tf;
}

struct IcpOptions {
  int max_iters = 50;
  // Absolute tolerance on the improvement of the mean residual; <= 0 selects
  // 1e-6 times the largest extent of the target.
  double tol = 0.0;
};

struct IcpResult {
  RigidTransform transform;  // maps source into target
  double residual = 0.0;     // mean closest-point distance under `transform`
  int iterations = 0;
};

// Point-to-point ICP from identity: match every source point to its nearest
// target point, refit, repeat until the mean residual stops improving by more
// than tol or max_iters is reached.
inline IcpResult icp_align(std::span<const Vec3> source, const KdTree& target, std::span<const Vec3> target_pts,
                           IcpOptions opts = {}) {
  if (source.empty()) throw EmptyMeshError("icp_align: empty source");
  const double tol = opts.tol > 0 ? opts.tol : 1e-6 * bounds_of(target_pts).extent().maxCoeff();
  std::vector<Vec3> matched(source.size());
  IcpResult res;
  auto residual_under = [&](const RigidTransform& tf) {
    double sum = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
      const auto nn = target.nearest(tf.apply(source[i]));
      matched[i] = target_pts[nn.index];
      sum += std::sqrt(nn.dist2);
    }
    return sum / double(source.size());
  };
  res.residual = residual_under(res.transform);
  // The returned pose is the best one visited, so an exact start stays exact.
  IcpResult best = res;
  for (int it = 0; it < opts.max_iters; ++it) {
    const RigidTransform next = fit_rigid(source, matched);
    const double r = residual_under(next);
    const double change = std::abs(res.residual - r);
    res.transform = next;
    res.residual = r;
    res.iterations = it + 1;
    if (r < best.residual) best = res;
    best.iterations = res.iterations;
    if (change < tol) break;
  }
  res = best;
  return res;
}

inline IcpResult icp_align(const Mesh& source, const Mesh& target, IcpOptions opts = {}) {
  if (source.vertices.empty() || target.vertices.empty()) throw EmptyMeshError("icp_align: empty mesh");
  KdTree tree(target.vertices);
  return icp_align(source.vertices, tree, target.vertices, opts);
}

// Pairs every ground-truth evaluation vertex with a predicted vertex.
struct Correspondence {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // (pred index, gt index)
  RigidTransform rigid;  // aligns the prediction onto the ground truth
  double residual = 0.0;
  bool apply_rigid = false;  // measure distances after applying `rigid` to the prediction
};

// ICP registers the ground-truth evaluation region to the prediction; pairs
// are nearest predicted vertices in that aligned pose. With apply_rigid off,
// downstream distances are taken in the original coordinates, so the rigid
// fit only decides who is matched to whom.
inline Correspondence establish_correspondence(const Mesh& pred, const Mesh& gt, bool apply_rigid, IcpOptions opts = {}) {
  if (pred.vertices.empty() || gt.vertices.empty()) throw EmptyMeshError("establish_correspondence: empty mesh");
  const auto region = gt.region_indices();
  if (region.empty()) throw EmptyMeshError("ground truth evaluation region is empty");
  std::vector<Vec3> src;
  src.reserve(region.size());
  for (auto i : region) src.push_back(gt.vertices[i]);

  KdTree tree(pred.vertices);
  const IcpResult icp = icp_align(src, tree, pred.vertices, opts);
  Correspondence c;
  c.rigid = icp.transform.inverse();
  c.residual = icp.residual;
  c.apply_rigid = apply_rigid;
  c.pairs.reserve(region.size());
  for (std::size_t k = 0; k < region.size(); ++k)
    c.pairs.emplace_back(tree.nearest(icp.transform.apply(src[k])).index, region[k]);
  return c;
}

}  // namespace vrn
