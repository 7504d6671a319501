#pragma once

#include <optional>

#include "vrn/mesh.hpp"

namespace vrn::raster {

// Orientation of p relative to the directed edge a->b, with a symbolic
// perturbation p -> (p.x + eps, p.y + eps^2) breaking exact zeros. The value
// is computed from a canonical endpoint order so a shared edge evaluates to
// exactly opposite signs in its two triangles, and every point is covered by
// exactly one side.
inline int edge_sign(const Vec2& a, const Vec2& b, const Vec2& p, double* value = nullptr) {
  const bool swap = b.x() < a.x() || (b.x() == a.x() && b.y() < a.y());
  const Vec2& s = swap ? b : a;
  const Vec2& t = swap ? a : b;
  double e = (t.x() - s.x()) * (p.y() - s.y()) - (t.y() - s.y()) * (p.x() - s.x());
  int sign;
  if (e != 0.0)
    sign = e > 0 ? 1 : -1;
  else if (t.y() != s.y())
    sign = s.y() > t.y() ? 1 : -1;
  else
    sign = t.x() > s.x() ? 1 : (t.x() < s.x() ? -1 : 0);
  if (swap) {
    sign = -sign;
    e = -e;
  }
  if (value) *value = e;
  return sign;
}

struct Hit {
  double z;  // interpolated depth at p
  double b0, b1, b2;  // barycentric weights
};

// Projects the triangle onto the xy plane and tests whether p is covered.
inline std::optional<Hit> cover(const Vec3& a, const Vec3& b, const Vec3& c, const Vec2& p) {
  const Vec2 a2 = a.head<2>(), b2 = b.head<2>(), c2 = c.head<2>();
  double eab, ebc, eca;
  const int sab = edge_sign(a2, b2, p, &eab);
  const int sbc = edge_sign(b2, c2, p, &ebc);
  const int sca = edge_sign(c2, a2, p, &eca);
  if (sab == 0 || sab != sbc || sbc != sca) return std::nullopt;
  const double total = eab + ebc + eca;
  if (total == 0.0) return std::nullopt;  // zero projected area
  Hit h;
  h.b0 = ebc / total;
  h.b1 = eca / total;
  h.b2 = eab / total;
  h.z = h.b0 * a.z() + h.b1 * b.z() + h.b2 * c.z();
  return h;
}

}  // namespace vrn::raster
