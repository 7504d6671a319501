#pragma once

#include <random>
#include <tuple>

#include "vrn/guidance.hpp"

namespace vrn {

// Left/right correspondence of the 68-point markup (0-based): index k of a
// mirrored face takes the point that was at kFlipPermutation[k].
inline constexpr std::array<int, kNumLandmarks> kFlipPermutation = {
    16, 15, 14, 13, 12, 11, 10, 9,  8,  7,  6,  5,  4,  3,  2,  1,  0,   // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,                             // brows
    27, 28, 29, 30, 35, 34, 33, 32, 31,                                 // nose
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40,                     // eyes
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55,                     // outer lips
    64, 63, 62, 61, 60, 67, 66, 65};                                    // inner lips

struct AugmentRanges {
  double rotation_deg = 45;  // r ~ U[-rotation_deg, rotation_deg]
  double translation_px = 15;
  double scale_min = 0.85, scale_max = 1.15;
  double flip_prob = 0.2;
  double gain_min = 0.6, gain_max = 1.4;
};

struct AugmentSample {
  double rotation_deg = 0;
  double tx = 0, ty = 0;
  double scale = 1;
  bool flip = false;
  std::array<double, 3> gains{1, 1, 1};

  bool is_identity() const {
    return rotation_deg == 0 && tx == 0 && ty == 0 && scale == 1 && !flip && gains == std::array<double, 3>{1, 1, 1};
  }
};

inline AugmentSample sample_augmentation(std::uint64_t seed, const AugmentRanges& r = {}) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };
  AugmentSample s;
  s.rotation_deg = uni(-r.rotation_deg, r.rotation_deg);
  s.tx = uni(-r.translation_px, r.translation_px);
  s.ty = uni(-r.translation_px, r.translation_px);
  s.scale = uni(r.scale_min, r.scale_max);
  s.flip = std::uniform_real_distribution<double>(0, 1)(rng) < r.flip_prob;
  for (auto& g : s.gains) g = uni(r.gain_min, r.gain_max);
  return s;
}

namespace detail {

// Pixel-coordinate similarity about the frame centre, preceded by an
// optional horizontal mirror.
struct PlaneMap {
  double cx, cy, c, s, scale, tx, ty;
  bool flip;
  int width;

  PlaneMap(const AugmentSample& a, int w, int h)
      : cx((w - 1) / 2.0), cy((h - 1) / 2.0), scale(a.scale), tx(a.tx), ty(a.ty), flip(a.flip), width(w) {
    const double th = a.rotation_deg * M_PI / 180.0;
    c = std::cos(th);
    s = std::sin(th);
  }

  Vec2 forward(Vec2 p) const {
    if (flip) p.x() = (width - 1) - p.x();
    const double dx = p.x() - cx, dy = p.y() - cy;
    return {scale * (c * dx - s * dy) + cx + tx, scale * (s * dx + c * dy) + cy + ty};
  }

  Vec2 inverse(double x, double y) const {
    const double dx = (x - cx - tx) / scale, dy = (y - cy - ty) / scale;
    Vec2 p(c * dx + s * dy + cx, -s * dx + c * dy + cy);
    if (flip) p.x() = (width - 1) - p.x();
    return p;
  }
};

}  // namespace detail

// Applies one in-plane similarity (plus optional mirror) to the image
// (bilinear), every depth slice of the volume (nearest) and the landmarks
// (exact), then scales colour channels. Samples from outside the frame are 0.
inline std::tuple<Image, BinaryVolume, LandmarkSet> apply_augmentation(const AugmentSample& a, const Image& img,
                                                                       const BinaryVolume& vol, const LandmarkSet& lms) {
  if (img.width != int(vol.meta.width) || img.height != int(vol.meta.height))
    throw Error("augment: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                " does not match volume " + std::to_string(vol.meta.width) + "x" + std::to_string(vol.meta.height));
  if (img.data.size() != std::size_t(3) * img.width * img.height || vol.data.size() != vol.meta.size())
    throw Error("augment: inconsistent buffer sizes");
  if (lms.frame != LandmarkFrame::image) throw Error("augment: landmarks must be in image coordinates");
  if (!(a.scale > 0)) throw Error("augment: scale must be > 0");

  const int W = img.width, H = img.height;
  const detail::PlaneMap map(a, W, H);

  Image out(W, H);
  BinaryVolume vout(vol.meta, 0);
  const std::size_t plane = std::size_t(W) * H;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Vec2 p = map.inverse(x, y);
      const double fx = std::floor(p.x()), fy = std::floor(p.y());
      const int x0 = int(fx), y0 = int(fy);
      const double wx = p.x() - fx, wy = p.y() - fy;
      for (int ch = 0; ch < 3; ++ch) {
        auto px = [&](int xi, int yi) -> double {
          return (xi < 0 || yi < 0 || xi >= W || yi >= H) ? 0.0 : img.at(ch, xi, yi);
        };
        double v = px(x0, y0);
        if (wx != 0 || wy != 0)
          v = (1 - wy) * ((1 - wx) * px(x0, y0) + wx * px(x0 + 1, y0)) + wy * ((1 - wx) * px(x0, y0 + 1) + wx * px(x0 + 1, y0 + 1));
        out.at(ch, x, y) = static_cast<float>(std::clamp(v * a.gains[ch], 0.0, 1.0));
      }
      const long nx = std::lround(p.x()), ny = std::lround(p.y());
      if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
      const std::size_t src = std::size_t(ny) * W + std::size_t(nx), dst = std::size_t(y) * W + x;
      for (std::size_t d = 0; d < vol.meta.depth; ++d) vout.data[d * plane + dst] = vol.data[d * plane + src];
    }

  LandmarkSet lout = lms;
  for (int k = 0; k < kNumLandmarks; ++k) {
    const Vec3& src = lms.points[a.flip ? kFlipPermutation[k] : k];
    const Vec2 q = map.forward(src.head<2>());
    lout.points[k] = Vec3(q.x(), q.y(), src.z());
  }
  return {std::move(out), std::move(vout), lout};
}

}  // namespace vrn
