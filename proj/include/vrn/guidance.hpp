#pragma once

#include <filesystem>
#include <fstream>

#include "vrn/mesh_io.hpp"
#include "vrn/volume.hpp"

namespace vrn {

// Planar RGB image, values in [0,1]: data[(c*height + y)*width + x].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), data(std::size_t(3) * w * h, fill) {}

  float& at(int c, int x, int y) { return data[(std::size_t(c) * height + y) * width + x]; }
  float at(int c, int x, int y) const { return data[(std::size_t(c) * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// Binary PPM (P6, maxval 255).
inline void save_ppm(const Image& img, const std::filesystem::path& path) {
  auto out = detail::open_out(path, true);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> row(std::size_t(3) * img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[std::size_t(3) * x + c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(c, x, y), 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Image load_ppm(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t += ch;
      }
    }
    return t;
  };
  if (token() != "P6") throw ParseError("'" + path.string() + "' is not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw ParseError("bad PPM header in '" + path.string() + "'");
  }
  if (w < 1 || h < 1 || maxval != 255) throw ParseError("unsupported PPM geometry or maxval in '" + path.string() + "'");
  Image img(w, h);
  std::vector<unsigned char> row(std::size_t(3) * w);
  for (int y = 0; y < h; ++y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
      throw ParseError("truncated PPM '" + path.string() + "'");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, x, y) = row[std::size_t(3) * x + c] / 255.0f;
  }
  return img;
}

// 68 peak-normalised Gaussians: channel k, pixel (x,y) holds
// exp(-|(x,y) - lm_k|^2 / (2 sigma^2)), with pixel centres at integer
// coordinates. data[(k*height + y)*width + x].
struct HeatmapStack {
  int width = 0;
  int height = 0;
  double sigma = 1.0;
  std::vector<float> data;

  float at(int k, int x, int y) const { return data[(std::size_t(k) * height + y) * width + x]; }
};

inline constexpr float kHeatmapFloor = 1e-6f;

inline bool landmark_in_frame(const Vec2& p, int width, int height) {
  return p.x() >= -0.5 && p.x() < width - 0.5 && p.y() >= -0.5 && p.y() < height - 0.5;
}

// Landmarks in pixel coordinates. Landmarks outside the frame give an
// all-zero channel.
inline HeatmapStack render_heatmaps(const LandmarkSet& lms, int width, int height, double sigma) {
  if (!(sigma > 0)) throw Error("heatmap sigma must be > 0");
  if (width < 1 || height < 1) throw Error("heatmap size must be positive");
  if (lms.frame != LandmarkFrame::image) throw Error("heatmaps need landmarks in image coordinates");
  HeatmapStack hm{width, height, sigma, std::vector<float>(std::size_t(kNumLandmarks) * width * height, 0.0f)};
  const double inv = 1.0 / (2 * sigma * sigma);
  // Beyond this radius every value is below the floor.
  const double reach = sigma * std::sqrt(-2.0 * std::log(double(kHeatmapFloor))) + 1;
  for (int k = 0; k < kNumLandmarks; ++k) {
    const Vec2 p = lms.xy(k);
    if (!landmark_in_frame(p, width, height)) continue;
    float* ch = hm.data.data() + std::size_t(k) * width * height;
    const int x0 = std::max(0, int(std::floor(p.x() - reach))), x1 = std::min(width - 1, int(std::ceil(p.x() + reach)));
    const int y0 = std::max(0, int(std::floor(p.y() - reach))), y1 = std::min(height - 1, int(std::ceil(p.y() + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - p.x()) * (x - p.x()) + (y - p.y()) * (y - p.y());
        const float v = static_cast<float>(std::exp(-d2 * inv));
        ch[std::size_t(y) * width + x] = v < kHeatmapFloor ? 0.0f : v;
      }
  }
  return hm;
}

// Heatmaps at a resolution different from the one the landmarks were given
// in; coordinates are rescaled keeping pixel centres aligned.
inline HeatmapStack landmark_targets(const LandmarkSet& lms, int src_width, int src_height, int width, int height,
                                     double sigma) {
  if (src_width < 1 || src_height < 1) throw Error("source size must be positive");
  LandmarkSet scaled = lms;
  const double sx = double(width) / src_width, sy = double(height) / src_height;
  for (auto& p : scaled.points) {
    p.x() = (p.x() + 0.5) * sx - 0.5;
    p.y() = (p.y() + 0.5) * sy - 0.5;
  }
  return render_heatmaps(scaled, width, height, sigma);
}

inline HeatmapStack landmark_targets(const LandmarkSet& lms, int width, int height, double sigma) {
  return render_heatmaps(lms, width, height, sigma);
}

// Channels [R, G, B, heatmap 1..68], each height x width.
inline std::vector<float> stack_input(const Image& img, const HeatmapStack& hm) {
  if (img.width != hm.width || img.height != hm.height)
    throw Error("stack_input: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                " but heatmaps are " + std::to_string(hm.width) + "x" + std::to_string(hm.height));
  std::vector<float> out;
  out.reserve(img.data.size() + hm.data.size());
  out.insert(out.end(), img.data.begin(), img.data.end());
  out.insert(out.end(), hm.data.begin(), hm.data.end());
  return out;
}

inline std::pair<Image, HeatmapStack> unstack_input(const std::vector<float>& stacked, int width, int height) {
  const std::size_t plane = std::size_t(width) * height;
  if (stacked.size() != (3 + kNumLandmarks) * plane) throw Error("unstack_input: size mismatch");
  Image img(width, height);
  std::copy(stacked.begin(), stacked.begin() + 3 * plane, img.data.begin());
  HeatmapStack hm{width, height, 0.0, std::vector<float>(stacked.begin() + 3 * plane, stacked.end())};
  return {img, hm};
}

// Stored as a VXV1 float volume with depth 68.
inline void save_heatmaps(const HeatmapStack& hm, const std::filesystem::path& path) {
  SoftVolume v;
  v.meta.width = hm.width;
  v.meta.height = hm.height;
  v.meta.depth = kNumLandmarks;
  v.meta.depth_pitch = hm.sigma;  // carries sigma through the pitch field
  v.data = hm.data;
  vxv::write(v, path);
}

inline HeatmapStack load_heatmaps(const std::filesystem::path& path) {
  const auto v = vxv::read<float>(path);
  if (v.meta.depth != kNumLandmarks) throw ParseError("heatmap file must have 68 channels");
  return {int(v.meta.width), int(v.meta.height), v.meta.depth_pitch, v.data};
}

}  // namespace vrn
