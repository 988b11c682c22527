#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"
#include "semfuse/labelspace.hpp"

namespace semfuse::gravity {

// Quarter-turn alignment for one frame. alpha is the circular angle in
// [0, 2*pi) from image-up to the projected sky direction, measured in the
// direction that one application of rotate_quarter corrects; k is the
// quarter-turn count that brings the sky approximately upright.
struct GravityInfo {
  double alpha = 0.0;
  int k = 0;
};

// Projects the world z-axis (sky) into the image plane of `pose` and picks
// the quarter turn minimizing the circular distance to image-up. Cameras
// looking straight up or down (projected norm < 1e-6) get k = 0.
GravityInfo compute_alignment(const Pose& pose);

// Exact lossless rotation by k quarter turns; odd k swaps dimensions.
// Pixel (x, y) of the input lands at (H - 1 - y, x) for k = 1.
template <typename T>
Image<T> rotate_quarter(const Image<T>& img, int k) {
  if (k < 0 || k > 3) throw std::runtime_error("rotate_quarter: k must be in {0,1,2,3}");
  if (k == 0) return img;
  const int w = img.width, h = img.height;
  Image<T> out;
  if (k == 1) {
    out = Image<T>(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(h - 1 - y, x) = img.at(x, y);
  } else if (k == 2) {
    out = Image<T>(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(w - 1 - x, h - 1 - y) = img.at(x, y);
  } else {
    out = Image<T>(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(y, w - 1 - x) = img.at(x, y);
  }
  return out;
}

labels::LabelMap rotate_quarter(const labels::LabelMap& lm, int k);

// Inverse of rotate_quarter with the same k.
labels::LabelMap unrotate_labels(const labels::LabelMap& lm, int k);
template <typename T>
Image<T> unrotate_quarter(const Image<T>& img, int k) {
  if (k < 0 || k > 3) throw std::runtime_error("unrotate_quarter: k must be in {0,1,2,3}");
  return rotate_quarter(img, (4 - k) % 4);
}

// Per-frame `gravity.json`: array of {frame, alpha, k}.
void write_gravity_json(const std::filesystem::path& path, std::span<const GravityInfo> infos);
std::vector<GravityInfo> read_gravity_json(const std::filesystem::path& path);

}  // namespace semfuse::gravity
