#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace semfuse {

// Row-major 2D grid. Pixel (x, y) with x in [0, width), y in [0, height).
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int x, int y) {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<size_t>(y) * width + x];
  }
  const T& at(int x, int y) const {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<size_t>(y) * width + x];
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_dims(const Image& other) const {
    return width == other.width && height == other.height;
  }

  bool operator==(const Image& other) const {
    return width == other.width && height == other.height && data == other.data;
  }
};

struct Rgb8 {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb8&) const = default;
};

}  // namespace semfuse
