#include "semfuse/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

namespace semfuse {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("png: " + what + ": " + path.string());
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

}  // namespace

Image<uint16_t> read_png16(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(path, "cannot open");

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) fail(path, "read struct");
  r.info = png_create_info_struct(r.png);
  if (!r.info) fail(path, "info struct");
  if (setjmp(png_jmpbuf(r.png))) fail(path, "decode error");

  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);

  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY) fail(path, "expected single-channel gray");
  if (depth < 16) png_set_expand_gray_1_2_4_to_8(r.png);
  // PNG stores 16-bit samples big-endian; we want host order.
  if (depth == 16) png_set_swap(r.png);
  png_read_update_info(r.png, r.info);

  Image<uint16_t> img(static_cast<int>(w), static_cast<int>(h));
  std::vector<png_bytep> rows(h);
  std::vector<uint8_t> row8;
  if (depth == 16) {
    for (png_uint_32 y = 0; y < h; ++y)
      rows[y] = reinterpret_cast<png_bytep>(&img.at(0, static_cast<int>(y)));
    png_read_image(r.png, rows.data());
  } else {
    row8.resize(static_cast<size_t>(w) * h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = row8.data() + static_cast<size_t>(y) * w;
    png_read_image(r.png, rows.data());
    for (size_t i = 0; i < img.size(); ++i) img.data[i] = row8[i];
  }
  png_read_end(r.png, nullptr);
  return img;
}

void write_png16(const std::filesystem::path& path, const Image<uint16_t>& img) {
  if (img.empty()) throw std::runtime_error("png: refusing to write empty image: " + path.string());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(path, "cannot open for write");

  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) fail(path, "write struct");
  w.info = png_create_info_struct(w.png);
  if (!w.info) fail(path, "info struct");
  if (setjmp(png_jmpbuf(w.png))) fail(path, "encode error");

  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(const_cast<uint16_t*>(&img.at(0, y)));
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

Image<Rgb8> read_png_rgb8(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(path, "cannot open");

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) fail(path, "read struct");
  r.info = png_create_info_struct(r.png);
  if (!r.info) fail(path, "info struct");
  if (setjmp(png_jmpbuf(r.png))) fail(path, "decode error");

  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);

  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);

  png_set_strip_16(r.png);
  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_gray_to_rgb(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  Image<Rgb8> img(static_cast<int>(w), static_cast<int>(h));
  static_assert(sizeof(Rgb8) == 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = reinterpret_cast<png_bytep>(&img.at(0, static_cast<int>(y)));
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_rgb8(const std::filesystem::path& path, const Image<Rgb8>& img) {
  if (img.empty()) throw std::runtime_error("png: refusing to write empty image: " + path.string());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(path, "cannot open for write");

  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) fail(path, "write struct");
  w.info = png_create_info_struct(w.png);
  if (!w.info) fail(path, "info struct");
  if (setjmp(png_jmpbuf(w.png))) fail(path, "encode error");

  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(const_cast<Rgb8*>(&img.at(0, y)));
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

Image<float> read_depth_png(const std::filesystem::path& path) {
  const Image<uint16_t> mm = read_png16(path);
  Image<float> m(mm.width, mm.height);
  for (size_t i = 0; i < mm.size(); ++i) m.data[i] = static_cast<float>(mm.data[i]) * 0.001f;
  return m;
}

void write_depth_png(const std::filesystem::path& path, const Image<float>& depth_m) {
  Image<uint16_t> mm(depth_m.width, depth_m.height);
  for (size_t i = 0; i < depth_m.size(); ++i) {
    const float v = depth_m.data[i] * 1000.0f;
    mm.data[i] = v <= 0.f ? 0 : static_cast<uint16_t>(std::min(v + 0.5f, 65535.f));
  }
  write_png16(path, mm);
}

}  // namespace semfuse
