#include "orbitkit/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include "orbitkit/io.hpp"

namespace orbitkit {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_png: expected [H,W,3], got " + shape_str(image.shape()));
  const auto H = static_cast<std::size_t>(image.dim(0)), W = static_cast<std::size_t>(image.dim(1));
  std::vector<png_byte> bytes(H * W * 3);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<png_byte>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));

  const auto tmp = path.string() + ".tmp";
  {
    File f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw std::runtime_error("write_png: cannot open " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("write_png: libpng error writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < H; ++r) png_write_row(png, bytes.data() + r * W * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

Tensor<float> read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw std::runtime_error("read_png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  std::vector<png_byte> bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: " + path.string() + " is not a readable PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const png_uint_32 W = png_get_image_width(png, info), H = png_get_image_height(png, info);
  bytes.resize(static_cast<std::size_t>(H) * W * 3);
  std::vector<png_bytep> rows(H);
  for (png_uint_32 r = 0; r < H; ++r) rows[r] = bytes.data() + static_cast<std::size_t>(r) * W * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> out({static_cast<std::int64_t>(H), static_cast<std::int64_t>(W), 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
  return out;
}

void write_png_frames(const std::filesystem::path& dir, const std::string& stem, const Tensor<float>& video) {
  if (video.rank() != 4 || video.dim(3) != 3) throw ShapeError("write_png_frames: expected [T,H,W,3], got " + shape_str(video.shape()));
  const std::int64_t T = video.dim(0), frame = video.dim(1) * video.dim(2) * 3;
  for (std::int64_t t = 0; t < T; ++t) {
    Tensor<float> img({video.dim(1), video.dim(2), 3});
    std::copy_n(video.data() + t * frame, frame, img.data());
    char name[32];
    std::snprintf(name, sizeof name, "_%03d.png", static_cast<int>(t));
    write_png(dir / (stem + name), img);
  }
}

}  // namespace orbitkit
