#include "rdd/image_io.hpp"

#include "rdd/metrics.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace rdd {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

void require_map(const Tensor& map, const char* what) {
  if (map.ndim() != 2) throw ShapeError(std::string(what) + ": expected [H, W], got " + to_string(map.shape()));
}

}  // namespace

void write_pgm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& pixels,
               int maxval) {
  if (static_cast<Index>(pixels.size()) != height * width) throw ShapeError("write_pgm: pixel count mismatch");
  if (maxval < 1 || maxval > 255) throw std::invalid_argument("write_pgm: maxval must lie in [1, 255]");
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n" << maxval << "\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, Index& height, Index& width, int& maxval) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || maxval > 255) throw std::runtime_error("unsupported PGM file " + path.string());
  in.get();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width * height));
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!in) throw std::runtime_error("truncated PGM file " + path.string());
  return pixels;
}

void write_unit_map_pgm(const std::filesystem::path& path, const Tensor& map) {
  require_map(map, "write_unit_map_pgm");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(map.size()));
  for (Index i = 0; i < map.size(); ++i) px[static_cast<std::size_t>(i)] = to_byte(map[i]);
  write_pgm(path, map.dim(0), map.dim(1), px);
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, int num_classes) {
  if (labels.ndim() != 2) throw ShapeError("write_label_pgm: expected [H, W] labels");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) px[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(labels[i]);
  write_pgm(path, labels.dim(0), labels.dim(1), px, std::max(1, num_classes - 1));
}

void write_rgb_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("write_rgb_png: expected [3, H, W] image");
  const Index h = image.dim(1), w = image.dim(2);
  ensure_parent(path);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(3 * w));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) row[static_cast<std::size_t>(3 * x + c)] = to_byte(image(c, y, x));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_map_csv(const std::filesystem::path& path, const Tensor& map) {
  require_map(map, "write_map_csv");
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Index y = 0; y < map.dim(0); ++y) {
    for (Index x = 0; x < map.dim(1); ++x) out << (x ? "," : "") << format_number(map(y, x));
    out << "\n";
  }
}

}  // namespace rdd
