#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mapval/error.hpp"
#include "mapval/grid.hpp"

namespace mapval::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
  throw InvalidInput(std::string("PNG error: ") + msg + " in " +
                     static_cast<const char*>(png_get_error_ptr(png)));
}
inline void png_warning_fn(png_structp, png_const_charp) {}

inline LabelGrid read_png(const std::filesystem::path& path) {
  const std::string name = path.string();
  FilePtr f(std::fopen(name.c_str(), "rb"));
  if (!f) throw InvalidInput("cannot open raster " + name);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(name.c_str()),
                                           png_error_fn, png_warning_fn);
  if (!png) throw Error("cannot allocate PNG reader");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p; png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_PALETTE)
    throw InvalidInput("label raster must be single-channel (gray or palette): " + name);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  LabelGrid out(static_cast<int>(width), static_cast<int>(height));
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = out.row_ptr(static_cast<int>(r));
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return out;
}

inline void write_png(const std::filesystem::path& path, int width, int height, int channels,
                      std::span<const std::uint8_t> data) {
  const std::string name = path.string();
  FilePtr f(std::fopen(name.c_str(), "wb"));
  if (!f) throw InvalidInput("cannot write raster " + name);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(name.c_str()),
                                            png_error_fn, png_warning_fn);
  if (!png) throw Error("cannot allocate PNG writer");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p; png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(data.data() + stride * r));
  png_write_end(png, nullptr);
}

inline LabelGrid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open raster " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto skip = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  skip(); in >> w;
  skip(); in >> h;
  skip(); in >> maxval;
  if (magic != "P5" || !in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw InvalidInput("unsupported PGM (need binary P5, 8-bit): " + path.string());
  in.get();
  LabelGrid out(w, h);
  in.read(reinterpret_cast<char*>(out.data().data()), static_cast<std::streamsize>(out.size()));
  if (!in) throw InvalidInput("truncated PGM raster " + path.string());
  return out;
}

}  // namespace detail

/// Reads a single-channel 8-bit label raster (.png or binary .pgm).
inline LabelGrid read_labels(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InvalidInput("raster not found: " + path.string());
  if (path.extension() == ".pgm") return detail::read_pgm(path);
  return detail::read_png(path);
}

inline void write_labels(const std::filesystem::path& path, const LabelGrid& labels) {
  if (path.extension() == ".pgm") {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n" << labels.width() << ' ' << labels.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(labels.data().data()), static_cast<std::streamsize>(labels.size()));
    if (!out) throw InvalidInput("cannot write raster " + path.string());
    return;
  }
  detail::write_png(path, labels.width(), labels.height(), 1, labels.data());
}

inline void write_rgb(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw InvalidInput("RGB buffer size mismatch");
  detail::write_png(path, width, height, 3, rgb);
}

}  // namespace mapval::io
