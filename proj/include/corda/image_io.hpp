#pragma once

// PNG encode/decode for the three on-disk sample planes: 8-bit RGB images,
// 8-bit single-channel labels and 16-bit single-channel depth.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "corda/tensor.hpp"

namespace corda::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> bytes;  // rows packed, 16-bit samples big-endian
};

// Kept free of non-trivial locals: libpng reports errors with longjmp.
inline bool write_rows(std::FILE* fp, int width, int height, int bit_depth, int color_type,
                       std::uint8_t* const* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline bool read_header(png_structp png, png_infop info, std::FILE* fp, RawPng& out) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  return true;
}

inline bool read_body(png_structp png, png_infop info, std::uint8_t* const* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, const_cast<png_bytepp>(rows));
  png_read_end(png, info);
  return true;
}

inline RawPng read_raw(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed");
  }
  RawPng out;
  if (!read_header(png, info, fp.get(), out)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("not a valid PNG: " + path.string());
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
  std::vector<std::uint8_t*> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + rowbytes * y;
  const bool ok = read_body(png, info, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw FormatError("corrupt PNG data: " + path.string());
  return out;
}

inline void write_raw(const std::filesystem::path& path, int width, int height, int bit_depth,
                      int color_type, std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  const std::size_t rowbytes = bytes.size() / static_cast<std::size_t>(height);
  std::vector<std::uint8_t*> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + rowbytes * y;
  if (!write_rows(fp.get(), width, height, bit_depth, color_type, rows.data()))
    throw IoError("PNG encode failed: " + path.string());
}

}  // namespace detail

inline void write_rgb8(const std::filesystem::path& path, const Grid<std::uint8_t>& img) {
  require(img.channels() == 3, "write_rgb8: need 3 channels");
  std::vector<std::uint8_t> bytes(img.data().begin(), img.data().end());
  detail::write_raw(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, bytes);
}

inline void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& img) {
  require(img.channels() == 1, "write_gray8: need 1 channel");
  std::vector<std::uint8_t> bytes(img.data().begin(), img.data().end());
  detail::write_raw(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY, bytes);
}

inline void write_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& img) {
  require(img.channels() == 1, "write_gray16: need 1 channel");
  std::vector<std::uint8_t> bytes(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(img.data()[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(img.data()[i] & 0xff);
  }
  detail::write_raw(path, img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY, bytes);
}

inline Grid<std::uint8_t> read_rgb8(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_RGB)
    throw FormatError("expected 8-bit RGB PNG: " + path.string());
  Grid<std::uint8_t> img(raw.height, raw.width, 3);
  std::copy(raw.bytes.begin(), raw.bytes.end(), img.data().begin());
  return img;
}

inline Grid<std::uint8_t> read_gray8(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_GRAY)
    throw FormatError("expected 8-bit grayscale PNG: " + path.string());
  Grid<std::uint8_t> img(raw.height, raw.width, 1);
  std::copy(raw.bytes.begin(), raw.bytes.end(), img.data().begin());
  return img;
}

inline Grid<std::uint16_t> read_gray16(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY)
    throw FormatError("expected 16-bit grayscale PNG: " + path.string());
  Grid<std::uint16_t> img(raw.height, raw.width, 1);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data()[i] = static_cast<std::uint16_t>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]);
  return img;
}

}  // namespace corda::io
