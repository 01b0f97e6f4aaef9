#pragma once

// PNG codec for 8-bit RGB rasters, built on libpng's simplified API.
// Images carrying an alpha channel are rejected; color profiles are ignored.

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vea/error.hpp"
#include "vea/imageops.hpp"
#include "vea/io.hpp"

namespace vea::png {

inline RasterImage decode(std::span<const std::byte> bytes, const std::string& name = "image") {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw Error(ErrorCode::MalformedDocument, name + ": " + img.message);
  if (img.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&img);
    throw Error(ErrorCode::InvariantViolation, name + ": PNG has an alpha channel; only RGB is supported");
  }
  img.format = PNG_FORMAT_RGB;
  RasterImage out(img.height, img.width);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
    throw Error(ErrorCode::MalformedDocument, name + ": " + img.message);
  return out;
}

inline std::string encode_pixels(std::span<const std::uint8_t> pixels, std::size_t height, std::size_t width,
                                 std::uint32_t format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw Error(ErrorCode::Io, std::string("png encode: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw Error(ErrorCode::Io, std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

inline std::string encode(const RasterImage& image) {
  return encode_pixels(image.pixels, image.height, image.width, PNG_FORMAT_RGB);
}

/// 8-bit grayscale preview of a [0, 1] field, value = round(255 * v).
inline std::string encode_preview(const PixelField& field) {
  std::vector<std::uint8_t> gray(field.values.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = to_u8(255.0 * field.values[i]);
  return encode_pixels(gray, field.rows, field.cols, PNG_FORMAT_GRAY);
}

inline RasterImage load(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  return decode(io::as_bytes(data), path.string());
}

inline void save(const std::filesystem::path& path, const RasterImage& image) {
  io::write_file_atomic(path, encode(image));
}

}  // namespace vea::png
