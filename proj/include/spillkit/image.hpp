#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillkit/error.hpp"
#include "spillkit/util.hpp"

namespace spillkit {

/// 8-bit single-channel raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
  bool operator==(const ImageSize&) const = default;
};

inline bool looks_like_png(std::span<const std::uint8_t> data) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return data.size() >= 8 && std::equal(sig, sig + 8, data.begin());
}

/// Width and height from the PNG IHDR chunk without decoding pixels.
inline std::optional<ImageSize> png_size(std::span<const std::uint8_t> data) {
  if (!looks_like_png(data) || data.size() < 24) return std::nullopt;
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t{data[off]} << 24) | (std::uint32_t{data[off + 1]} << 16) |
           (std::uint32_t{data[off + 2]} << 8) | std::uint32_t{data[off + 3]};
  };
  return ImageSize{static_cast<int>(be32(16)), static_cast<int>(be32(20))};
}

/// Decode any PNG into luminance. Throws on malformed data.
inline GrayImage decode_png_gray(std::span<const std::uint8_t> data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, data.data(), data.size()))
    throw Error(Errc::invalid_input, std::string("PNG decode failed: ") + img.message);
  img.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(Errc::invalid_input, "PNG decode failed: " + msg);
  }
  return out;
}

inline Bytes encode_png(const GrayImage& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(Errc::io, std::string("PNG encode failed: ") + img.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(Errc::io, std::string("PNG encode failed: ") + img.message);
  out.resize(size);
  return out;
}

inline GrayImage load_png_gray(const std::filesystem::path& path) { return decode_png_gray(read_file(path)); }

inline void save_png(const std::filesystem::path& path, const GrayImage& image) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace spillkit
