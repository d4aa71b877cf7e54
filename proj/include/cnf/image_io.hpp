#pragma once

// RGB float images in [0,1], row-major with top-left origin, plus PNG and
// NPY encoding.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cnf/checkpoint.hpp"
#include "cnf/errors.hpp"

namespace cnf {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // 3 * width * height

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  float* at(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const float* at(int x, int y) const { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
};

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> px(img.rgb.size());
  std::transform(img.rgb.begin(), img.rgb.end(), px.begin(), to_u8);
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, px.data(), 0, nullptr))
    throw DataError(std::string("png encode failed: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, px.data(), 0, nullptr))
    throw DataError(std::string("png encode failed: ") + desc.message);
  out.resize(size);
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_png(img)); }

inline Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image not found: " + path.string());
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.string().c_str()))
    throw DataError("cannot read png " + path.string() + ": " + desc.message);
  desc.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, px.data(), 0, nullptr))
    throw DataError("cannot decode png " + path.string() + ": " + desc.message);
  Image img(static_cast<int>(desc.width), static_cast<int>(desc.height));
  for (std::size_t i = 0; i < px.size(); ++i) img.rgb[i] = static_cast<float>(px[i]) / 255.f;
  return img;
}

/// Quantizes to 8 bits and back, matching what a PNG round trip produces.
inline Image quantize8(Image img) {
  for (auto& v : img.rgb) v = static_cast<float>(to_u8(v)) / 255.f;
  return img;
}

/// NumPy .npy (format 1.0) with little-endian float32 of shape (H, W, 3).
inline void write_npy(const std::filesystem::path& path, const Image& img) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(img.height) + ", " +
                       std::to_string(img.width) + ", 3), }";
  const std::size_t preamble = 10;
  const std::size_t total = ((preamble + header.size() + 1 + 63) / 64) * 64;
  header.append(total - preamble - header.size() - 1, ' ');
  header.push_back('\n');
  std::vector<std::uint8_t> bytes = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  bytes.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  bytes.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (float v : img.rgb) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  write_file_atomic(path, bytes);
}

}  // namespace cnf
