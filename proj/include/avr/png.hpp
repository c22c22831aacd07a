// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "avr/common.hpp"

namespace avr::png {

struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // HWC, RGB
};

namespace detail {

inline Rgb8Image finish_read(png_image& image, const std::string& what) {
  image.format = PNG_FORMAT_RGB;
  Rgb8Image out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::kIoError, "cannot decode PNG ", what, ": ", msg);
  }
  return out;
}

}  // namespace detail

inline Rgb8Image read(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::kIoError, "cannot read PNG ", path, ": ", image.message);
  return detail::finish_read(image, path.string());
}

// (height, width) from the header only.
inline std::pair<int, int> dimensions(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::kIoError, "cannot read PNG ", path, ": ", image.message);
  const std::pair<int, int> hw{static_cast<int>(image.height), static_cast<int>(image.width)};
  png_image_free(&image);
  return hw;
}

inline Rgb8Image decode(const std::string& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::kIoError, "cannot decode PNG buffer: ", image.message);
  return detail::finish_read(image, "buffer");
}

inline bool has_png_signature(const std::string& bytes) {
  static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

inline void write(const std::filesystem::path& path, const Rgb8Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr))
    fail(ErrorCode::kIoError, "cannot write PNG ", path, ": ", image.message);
}

inline std::string encode(const Rgb8Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(),
                                 0, nullptr))
    fail(ErrorCode::kIoError, "cannot size PNG: ", image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0,
                                 img.pixels.data(), 0, nullptr))
    fail(ErrorCode::kIoError, "cannot encode PNG: ", image.message);
  out.resize(size);
  return out;
}

}  // namespace avr::png
