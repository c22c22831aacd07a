// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "avr/common.hpp"

// Minimal ZIP container: writes stored entries, reads stored and deflated
// entries. Used for checkpoints and frame-zip uploads/downloads.
namespace avr::zip {

struct Entry {
  std::string name;
  std::string data;
};

namespace detail {

inline void put16(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put32(std::string& s, std::uint32_t v) {
  put16(s, v & 0xffff);
  put16(s, v >> 16);
}
inline std::uint32_t get16(const std::string& s, std::size_t off) {
  require(off + 2 <= s.size(), ErrorCode::kIoError, "zip: truncated archive");
  return static_cast<std::uint8_t>(s[off]) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[off + 1])) << 8);
}
inline std::uint32_t get32(const std::string& s, std::size_t off) {
  return get16(s, off) | (get16(s, off + 2) << 16);
}

inline std::string inflate_raw(const std::string& in, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  require(inflateInit2(&zs, -MAX_WBITS) == Z_OK, ErrorCode::kIoError,
          "zip: inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  require(rc == Z_STREAM_END && zs.total_out == expected, ErrorCode::kIoError,
          "zip: corrupt deflate stream");
  return out;
}

}  // namespace detail

inline bool has_zip_signature(const std::string& bytes) {
  return bytes.size() >= 4 && bytes.compare(0, 4, "PK\x03\x04") == 0;
}

inline std::string write(const std::vector<Entry>& entries) {
  std::string out, central;
  for (const Entry& e : entries) {
    require(e.data.size() < 0xffffffffULL, ErrorCode::kIoError,
            "zip: entry too large: ", e.name);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(e.data.data()),
              static_cast<uInt>(e.data.size())));
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());
    using detail::put16;
    using detail::put32;
    put32(out, 0x04034b50);
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // stored
    put16(out, 0);   // mod time
    put16(out, 0x21);  // mod date (1980-01-01)
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, static_cast<std::uint32_t>(e.name.size()));
    put16(out, 0);
    out += e.name;
    out += e.data;

    put32(central, 0x02014b50);
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0x21);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, static_cast<std::uint32_t>(e.name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central += e.name;
  }
  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  using detail::put16;
  using detail::put32;
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, central_offset);
  put16(out, 0);
  return out;
}

// Reads every file entry through the central directory. Directory entries
// (names ending in '/') are skipped.
inline std::vector<Entry> read(const std::string& bytes) {
  using detail::get16;
  using detail::get32;
  require(bytes.size() >= 22, ErrorCode::kIoError, "zip: too small");
  std::size_t eocd = std::string::npos;
  const std::size_t lo = bytes.size() > 65557 ? bytes.size() - 65557 : 0;
  for (std::size_t i = bytes.size() - 22 + 1; i-- > lo;) {
    if (get32(bytes, i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  require(eocd != std::string::npos, ErrorCode::kIoError,
          "zip: end of central directory not found");
  const std::uint32_t count = get16(bytes, eocd + 10);
  std::size_t p = get32(bytes, eocd + 16);
  std::vector<Entry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    require(get32(bytes, p) == 0x02014b50, ErrorCode::kIoError,
            "zip: bad central directory header");
    const std::uint32_t method = get16(bytes, p + 10);
    const std::uint32_t crc = get32(bytes, p + 16);
    const std::uint32_t csize = get32(bytes, p + 20);
    const std::uint32_t usize = get32(bytes, p + 24);
    const std::uint32_t name_len = get16(bytes, p + 28);
    const std::uint32_t extra_len = get16(bytes, p + 30);
    const std::uint32_t comment_len = get16(bytes, p + 32);
    const std::uint32_t local = get32(bytes, p + 42);
    require(p + 46 + name_len <= bytes.size(), ErrorCode::kIoError,
            "zip: truncated name");
    std::string name = bytes.substr(p + 46, name_len);
    p += 46 + name_len + extra_len + comment_len;
    if (!name.empty() && name.back() == '/') continue;

    require(get32(bytes, local) == 0x04034b50, ErrorCode::kIoError,
            "zip: bad local header for ", name);
    const std::size_t data_off =
        local + 30 + get16(bytes, local + 26) + get16(bytes, local + 28);
    require(data_off + csize <= bytes.size(), ErrorCode::kIoError,
            "zip: truncated data for ", name);
    std::string raw = bytes.substr(data_off, csize);
    std::string data;
    if (method == 0) {
      data = std::move(raw);
    } else if (method == 8) {
      data = detail::inflate_raw(raw, usize);
    } else {
      fail(ErrorCode::kIoError, "zip: unsupported compression method ", method,
           " for ", name);
    }
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size())));
    require(actual == crc, ErrorCode::kIoError, "zip: CRC mismatch for ", name);
    entries.push_back({std::move(name), std::move(data)});
  }
  return entries;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "cannot open ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot write ", path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIoError, "short write to ", path);
}

}  // namespace avr::zip
