// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/common.hpp"
#include "avr/png.hpp"

namespace avr {


enum class PixelForm { kStorage, kCompute };

template <typename T>
struct PixelTraits;

template <>
struct PixelTraits<std::uint8_t> {
  static constexpr PixelForm form = PixelForm::kStorage;
};

template <>
struct PixelTraits<double> {
  static constexpr PixelForm form = PixelForm::kCompute;
};

template <typename T>
concept PixelType = requires { PixelTraits<T>::form; };

// One RGB frame, interleaved HWC. Storage frames hold bytes in [0,255],
// compute frames hold reals in [0,1].
template <PixelType T>
class Frame {
 public:
  static constexpr int kChannels = 3;
  static constexpr PixelForm form = PixelTraits<T>::form;

  Frame() = default;
  Frame(int height, int width, T fill = T{})
      : height_(height),
        width_(width),
        data_(static_cast<std::size_t>(height) * width * kChannels, fill) {}
  Frame(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(data_.size() == static_cast<std::size_t>(height) * width * kChannels,
            ErrorCode::kShapeMismatch, "frame data size does not match ",
            height, "x", width, "x3");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }

  T& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  T at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_ * kChannels; }
  const T* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_ * kChannels;
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Frame& a, const Frame& b) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using StorageFrame = Frame<std::uint8_t>;
using ComputeFrame = Frame<double>;

template <PixelType T>
struct Clip {
  std::vector<Frame<T>> frames;
  double fps = 25.0;
  std::string source_id;

  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
  std::size_t size() const { return frames.size(); }

  void validate() const {
    require(!frames.empty(), ErrorCode::kEmptyClip, "clip '", source_id,
            "' has no frames");
    for (std::size_t i = 0; i < frames.size(); ++i)
      require(frames[i].height() == height() && frames[i].width() == width(),
              ErrorCode::kShapeMismatch, "clip '", source_id, "' frame ", i,
              " is ", frames[i].height(), "x", frames[i].width(), ", expected ",
              height(), "x", width());
  }
};

using StorageClip = Clip<std::uint8_t>;
using ComputeClip = Clip<double>;

inline ComputeFrame to_compute(const StorageFrame& f) {
  std::vector<double> v(f.data().size());
  std::transform(f.data().begin(), f.data().end(), v.begin(),
                 [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  return ComputeFrame(f.height(), f.width(), std::move(v));
}

inline StorageFrame to_storage(const ComputeFrame& f) {
  std::vector<std::uint8_t> v(f.data().size());
  std::transform(f.data().begin(), f.data().end(), v.begin(), [](double x) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
  });
  return StorageFrame(f.height(), f.width(), std::move(v));
}

inline ComputeClip to_compute(const StorageClip& c) {
  ComputeClip out{{}, c.fps, c.source_id};
  out.frames.reserve(c.frames.size());
  for (const auto& f : c.frames) out.frames.push_back(to_compute(f));
  return out;
}

inline StorageClip to_storage(const ComputeClip& c) {
  StorageClip out{{}, c.fps, c.source_id};
  out.frames.reserve(c.frames.size());
  for (const auto& f : c.frames) out.frames.push_back(to_storage(f));
  return out;
}

enum class Split { kTrain, kVal };

inline std::string split_name(Split s) { return s == Split::kTrain ? "train" : "val"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  fail(ErrorCode::kInvalidParam, "unknown split label '", s, "'");
}

struct ManifestEntry {
  std::string source_id;
  std::size_t frame_count = 0;
  Split split = Split::kTrain;
};

// Train/val listing of a paired corpus. `root` is the directory holding the
// {train,val}/<source_id>/{gt,degraded} tree; it is not serialized.
struct ClipManifest {
  std::vector<ManifestEntry> entries;
  std::size_t total_frames = 0;
  fs::path root;

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  std::size_t frames_in(Split s) const {
    std::size_t n = 0;
    for (const auto& e : entries)
      if (e.split == s) n += e.frame_count;
    return n;
  }

  fs::path clip_dir(const ManifestEntry& e, const char* kind) const {
    return root / split_name(e.split) / e.source_id / kind;
  }

  void validate() const {
    std::size_t sum = 0;
    std::vector<std::string> ids;
    for (const auto& e : entries) {
      sum += e.frame_count;
      ids.push_back(e.source_id);
    }
    require(sum == total_frames, ErrorCode::kInvalidParam,
            "manifest total_frames ", total_frames, " != sum of entries ", sum);
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
            ErrorCode::kInvalidParam, "manifest lists a source_id twice");
  }
};

inline nlohmann::json to_json(const ClipManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"source_id", e.source_id},
                       {"frame_count", e.frame_count},
                       {"split", split_name(e.split)}});
  return {{"entries", entries}, {"total_frames", m.total_frames}};
}

inline ClipManifest manifest_from_json(const nlohmann::json& j, fs::path root) {
  ClipManifest m;
  for (const auto& e : j.at("entries"))
    m.entries.push_back({e.at("source_id").get<std::string>(),
                         e.at("frame_count").get<std::size_t>(),
                         parse_split(e.at("split").get<std::string>())});
  m.total_frames = j.at("total_frames").get<std::size_t>();
  m.root = std::move(root);
  m.validate();
  return m;
}

inline void save_manifest(const ClipManifest& m, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIoError, "cannot write ", path);
  out << to_json(m).dump(2) << "\n";
}

// Loads manifest.json; the corpus root is the manifest's directory.
inline ClipManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "manifest ", path,
          " not found");
  nlohmann::json j;
  try {
    in >> j;
    return manifest_from_json(j, fs::absolute(path).parent_path());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed manifest ", path, ": ", e.what());
  }
}

// External codec tools. Both are shell command templates read from the
// environment: AVR_DECODER with {input} (container) and {output} (frame
// directory); AVR_ENCODER with {input} (frame directory, files NNNNNN.png),
// {output} (container) and {fps}.
struct CodecTools {
  std::optional<std::string> decoder;
  std::optional<std::string> encoder;

  static CodecTools from_env() {
    CodecTools t;
    if (const char* d = std::getenv("AVR_DECODER"); d && *d) t.decoder = d;
    if (const char* e = std::getenv("AVR_ENCODER"); e && *e) t.encoder = e;
    return t;
  }
};

namespace detail {

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

inline std::string expand_template(std::string tmpl,
                                   const std::vector<std::pair<std::string, std::string>>& vars) {
  for (const auto& [key, value] : vars) {
    const std::string token = "{" + key + "}";
    for (std::size_t pos = tmpl.find(token); pos != std::string::npos;
         pos = tmpl.find(token, pos + value.size()))
      tmpl.replace(pos, token.size(), value);
  }
  return tmpl;
}

inline bool is_frame_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

inline fs::path make_temp_dir(const std::string& prefix) {
  std::string tmpl = (fs::temp_directory_path() / (prefix + "XXXXXX")).string();
  require(::mkdtemp(tmpl.data()) != nullptr, ErrorCode::kIoError,
          "cannot create temporary directory");
  return tmpl;
}

}  // namespace detail

// Reads a directory of PNG frames in lexicographic filename order.
inline StorageClip load_frame_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && detail::is_frame_file(entry.path()))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  StorageClip clip;
  clip.source_id = dir.filename().string();
  if (clip.source_id.empty()) clip.source_id = dir.parent_path().filename().string();
  for (const auto& f : files) {
    png::Rgb8Image img = png::read(f);
    clip.frames.emplace_back(img.height, img.width, std::move(img.pixels));
  }
  clip.validate();
  return clip;
}

// Runs the configured decoder on a container file and loads the frames.
inline StorageClip decode_container(const fs::path& file, const CodecTools& tools) {
  require(tools.decoder.has_value(), ErrorCode::kDecoderUnavailable,
          "no external decoder configured (set AVR_DECODER) for ", file);
  const fs::path tmp = detail::make_temp_dir("avr-decode-");
  const std::string cmd = detail::expand_template(
      *tools.decoder, {{"input", detail::shell_quote(file.string())},
                       {"output", detail::shell_quote(tmp.string())}});
  const int rc = std::system(cmd.c_str());
  StorageClip clip;
  try {
    require(rc == 0, ErrorCode::kIoError, "decoder exited with status ", rc,
            " for ", file);
    clip = load_frame_dir(tmp);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  fs::remove_all(tmp);
  clip.source_id = file.stem().string();
  return clip;
}

inline StorageClip load_clip(const fs::path& path,
                             const CodecTools& tools = CodecTools::from_env()) {
  require(fs::exists(path), ErrorCode::kNotFound, "no such path: ", path);
  if (fs::is_directory(path)) return load_frame_dir(path);
  return decode_container(path, tools);
}

inline std::string frame_filename(std::size_t index) {
  std::string digits = std::to_string(index);
  return std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits + ".png";
}

// Writes one PNG per frame as NNNNNN.png. Only storage-form clips are
// accepted; compute clips must be quantized with to_storage first.
template <PixelType T>
  requires(PixelTraits<T>::form == PixelForm::kStorage)
ManifestEntry save_clip(const Clip<T>& clip, const fs::path& dir) {
  clip.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::kIoError,
          "cannot create directory ", dir, (ec ? ": " + ec.message() : ""));
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    const auto& f = clip.frames[i];
    png::write(dir / frame_filename(i), {f.height(), f.width(), f.data()});
  }
  return {clip.source_id, clip.frames.size(), Split::kTrain};
}

// Encodes a frame directory written by save_clip into a container.
inline void encode_container(const fs::path& frame_dir, const fs::path& out,
                             double fps, const CodecTools& tools) {
  require(tools.encoder.has_value(), ErrorCode::kDecoderUnavailable,
          "no external encoder configured (set AVR_ENCODER)");
  const std::string cmd = detail::expand_template(
      *tools.encoder, {{"input", detail::shell_quote(frame_dir.string())},
                       {"output", detail::shell_quote(out.string())},
                       {"fps", std::to_string(fps)}});
  const int rc = std::system(cmd.c_str());
  require(rc == 0 && fs::exists(out), ErrorCode::kIoError,
          "encoder exited with status ", rc);
}

struct CropOffset {
  int top = 0;
  int left = 0;
};

inline CropOffset center_crop_offset(int height, int width, int size) {
  return {(height - size) / 2, (width - size) / 2};
}

template <PixelType T>
Frame<T> crop_frame(const Frame<T>& f, int top, int left, int h, int w) {
  Frame<T> out(h, w);
  for (int y = 0; y < h; ++y)
    std::copy_n(f.row(top + y) + static_cast<std::size_t>(left) * 3,
                static_cast<std::size_t>(w) * 3, out.row(y));
  return out;
}

// Centered size x size region of every frame; an odd leftover margin puts
// the extra row/column at the bottom/right.
template <PixelType T>
Clip<T> center_crop(const Clip<T>& clip, int size) {
  clip.validate();
  require(size >= 1 && size <= std::min(clip.height(), clip.width()),
          ErrorCode::kCropTooLarge, "crop ", size, " exceeds frame ",
          clip.height(), "x", clip.width());
  const CropOffset off = center_crop_offset(clip.height(), clip.width(), size);
  Clip<T> out{{}, clip.fps, clip.source_id};
  out.frames.reserve(clip.frames.size());
  for (const auto& f : clip.frames)
    out.frames.push_back(crop_frame(f, off.top, off.left, size, size));
  return out;
}

// Source index for position i of a sequence of n frames extended by mirror
// reflection past its tail: ..., n-2, n-1, n-2, n-3, ...
inline std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t r = i % period;
  return r < n ? r : period - r;
}

struct WindowIndices {
  std::size_t start = 0;
  std::vector<std::size_t> source;  // t source indices, reflected past the tail
};

inline std::vector<WindowIndices> window_indices(std::size_t n, std::size_t t,
                                                 std::size_t stride) {
  require(t >= 1 && stride >= 1, ErrorCode::kInvalidParam,
          "window: t and stride must be >= 1");
  require(n >= 1, ErrorCode::kEmptyClip, "window: empty clip");
  const std::size_t count = n <= t ? 1 : (n - t + stride - 1) / stride + 1;
  std::vector<WindowIndices> out(count);
  for (std::size_t w = 0; w < count; ++w) {
    out[w].start = w * stride;
    for (std::size_t k = 0; k < t; ++k)
      out[w].source.push_back(reflect_index(w * stride + k, n));
  }
  return out;
}

// Consecutive t-frame windows starting at 0, stride apart, reflect-padded
// at the tail.
template <PixelType T>
std::vector<Clip<T>> window(const Clip<T>& clip, std::size_t t, std::size_t stride) {
  clip.validate();
  std::vector<Clip<T>> out;
  for (const auto& w : window_indices(clip.frames.size(), t, stride)) {
    Clip<T> c{{}, clip.fps, clip.source_id};
    for (std::size_t s : w.source) c.frames.push_back(clip.frames[s]);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace avr
