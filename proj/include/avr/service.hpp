// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <httplib.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/archive.hpp"
#include "avr/inference.hpp"
#include "avr/model.hpp"
#include "avr/png.hpp"
#include "avr/video_io.hpp"

namespace avr::service {

struct ServiceConfig {
  fs::path data_dir = "avr-data";
  std::optional<fs::path> examples_dir;
  std::optional<fs::path> static_dir;  // UI bundle served at /
  std::size_t max_upload_bytes = 500u << 20;
  std::size_t max_frames = 25 * 600;  // duration limit, in frames
  bool reject_duplicate_jobs = true;
  std::string container_type = "video/mp4";  // content type of AVR_ENCODER output
  std::string container_ext = "mp4";
  CodecTools codecs = CodecTools::from_env();
  std::chrono::milliseconds window_delay{0};  // throttles the worker, for demos and tests
};

enum class JobState { kQueued, kRunning, kDone, kFailed };

inline std::string state_name(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "failed";
}

inline JobState parse_state(const std::string& s) {
  if (s == "queued") return JobState::kQueued;
  if (s == "running") return JobState::kRunning;
  if (s == "done") return JobState::kDone;
  if (s == "failed") return JobState::kFailed;
  fail(ErrorCode::kInvalidParam, "unknown job state '", s, "'");
}

struct RestoreJob {
  std::string id;
  std::string video_id;
  JobState state = JobState::kQueued;
  double progress = 0.0;
  std::string input_ref;
  std::optional<std::string> output_ref;  // set iff done
  std::optional<std::string> error;       // set iff failed
  std::string created_at;
  std::optional<std::string> finished_at;
  std::uint64_t seq = 0;  // FIFO order
};

inline nlohmann::json to_json(const RestoreJob& j) {
  auto opt = [](const std::optional<std::string>& s) {
    return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
  };
  return {{"id", j.id},
          {"video_id", j.video_id},
          {"state", state_name(j.state)},
          {"progress", j.progress},
          {"input_ref", j.input_ref},
          {"output_ref", opt(j.output_ref)},
          {"error", opt(j.error)},
          {"created_at", j.created_at},
          {"finished_at", opt(j.finished_at)},
          {"seq", j.seq}};
}

inline RestoreJob job_from_json(const nlohmann::json& j) {
  RestoreJob r;
  r.id = j.at("id").get<std::string>();
  r.video_id = j.at("video_id").get<std::string>();
  r.state = parse_state(j.at("state").get<std::string>());
  r.progress = j.at("progress").get<double>();
  r.input_ref = j.at("input_ref").get<std::string>();
  if (!j.at("output_ref").is_null()) r.output_ref = j.at("output_ref").get<std::string>();
  if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  r.created_at = j.at("created_at").get<std::string>();
  if (!j.at("finished_at").is_null()) r.finished_at = j.at("finished_at").get<std::string>();
  r.seq = j.value("seq", std::uint64_t{0});
  return r;
}

struct VideoRecord {
  std::string id;
  std::string blob;  // frame directory under blobs/
  std::string source = "upload";  // or "example"
  std::string filename;
  std::size_t frames = 0;
  double fps = 25.0;
  int width = 0, height = 0;
  std::string created_at;
  std::optional<std::string> job_id;  // latest job
};

inline nlohmann::json to_json(const VideoRecord& v) {
  return {{"video_id", v.id},
          {"blob", v.blob},
          {"source", v.source},
          {"filename", v.filename},
          {"frames", v.frames},
          {"fps", v.fps},
          {"width", v.width},
          {"height", v.height},
          {"created_at", v.created_at},
          {"job_id", v.job_id ? nlohmann::json(*v.job_id) : nlohmann::json(nullptr)}};
}

inline VideoRecord video_from_json(const nlohmann::json& j) {
  VideoRecord v;
  v.id = j.at("video_id").get<std::string>();
  v.blob = j.at("blob").get<std::string>();
  v.source = j.at("source").get<std::string>();
  v.filename = j.at("filename").get<std::string>();
  v.frames = j.at("frames").get<std::size_t>();
  v.fps = j.at("fps").get<double>();
  v.width = j.at("width").get<int>();
  v.height = j.at("height").get<int>();
  v.created_at = j.at("created_at").get<std::string>();
  if (!j.at("job_id").is_null()) v.job_id = j.at("job_id").get<std::string>();
  return v;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// Decoded upload, or an HTTP status explaining why not.
struct DecodedUpload {
  std::optional<StorageClip> clip;
  int status = 200;
  std::string message;
};

// Accepts a ZIP of PNG frames (name order), a single PNG, or any container
// the external decoder understands.
inline DecodedUpload decode_upload(const std::string& bytes, const std::string& filename,
                                   const CodecTools& codecs) {
  DecodedUpload out;
  try {
    StorageClip clip;
    if (zip::has_zip_signature(bytes)) {
      auto entries = zip::read(bytes);
      std::sort(entries.begin(), entries.end(),
                [](const zip::Entry& a, const zip::Entry& b) { return a.name < b.name; });
      for (const auto& e : entries) {
        if (e.name.ends_with('/') || !avr::detail::is_frame_file(e.name)) continue;
        png::Rgb8Image img = png::decode(e.data);
        clip.frames.emplace_back(img.height, img.width, std::move(img.pixels));
      }
    } else if (png::has_png_signature(bytes)) {
      png::Rgb8Image img = png::decode(bytes);
      clip.frames.emplace_back(img.height, img.width, std::move(img.pixels));
    } else {
      if (!codecs.decoder) {
        out.status = 415;
        out.message = "not a frame zip or PNG, and no external decoder is configured";
        return out;
      }
      const fs::path tmp = avr::detail::make_temp_dir("avr-upload-");
      const fs::path file = tmp / ("upload" + fs::path(filename).extension().string());
      zip::write_file(file.string(), bytes);
      try {
        clip = decode_container(file, codecs);
      } catch (...) {
        fs::remove_all(tmp);
        throw;
      }
      fs::remove_all(tmp);
    }
    clip.validate();
    out.clip = std::move(clip);
  } catch (const Error& e) {
    out.status = 415;
    out.message = e.what();
  }
  return out;
}

// File-backed store: videos/<id>.json, jobs/<id>.json and blobs/<ref>/.
// Every mutation goes through one mutex and is written atomically.
class Store {
 public:
  explicit Store(fs::path root) : root_(std::move(root)) {
    for (const char* d : {"videos", "jobs", "blobs"}) fs::create_directories(root_ / d);
    for (const auto& e : fs::directory_iterator(root_ / "videos"))
      if (e.path().extension() == ".json") {
        VideoRecord v = video_from_json(read_json(e.path()));
        videos_.emplace(v.id, std::move(v));
      }
    for (const auto& e : fs::directory_iterator(root_ / "jobs"))
      if (e.path().extension() == ".json") {
        RestoreJob j = job_from_json(read_json(e.path()));
        next_seq_ = std::max(next_seq_, j.seq + 1);
        jobs_.emplace(j.id, std::move(j));
      }
  }

  fs::path blob_dir(const std::string& ref) const { return root_ / "blobs" / ref; }

  // Stores frames under their content hash; returns the ref.
  std::string put_frames(const StorageClip& clip) {
    std::uint64_t h = fnv1a(std::to_string(clip.height()) + "x" + std::to_string(clip.width()));
    for (const auto& f : clip.frames)
      h = fnv1a({reinterpret_cast<const char*>(f.data().data()), f.data().size()}, h);
    const std::string ref = "f" + hex64(h);
    const fs::path dir = blob_dir(ref);
    if (!fs::exists(dir / "clip.json")) {
      const fs::path tmp = root_ / "blobs" / (ref + ".tmp" + unique_suffix());
      save_clip(clip, tmp);
      write_atomic(tmp / "clip.json", nlohmann::json{{"frames", clip.size()}, {"fps", clip.fps}}.dump());
      std::error_code ec;
      fs::rename(tmp, dir, ec);
      if (ec) fs::remove_all(tmp);  // stored concurrently by someone else
    }
    return ref;
  }

  StorageClip get_frames(const std::string& ref) const {
    StorageClip c = load_frame_dir(blob_dir(ref));
    c.fps = read_json(blob_dir(ref) / "clip.json").value("fps", 25.0);
    return c;
  }

  std::optional<VideoRecord> video(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = videos_.find(id);
    return it == videos_.end() ? std::nullopt : std::optional(it->second);
  }

  std::optional<RestoreJob> job(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    return it == jobs_.end() ? std::nullopt : std::optional(it->second);
  }

  std::vector<RestoreJob> jobs() const {
    std::lock_guard lock(mu_);
    std::vector<RestoreJob> out;
    for (const auto& [_, j] : jobs_) out.push_back(j);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
    return out;
  }

  void put_video(const VideoRecord& v) {
    std::lock_guard lock(mu_);
    write_atomic(root_ / "videos" / (v.id + ".json"), to_json(v).dump(2));
    videos_[v.id] = v;
  }

  // New queued job for `video`, unless `reject_active` and one is pending.
  std::optional<RestoreJob> create_job(const std::string& video_id, bool reject_active) {
    std::lock_guard lock(mu_);
    VideoRecord& v = videos_.at(video_id);
    if (reject_active)
      for (const auto& [_, j] : jobs_)
        if (j.video_id == video_id &&
            (j.state == JobState::kQueued || j.state == JobState::kRunning))
          return std::nullopt;
    RestoreJob j;
    j.id = "j" + hex64(mix_seed(next_seq_, fnv1a(video_id), fnv1a(unique_suffix())));
    j.video_id = video_id;
    j.input_ref = v.blob;
    j.created_at = utc_now();
    j.seq = next_seq_++;
    write_atomic(root_ / "jobs" / (j.id + ".json"), to_json(j).dump(2));
    jobs_[j.id] = j;
    v.job_id = j.id;
    write_atomic(root_ / "videos" / (v.id + ".json"), to_json(v).dump(2));
    return j;
  }

  // Applies `edit` to a job and persists it. Returns false for unknown ids.
  template <typename F>
  bool update_job(const std::string& id, F&& edit) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return false;
    RestoreJob j = it->second;
    edit(j);
    write_atomic(root_ / "jobs" / (j.id + ".json"), to_json(j).dump(2));
    it->second = std::move(j);
    return true;
  }

  static std::string unique_suffix() {
    static std::atomic<std::uint64_t> counter{0};
    static const std::uint64_t boot = std::random_device{}() ^
                                      static_cast<std::uint64_t>(::getpid()) << 32 ^
                                      static_cast<std::uint64_t>(std::chrono::steady_clock::now()
                                                                     .time_since_epoch()
                                                                     .count());
    return hex64(mix_seed(boot, counter++));
  }

 private:
  static nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
  }

  static void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
      require(out.good(), ErrorCode::kIoError, "cannot write ", tmp);
    }
    fs::rename(tmp, path);
  }

  fs::path root_;
  mutable std::mutex mu_;
  std::map<std::string, VideoRecord> videos_;
  std::map<std::string, RestoreJob> jobs_;
  std::uint64_t next_seq_ = 0;
};

struct Example {
  std::string id;
  std::string title;
  fs::path path;  // frame directory or container
};

// Each entry of the examples directory is a clip: a frame directory (with an
// optional title.txt) or a container file.
inline std::vector<Example> list_examples(const fs::path& dir) {
  std::vector<Example> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    Example ex{e.path().stem().string(), e.path().stem().string(), e.path()};
    if (e.is_directory()) {
      std::ifstream t(e.path() / "title.txt");
      std::string title;
      if (std::getline(t, title) && !title.empty()) ex.title = title;
    } else if (!e.is_regular_file()) {
      continue;
    }
    out.push_back(std::move(ex));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

// REST job service around restore_video. One worker restores queued jobs in
// FIFO order; jobs left running by a crash are queued again on startup.
class Service {
 public:
  Service(ServiceConfig cfg, RestorationModel model)
      : cfg_(std::move(cfg)), model_(std::move(model)), store_(cfg_.data_dir) {
    for (const auto& j : store_.jobs()) {
      if (j.state == JobState::kRunning)
        store_.update_job(j.id, [](RestoreJob& r) { r.state = JobState::kQueued; });
      if (j.state == JobState::kQueued || j.state == JobState::kRunning) queue_.push_back(j.id);
    }
    if (cfg_.examples_dir)
      for (auto& e : list_examples(*cfg_.examples_dir)) examples_.emplace(e.id, std::move(e));
    routes();
    worker_ = std::thread([this] { work(); });
  }

  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    require(port_ > 0, ErrorCode::kIoError, "cannot bind ", host, ":", port);
    listener_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    require(http_.bind_to_port(host, port), ErrorCode::kIoError, "cannot bind ", host, ":", port);
    port_ = port;
    http_.listen_after_bind();
  }

  void stop() {
    http_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  int port() const { return port_; }
  Store& store() { return store_; }
  httplib::Server& http() { return http_; }

 private:
  struct Stopped {};

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  void routes() {
    http_.set_payload_max_length(cfg_.max_upload_bytes);
    if (cfg_.static_dir) http_.set_mount_point("/", cfg_.static_dir->string());
    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                   std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      } catch (...) {
        send_error(res, 500, "internal error");
      }
    });

    http_.Post("/api/videos", [this](const httplib::Request& req, httplib::Response& res) {
      upload(req, res);
    });
    http_.Get(R"(/api/videos/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto v = store_.video(req.matches[1]);
      if (!v) return send_error(res, 404, "unknown video");
      nlohmann::json body = to_json(*v);
      body.erase("blob");
      send_json(res, 200, body);
    });
    http_.Get(R"(/api/videos/([^/]+)/frames/(\d+)\.png)",
              [this](const httplib::Request& req, httplib::Response& res) {
                const auto v = store_.video(req.matches[1]);
                if (!v) return send_error(res, 404, "unknown video");
                send_frame(res, v->blob, std::stoul(req.matches[2]));
              });
    http_.Get(R"(/api/videos/([^/]+)/original)",
              [this](const httplib::Request& req, httplib::Response& res) {
                const auto v = store_.video(req.matches[1]);
                if (!v) return send_error(res, 404, "unknown video");
                send_clip(req, res, v->blob, v->fps);
              });
    http_.Get(R"(/api/videos/([^/]+)/restored)",
              [this](const httplib::Request& req, httplib::Response& res) {
                std::string ref;
                if (!restored_ref(req.matches[1], res, ref)) return;
                send_clip(req, res, ref, store_.video(req.matches[1])->fps);
              });
    http_.Get(R"(/api/videos/([^/]+)/restored/frames/(\d+)\.png)",
              [this](const httplib::Request& req, httplib::Response& res) {
                std::string ref;
                if (!restored_ref(req.matches[1], res, ref)) return;
                send_frame(res, ref, std::stoul(req.matches[2]));
              });
    http_.Get(R"(/api/videos/([^/]+)/comparison)",
              [this](const httplib::Request& req, httplib::Response& res) {
                std::string ref;
                const std::string id = req.matches[1];
                if (!restored_ref(id, res, ref)) return;
                const std::string base = "/api/videos/" + id;
                nlohmann::json pairs = nlohmann::json::array();
                for (std::size_t i = 0; i < store_.video(id)->frames; ++i)
                  pairs.push_back({{"index", i},
                                   {"original", base + "/frames/" + std::to_string(i) + ".png"},
                                   {"restored", base + "/restored/frames/" + std::to_string(i) + ".png"}});
                send_json(res, 200, {{"original_url", base + "/original"},
                                     {"restored_url", base + "/restored"},
                                     {"per_frame_pairs", pairs}});
              });

    http_.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      create_job(req, res);
    });
    http_.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto j = store_.job(req.matches[1]);
      if (!j) return send_error(res, 404, "unknown job");
      send_json(res, 200, to_json(*j));
    });

    http_.Get("/api/examples", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& [id, e] : examples_)
        list.push_back({{"example_id", id},
                        {"title", e.title},
                        {"thumbnail_url", "/api/examples/" + id + "/thumbnail.png"}});
      send_json(res, 200, list);
    });
    http_.Get(R"(/api/examples/([^/]+)/thumbnail\.png)",
              [this](const httplib::Request& req, httplib::Response& res) {
                auto it = examples_.find(req.matches[1]);
                if (it == examples_.end()) return send_error(res, 404, "unknown example");
                const std::string ref = example_video(it->second).blob;
                send_frame(res, ref, 0);
              });
  }

  void upload(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("file"))
      return send_error(res, 400, "expected multipart/form-data with a 'file' part");
    const httplib::MultipartFormData file = req.get_file_value("file");
    if (file.content.size() > cfg_.max_upload_bytes) return send_error(res, 413, "upload too large");
    DecodedUpload d = decode_upload(file.content, file.filename, cfg_.codecs);
    if (!d.clip) return send_error(res, d.status, d.message);
    if (d.clip->size() > cfg_.max_frames)
      return send_error(res, 413, "clip has " + std::to_string(d.clip->size()) +
                                      " frames, limit is " + std::to_string(cfg_.max_frames));
    if (req.has_file("fps")) {
      try {
        d.clip->fps = std::stod(req.get_file_value("fps").content);
      } catch (const std::exception&) {
        return send_error(res, 400, "bad fps field");
      }
    }
    VideoRecord v;
    v.id = "v" + Store::unique_suffix();
    v.blob = store_.put_frames(*d.clip);
    v.filename = file.filename;
    v.frames = d.clip->size();
    v.fps = d.clip->fps;
    v.width = d.clip->width();
    v.height = d.clip->height();
    v.created_at = utc_now();
    store_.put_video(v);
    send_json(res, 201, {{"video_id", v.id}});
  }

  // Video record of an example clip, created on first use.
  VideoRecord example_video(const Example& e) {
    const std::string id = "example-" + e.id;
    if (auto v = store_.video(id)) return *v;
    std::lock_guard lock(example_mu_);
    if (auto v = store_.video(id)) return *v;
    StorageClip clip = load_clip(e.path, cfg_.codecs);
    VideoRecord v;
    v.id = id;
    v.blob = store_.put_frames(clip);
    v.source = "example";
    v.filename = e.path.filename().string();
    v.frames = clip.size();
    v.fps = clip.fps;
    v.width = clip.width();
    v.height = clip.height();
    v.created_at = utc_now();
    store_.put_video(v);
    return v;
  }

  void create_job(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "body must be JSON");
    }
    std::string video_id;
    if (body.contains("video_id") && body["video_id"].is_string()) {
      video_id = body["video_id"];
      if (!store_.video(video_id)) return send_error(res, 404, "unknown video");
    } else if (body.contains("example_id") && body["example_id"].is_string()) {
      auto it = examples_.find(body["example_id"].get<std::string>());
      if (it == examples_.end()) return send_error(res, 404, "unknown example");
      video_id = example_video(it->second).id;
    } else {
      return send_error(res, 400, "expected video_id or example_id");
    }
    const auto job = store_.create_job(video_id, cfg_.reject_duplicate_jobs);
    if (!job) return send_error(res, 409, "video already has an active job");
    {
      std::lock_guard lock(mu_);
      queue_.push_back(job->id);
    }
    cv_.notify_all();
    nlohmann::json out = to_json(*job);
    out["job_id"] = job->id;
    send_json(res, 201, out);
  }

  bool restored_ref(const std::string& video_id, httplib::Response& res, std::string& ref) {
    const auto v = store_.video(video_id);
    if (!v) {
      send_error(res, 404, "unknown video");
      return false;
    }
    const auto j = v->job_id ? store_.job(*v->job_id) : std::nullopt;
    if (!j || j->state != JobState::kDone) {
      send_error(res, 409, "restoration not done");
      return false;
    }
    ref = *j->output_ref;
    return true;
  }

  void send_frame(httplib::Response& res, const std::string& ref, std::size_t index) {
    const fs::path p = store_.blob_dir(ref) / frame_filename(index);
    if (!fs::exists(p)) return send_error(res, 404, "no such frame");
    res.set_content(zip::read_file(p.string()), "image/png");
  }

  // Container when an encoder is configured (and not ?format=zip), else a
  // ZIP of NNNNNN.png frames.
  void send_clip(const httplib::Request& req, httplib::Response& res, const std::string& ref,
                 double fps) {
    const fs::path dir = store_.blob_dir(ref);
    if (cfg_.codecs.encoder && req.get_param_value("format") != "zip") {
      const fs::path out = dir.string() + "." + cfg_.container_ext;
      if (!fs::exists(out)) {
        const fs::path tmp = dir.string() + ".tmp" + Store::unique_suffix() + "." + cfg_.container_ext;
        encode_container(dir, tmp, fps, cfg_.codecs);
        fs::rename(tmp, out);
      }
      res.set_header("Content-Disposition", "attachment; filename=\"" + ref + "." + cfg_.container_ext + "\"");
      res.set_content(zip::read_file(out.string()), cfg_.container_type);
      return;
    }
    std::vector<zip::Entry> entries;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (avr::detail::is_frame_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      entries.push_back({f.filename().string(), zip::read_file(f.string())});
    res.set_header("Content-Disposition", "attachment; filename=\"" + ref + ".zip\"");
    res.set_content(zip::write(entries), "application/zip");
  }

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      try {
        run_job(id);
      } catch (const Stopped&) {
        return;  // left running; queued again on next startup
      }
    }
  }

  void run_job(const std::string& id) {
    const auto job = store_.job(id);
    if (!job || job->state != JobState::kQueued) return;
    store_.update_job(id, [](RestoreJob& j) { j.state = JobState::kRunning; });
    try {
      const StorageClip input = store_.get_frames(job->input_ref);
      const StorageClip out = restore_video(model_, input, [&](std::size_t done, std::size_t total) {
        if (cfg_.window_delay.count() > 0) std::this_thread::sleep_for(cfg_.window_delay);
        {
          std::lock_guard lock(mu_);
          if (stopping_) throw Stopped{};
        }
        const double p = static_cast<double>(done) / static_cast<double>(total);
        store_.update_job(id, [&](RestoreJob& j) { j.progress = std::max(j.progress, p); });
      });
      const std::string ref = store_.put_frames(out);
      store_.update_job(id, [&](RestoreJob& j) {
        j.state = JobState::kDone;
        j.progress = 1.0;
        j.output_ref = ref;
        j.finished_at = utc_now();
      });
    } catch (const Stopped&) {
      throw;
    } catch (const std::exception& e) {
      store_.update_job(id, [&](RestoreJob& j) {
        j.state = JobState::kFailed;
        j.error = e.what();
        j.finished_at = utc_now();
      });
    }
  }

  ServiceConfig cfg_;
  RestorationModel model_;
  Store store_;
  std::map<std::string, Example> examples_;
  std::mutex example_mu_;
  httplib::Server http_;
  std::thread listener_, worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  int port_ = -1;
};

}  // namespace avr::service
