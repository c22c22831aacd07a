// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <array>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "avr/inference.hpp"
#include "avr/losses.hpp"
#include "avr/metrics.hpp"
#include "avr/model.hpp"
#include "avr/png.hpp"
#include "avr/video_io.hpp"

namespace avr {

// ---------------------------------------------------------------------------
// Configuration

enum class ScheduleKind { kConstant, kCosine };

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kCosine;
  int warmup_steps = 0;
};

struct TrainConfig {
  int crop = 256;
  int t = 5;
  int batch_size = 8;
  int steps = 10000;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  LossWeights weights;
  std::uint64_t seed = 0;
  int val_every = 500;         // 0 disables validation
  int checkpoint_every = 0;    // 0: same as val_every
  int val_crop = 512;          // center crop for validation, reduced to fit
  fs::path checkpoint_dir = "checkpoints";
  std::optional<fs::path> extractor;  // feature extractor weights file
  bool prefetch = true;

  void validate(const ModelConfig& model) const {
    require(batch_size >= 1 && steps >= 0 && crop >= 1 && val_every >= 0 &&
                checkpoint_every >= 0 && val_crop >= 1,
            ErrorCode::kInvalidParam,
            "train config: batch_size >= 1, steps >= 0, crop >= 1 required");
    require(t == model.t, ErrorCode::kInvalidParam, "train config t = ", t,
            " differs from model t = ", model.t);
    require(crop % model.row_granularity() == 0 && crop % model.col_granularity() == 0,
            ErrorCode::kInvalidParam, "crop ", crop, " not divisible by model granularity ",
            model.row_granularity(), "x", model.col_granularity());
    require(optimizer.lr >= 0.0 && optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 &&
                optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 && optimizer.eps > 0.0 &&
                optimizer.weight_decay >= 0.0,
            ErrorCode::kInvalidParam, "train config: invalid optimizer settings");
    require(schedule.warmup_steps >= 0, ErrorCode::kInvalidParam,
            "train config: warmup_steps >= 0");
    weights.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {
      {"crop", c.crop},
      {"t", c.t},
      {"batch_size", c.batch_size},
      {"steps", c.steps},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"lr_schedule",
       {{"kind", c.schedule.kind == ScheduleKind::kCosine ? "cosine" : "constant"},
        {"warmup_steps", c.schedule.warmup_steps}}},
      {"weights", {{"pixel", c.weights.pixel}, {"perceptual", c.weights.perceptual}}},
      {"seed", c.seed},
      {"val_every", c.val_every},
      {"checkpoint_every", c.checkpoint_every},
      {"val_crop", c.val_crop},
      {"checkpoint_dir", c.checkpoint_dir.string()},
      {"prefetch", c.prefetch}};
  j["extractor"] = c.extractor ? nlohmann::json(c.extractor->string()) : nlohmann::json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    auto get = [](const nlohmann::json& o, const char* k, auto& v) {
      if (o.contains(k)) o.at(k).get_to(v);
    };
    get(j, "crop", c.crop);
    get(j, "t", c.t);
    get(j, "batch_size", c.batch_size);
    get(j, "steps", c.steps);
    get(j, "seed", c.seed);
    get(j, "val_every", c.val_every);
    get(j, "checkpoint_every", c.checkpoint_every);
    get(j, "val_crop", c.val_crop);
    get(j, "prefetch", c.prefetch);
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    if (j.contains("extractor") && !j.at("extractor").is_null())
      c.extractor = j.at("extractor").get<std::string>();
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      if (o.contains("kind"))
        require(o.at("kind") == "adam" || o.at("kind") == "adamw", ErrorCode::kInvalidParam,
                "unsupported optimizer ", o.at("kind").dump());
      get(o, "lr", c.optimizer.lr);
      get(o, "eps", c.optimizer.eps);
      get(o, "weight_decay", c.optimizer.weight_decay);
      if (o.contains("betas")) {
        const auto b = o.at("betas").get<std::array<double, 2>>();
        c.optimizer.beta1 = b[0];
        c.optimizer.beta2 = b[1];
      }
    }
    if (j.contains("lr_schedule")) {
      const auto& s = j.at("lr_schedule");
      if (s.contains("kind")) {
        const auto kind = s.at("kind").get<std::string>();
        require(kind == "constant" || kind == "cosine", ErrorCode::kInvalidParam,
                "unknown lr schedule ", kind);
        c.schedule.kind = kind == "cosine" ? ScheduleKind::kCosine : ScheduleKind::kConstant;
      }
      get(s, "warmup_steps", c.schedule.warmup_steps);
    }
    if (j.contains("weights")) {
      get(j.at("weights"), "pixel", c.weights.pixel);
      get(j.at("weights"), "perceptual", c.weights.perceptual);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed train config: ", e.what());
  }
  return c;
}

inline TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kNotFound, "train config ", path, " not found");
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kInvalidParam, "cannot parse ", path, ": ", e.what());
  }
}

// Learning rate used for the update of step `step` (0-based).
inline double learning_rate(const TrainConfig& c, int step) {
  const double base = c.optimizer.lr;
  const int warm = c.schedule.warmup_steps;
  if (step < warm) return base * (step + 1) / warm;
  if (c.schedule.kind == ScheduleKind::kConstant) return base;
  const int span = std::max(1, c.steps - warm);
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Patch sampling

struct Batch {
  Tensor degraded;  // (B,T,3,crop,crop)
  Tensor gt;
};

// Random aligned (degraded, gt) windows from one split of a manifest.
class PatchSampler {
 public:
  PatchSampler(const ClipManifest& manifest, Split split, int t, int crop)
      : manifest_(manifest), t_(t), crop_(crop) {
    for (const auto* e : manifest.split(split)) {
      require(e->frame_count >= static_cast<std::size_t>(t), ErrorCode::kSampleError, "clip '",
              e->source_id, "' has ", e->frame_count, " frames, fewer than t = ", t);
      const auto [h, w] = png::dimensions(manifest.clip_dir(*e, "gt") / frame_filename(0));
      require(h >= crop && w >= crop, ErrorCode::kSampleError, "clip '", e->source_id, "' is ",
              h, "x", w, ", smaller than crop ", crop);
      clips_.push_back({e, h, w});
    }
    require(!clips_.empty(), ErrorCode::kNoData, "no ", split_name(split), " clips to sample");
  }

  struct Draw {
    std::size_t clip = 0;  // index into entries()
    int start = 0, top = 0, left = 0;
  };

  // Clip uniformly, then start frame and crop origin uniformly within it.
  Draw draw(std::mt19937_64& rng) const {
    Draw d;
    d.clip = std::uniform_int_distribution<std::size_t>(0, clips_.size() - 1)(rng);
    const Clip& c = clips_[d.clip];
    d.start = std::uniform_int_distribution<int>(0, static_cast<int>(c.entry->frame_count) - t_)(rng);
    d.top = std::uniform_int_distribution<int>(0, c.h - crop_)(rng);
    d.left = std::uniform_int_distribution<int>(0, c.w - crop_)(rng);
    return d;
  }

  // Writes the (t,3,crop,crop) degraded and gt windows of `d`.
  void read(const Draw& d, double* degraded, double* gt) const {
    const ManifestEntry& e = *clips_.at(d.clip).entry;
    read_window(manifest_.clip_dir(e, "degraded"), d.start, d.top, d.left, degraded);
    read_window(manifest_.clip_dir(e, "gt"), d.start, d.top, d.left, gt);
  }

  void sample(std::mt19937_64& rng, double* degraded, double* gt) const {
    read(draw(rng), degraded, gt);
  }

  Batch batch(std::mt19937_64& rng, int size) const {
    const std::int64_t B = size;
    Batch b{Tensor({B, t_, 3, crop_, crop_}), Tensor({B, t_, 3, crop_, crop_})};
    const std::size_t stride = static_cast<std::size_t>(t_) * 3 * crop_ * crop_;
    for (int i = 0; i < size; ++i)
      sample(rng, b.degraded.data() + i * stride, b.gt.data() + i * stride);
    return b;
  }

  int t() const { return t_; }
  int crop() const { return crop_; }
  std::size_t clip_count() const { return clips_.size(); }
  const ManifestEntry& entry(std::size_t i) const { return *clips_.at(i).entry; }

 private:
  struct Clip {
    const ManifestEntry* entry;
    int h, w;
  };

  void read_window(const fs::path& dir, int start, int top, int left, double* out) const {
    const std::size_t plane = static_cast<std::size_t>(crop_) * crop_;
    for (int k = 0; k < t_; ++k) {
      const png::Rgb8Image img = png::read(dir / frame_filename(static_cast<std::size_t>(start + k)));
      require(img.height >= top + crop_ && img.width >= left + crop_, ErrorCode::kSampleError,
              "frame ", start + k, " in ", dir, " is smaller than its clip's first frame");
      double* f = out + static_cast<std::size_t>(k) * 3 * plane;
      for (int y = 0; y < crop_; ++y)
        for (int x = 0; x < crop_; ++x) {
          const std::uint8_t* px =
              img.pixels.data() + (static_cast<std::size_t>(top + y) * img.width + left + x) * 3;
          for (int c = 0; c < 3; ++c)
            f[c * plane + static_cast<std::size_t>(y) * crop_ + x] = px[c] / 255.0;
        }
    }
  }

  const ClipManifest& manifest_;
  int t_, crop_;
  std::vector<Clip> clips_;
};

// One aligned (t,3,crop,crop) window pair from the train split.
inline Batch sample_patch_window(const ClipManifest& manifest, int t, int crop,
                                 std::mt19937_64& rng) {
  Batch b = PatchSampler(manifest, Split::kTrain, t, crop).batch(rng, 1);
  b.degraded = b.degraded.reshaped({t, 3, crop, crop});
  b.gt = b.gt.reshaped({t, 3, crop, crop});
  return b;
}

// Every step's batch comes from its own stream, so the sequence does not
// depend on where a run was resumed or on prefetching.
inline std::mt19937_64 batch_stream(std::uint64_t seed, int step) {
  return std::mt19937_64(mix_seed(seed, fnv1a("batch"), static_cast<std::uint64_t>(step)));
}

// Produces the batches of steps [first, last) on a background thread,
// at most `depth` ahead of the consumer.
class BatchPrefetcher {
 public:
  BatchPrefetcher(const PatchSampler& sampler, std::uint64_t seed, int batch_size, int first,
                  int last, std::size_t depth = 2)
      : depth_(depth) {
    worker_ = std::thread([=, this, &sampler] {
      for (int s = first; s < last; ++s) {
        Batch b;
        try {
          auto rng = batch_stream(seed, s);
          b = sampler.batch(rng, batch_size);
        } catch (...) {
          std::lock_guard lock(mu_);
          error_ = std::current_exception();
          cv_.notify_all();
          return;
        }
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || queue_.size() < depth_; });
        if (stop_) return;
        queue_.push_back(std::move(b));
        cv_.notify_all();
      }
    });
  }

  ~BatchPrefetcher() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  BatchPrefetcher(const BatchPrefetcher&) = delete;
  BatchPrefetcher& operator=(const BatchPrefetcher&) = delete;

  Batch next() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  std::size_t depth_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

// ---------------------------------------------------------------------------
// Optimization

struct TrainState {
  int step = 0;
  RestorationModel model;
  std::map<std::string, Tensor> adam_m, adam_v;
  double best_val_psnr = -kInf;
  std::uint64_t seed = 0;  // batch streams derive from (seed, step)
};

inline TrainState initial_state(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainState s;
  s.model = init_parameters(model_cfg, cfg.seed);
  s.seed = cfg.seed;
  for (const auto& [name, v] : s.model.params) {
    s.adam_m.emplace(name, Tensor(v.shape()));
    s.adam_v.emplace(name, Tensor(v.shape()));
  }
  return s;
}

// One forward/backward pass and Adam update. Parameters are left untouched
// when the loss or any gradient is non-finite.
inline LossReport train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg,
                             const FeatureExtractor* extractor) {
  state.model.zero_grad();
  const ag::Var pred = forward_restore(state.model, ag::constant(batch.degraded));
  const Loss loss = combined_loss(pred, ag::constant(batch.gt), cfg.weights, extractor);
  require(std::isfinite(loss.report.total), ErrorCode::kNumericalError,
          "non-finite loss at step ", state.step);
  ag::backward(loss.total);
  for (const auto& [name, v] : state.model.params)
    require(v.grad().all_finite(), ErrorCode::kNumericalError, "non-finite gradient for ",
            name, " at step ", state.step);

  const OptimizerConfig& o = cfg.optimizer;
  const double lr = learning_rate(cfg, state.step);
  const double t = state.step + 1.0;
  const double c1 = 1.0 - std::pow(o.beta1, t), c2 = 1.0 - std::pow(o.beta2, t);
  for (auto& [name, v] : state.model.params) {
    double* p = v.node()->value.data();
    const double* g = v.grad().data();
    double* m = state.adam_m.at(name).data();
    double* s = state.adam_v.at(name).data();
    const std::size_t n = v.value().size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      s[i] = o.beta2 * s[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(s[i] / c2) + o.eps) + o.weight_decay * p[i];
      p[i] -= lr * update;
    }
  }
  ++state.step;
  return loss.report;
}

// ---------------------------------------------------------------------------
// Checkpointed training state

namespace detail {

inline std::vector<zip::Entry> optimizer_entries(const TrainState& s, const TrainConfig& cfg) {
  std::vector<zip::Entry> out;
  out.push_back({"train_state.json", nlohmann::json{{"step", s.step},
                                                    {"best_val_psnr", db_to_json(s.best_val_psnr)},
                                                    {"seed", s.seed},
                                                    {"train_config", to_json(cfg)}}
                                         .dump(2)});
  for (const auto& [name, t] : s.adam_m) out.push_back({"optimizer/m/" + name + ".f64", encode_doubles(t)});
  for (const auto& [name, t] : s.adam_v) out.push_back({"optimizer/v/" + name + ".f64", encode_doubles(t)});
  return out;
}

}  // namespace detail

inline void save_train_state(const TrainState& s, const TrainConfig& cfg, const fs::path& path) {
  save_weights(s.model, path, detail::optimizer_entries(s, cfg));
}

inline TrainState load_train_state(const fs::path& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  auto it = ck.entries.find("train_state.json");
  require(it != ck.entries.end(), ErrorCode::kIncompatibleCheckpoint, path,
          " holds weights only, no training state");
  TrainState s;
  try {
    const auto j = nlohmann::json::parse(it->second);
    s.step = j.at("step").get<int>();
    s.best_val_psnr = db_from_json(j.at("best_val_psnr"));
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIncompatibleCheckpoint, "bad train_state.json in ", path, ": ", e.what());
  }
  for (const auto& [name, v] : ck.model.params)
    for (auto* slot : {&s.adam_m, &s.adam_v}) {
      const std::string key = std::string("optimizer/") + (slot == &s.adam_m ? "m/" : "v/") + name + ".f64";
      auto e = ck.entries.find(key);
      require(e != ck.entries.end(), ErrorCode::kIncompatibleCheckpoint, path, " lacks ", key);
      slot->emplace(name, detail::decode_doubles(e->second, v.shape()));
    }
  s.model = std::move(ck.model);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

struct ValidationSet {
  std::vector<ComputeClip> degraded, gt;
};

inline ValidationSet load_validation_set(const ClipManifest& manifest, int crop,
                                         const ModelConfig& model_cfg) {
  ValidationSet v;
  int min_side = std::numeric_limits<int>::max();
  for (const auto* e : manifest.split(Split::kVal)) {
    v.degraded.push_back(to_compute(load_clip(manifest.clip_dir(*e, "degraded"))));
    v.gt.push_back(to_compute(load_clip(manifest.clip_dir(*e, "gt"))));
    min_side = std::min({min_side, v.gt.back().height(), v.gt.back().width()});
  }
  require(!v.gt.empty(), ErrorCode::kNoData, "manifest has no validation clips");
  const int c = effective_crop(crop, min_side, model_cfg);
  for (auto* clips : {&v.degraded, &v.gt})
    for (auto& clip : *clips) clip = center_crop(clip, c);
  return v;
}

// Mean PSNR over every validation frame (identical frames excluded).
inline double validation_psnr(const RestorationModel& model, const ValidationSet& v) {
  std::vector<double> per_frame;
  for (std::size_t i = 0; i < v.gt.size(); ++i) {
    const ComputeClip restored = restore_video(model, v.degraded[i]);
    for (std::size_t f = 0; f < restored.frames.size(); ++f)
      per_frame.push_back(psnr(restored.frames[f], v.gt[i].frames[f]));
  }
  return mean_finite_psnr(per_frame);
}

struct FitOptions {
  const FeatureExtractor* extractor = nullptr;  // overrides TrainConfig::extractor
  bool resume = true;                           // continue from latest.avrw if present
  std::function<void(const nlohmann::json&)> on_log;
};

// Trains until cfg.steps, writing latest.avrw, best.avrw and metrics.jsonl
// into cfg.checkpoint_dir.
inline TrainState fit(const TrainConfig& cfg, const ModelConfig& model_cfg,
                      const ClipManifest& manifest, const FitOptions& opt = {}) {
  model_cfg.validate();
  cfg.validate(model_cfg);
  require(!manifest.split(Split::kTrain).empty() && !manifest.split(Split::kVal).empty(),
          ErrorCode::kNoData, "training needs non-empty train and val splits");

  std::optional<FeatureExtractor> owned;
  const FeatureExtractor* extractor = opt.extractor;
  if (!extractor && cfg.extractor) {
    owned = load_feature_extractor(*cfg.extractor);
    extractor = &*owned;
  }
  if (cfg.weights.perceptual > 0.0)
    require(extractor != nullptr, ErrorCode::kExtractorUnavailable,
            "perceptual loss weight ", cfg.weights.perceptual,
            " needs a feature extractor (train config \"extractor\")");

  fs::create_directories(cfg.checkpoint_dir);
  const fs::path latest = cfg.checkpoint_dir / "latest.avrw";
  const fs::path best = cfg.checkpoint_dir / "best.avrw";
  TrainState state;
  if (opt.resume && fs::exists(latest)) {
    state = load_train_state(latest);
    require(config_hash(state.model.config) == config_hash(model_cfg),
            ErrorCode::kIncompatibleCheckpoint, latest, " was trained with another model config");
  } else {
    state = initial_state(model_cfg, cfg);
  }

  std::ofstream log(cfg.checkpoint_dir / "metrics.jsonl", std::ios::app);
  auto emit = [&](const nlohmann::json& j) {
    log << j.dump() << "\n";
    log.flush();
    if (opt.on_log) opt.on_log(j);
  };

  const PatchSampler sampler(manifest, Split::kTrain, cfg.t, cfg.crop);
  std::optional<ValidationSet> val;
  if (cfg.val_every > 0) val = load_validation_set(manifest, cfg.val_crop, model_cfg);
  const int ckpt_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : cfg.val_every;

  std::optional<BatchPrefetcher> prefetch;
  if (cfg.prefetch && state.step < cfg.steps)
    prefetch.emplace(sampler, state.seed, cfg.batch_size, state.step, cfg.steps);

  bool saved = false;
  while (state.step < cfg.steps) {
    Batch batch;
    if (prefetch) {
      batch = prefetch->next();
    } else {
      auto rng = batch_stream(state.seed, state.step);
      batch = sampler.batch(rng, cfg.batch_size);
    }
    const double lr = learning_rate(cfg, state.step);
    const LossReport r = train_step(state, batch, cfg, extractor);
    emit({{"step", state.step},
          {"lr", lr},
          {"loss", r.total},
          {"pixel", r.pixel},
          {"perceptual", r.perceptual}});
    const bool last = state.step == cfg.steps;
    if (val && (state.step % cfg.val_every == 0 || last)) {
      const double p = validation_psnr(state.model, *val);
      emit({{"step", state.step}, {"val_psnr_db", db_to_json(p)}});
      if (p > state.best_val_psnr) {
        state.best_val_psnr = p;
        save_train_state(state, cfg, best);
      }
    }
    saved = false;
    if (last || (ckpt_every > 0 && state.step % ckpt_every == 0)) {
      save_train_state(state, cfg, latest);
      saved = true;
    }
  }
  if (!saved && !fs::exists(latest)) save_train_state(state, cfg, latest);
  return state;
}

}  // namespace avr
