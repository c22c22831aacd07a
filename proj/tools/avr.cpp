// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

// avr: command-line front end for degradation, dataset building, training,
// evaluation, restoration and the HTTP service.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "avr/degradation.hpp"
#include "avr/inference.hpp"
#include "avr/losses.hpp"
#include "avr/service.hpp"
#include "avr/training.hpp"

namespace {

using avr::fs::path;

void write_json(const path& file, const nlohmann::json& j) {
  if (file.has_parent_path()) avr::fs::create_directories(file.parent_path());
  std::ofstream out(file);
  out << j.dump(2) << "\n";
  avr::require(out.good(), avr::ErrorCode::kIoError, "cannot write ", file);
}

void progress_line(const char* what, std::size_t done, std::size_t total) {
  std::fprintf(stderr, "\r%s %zu/%zu", what, done, total);
  if (done == total) std::fputc('\n', stderr);
}

struct DegradeArgs {
  path in, out, config;
  std::optional<std::uint64_t> seed;
};

int degrade(const DegradeArgs& a) {
  avr::DegradationConfig cfg = avr::load_degradation_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const avr::StorageClip clip = avr::load_clip(a.in);
  auto [degraded, trace] = avr::degrade_clip(avr::to_compute(clip), cfg);
  avr::save_clip(avr::to_storage(degraded), a.out);
  write_json(a.out / "trace.json", avr::to_json(trace));
  std::cout << nlohmann::json{{"frames", degraded.size()}, {"out", a.out.string()}}.dump() << "\n";
  return 0;
}

struct BuildArgs {
  path clean, out, config;
  double split = 0.8;
  std::optional<std::uint64_t> seed;
};

int build_dataset(const BuildArgs& a) {
  avr::DegradationConfig cfg = avr::load_degradation_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const avr::ClipManifest m = avr::build_dataset(a.clean, cfg, a.out, a.split);
  std::cout << nlohmann::json{{"clips", m.entries.size()},
                              {"train_frames", m.frames_in(avr::Split::kTrain)},
                              {"val_frames", m.frames_in(avr::Split::kVal)},
                              {"manifest", (a.out / "manifest.json").string()}}
                   .dump()
            << "\n";
  return 0;
}

struct TrainArgs {
  path data, model_config, train_config, out;
  std::optional<int> steps;
  bool fresh = false;
};

int train(const TrainArgs& a) {
  const avr::ModelConfig model_cfg = avr::load_model_config(a.model_config);
  avr::TrainConfig cfg = avr::load_train_config(a.train_config);
  cfg.checkpoint_dir = a.out;
  if (a.steps) cfg.steps = *a.steps;
  const avr::ClipManifest manifest = avr::load_manifest(a.data);
  avr::FitOptions opt;
  opt.resume = !a.fresh;
  opt.on_log = [](const nlohmann::json& j) { std::cout << j.dump() << std::endl; };
  const avr::TrainState s = avr::fit(cfg, model_cfg, manifest, opt);
  std::cout << nlohmann::json{{"step", s.step},
                              {"best_val_psnr_db", avr::db_to_json(s.best_val_psnr)},
                              {"checkpoint", (a.out / "latest.avrw").string()}}
                   .dump()
            << "\n";
  return 0;
}

struct EvalArgs {
  path data, weights, report;
  int crop = 512;
  std::optional<path> extractor;
  bool per_channel_ssim = false;
};

int eval(const EvalArgs& a) {
  const avr::RestorationModel model = avr::load_weights(a.weights);
  const avr::ClipManifest manifest = avr::load_manifest(a.data);
  std::optional<avr::FeatureExtractor> ex;
  if (a.extractor) ex = avr::load_feature_extractor(*a.extractor);
  avr::EvalOptions opt;
  opt.crop = a.crop;
  opt.metrics.extractor = ex ? &*ex : nullptr;
  opt.metrics.ssim.luma = !a.per_channel_ssim;
  const avr::EvalReport r = avr::evaluate(model, manifest, opt, [](std::size_t d, std::size_t t) {
    progress_line("clips", d, t);
  });
  const nlohmann::json j = avr::to_json(r);
  write_json(a.report, j);
  std::cout << nlohmann::json{{"restored", j["restored"]}, {"baseline", j["baseline"]}}.dump()
            << "\n";
  return 0;
}

struct RestoreArgs {
  path in, weights, out;
  std::optional<path> video;
};

int restore(const RestoreArgs& a) {
  const avr::RestorationModel model = avr::load_weights(a.weights);
  const avr::StorageClip clip = avr::load_clip(a.in);
  const avr::StorageClip out = avr::restore_video(model, clip, [](std::size_t d, std::size_t t) {
    progress_line("windows", d, t);
  });
  avr::save_clip(out, a.out);
  if (a.video) avr::encode_container(a.out, *a.video, out.fps, avr::CodecTools::from_env());
  std::cout << nlohmann::json{{"frames", out.size()}, {"out", a.out.string()}}.dump() << "\n";
  return 0;
}

struct ServeArgs {
  path weights, data_dir = "avr-data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<path> examples, static_dir;
  std::size_t max_upload_mb = 500;
  std::size_t max_frames = 25 * 600;
  int window_delay_ms = 0;
  bool allow_duplicates = false;
};

int serve(const ServeArgs& a) {
  avr::service::ServiceConfig cfg;
  cfg.data_dir = a.data_dir;
  cfg.examples_dir = a.examples ? *a.examples : path(AVR_ASSET_DIR) / "examples";
  cfg.static_dir = a.static_dir;
  cfg.max_upload_bytes = a.max_upload_mb << 20;
  cfg.max_frames = a.max_frames;
  cfg.reject_duplicate_jobs = !a.allow_duplicates;
  cfg.window_delay = std::chrono::milliseconds(a.window_delay_ms);
  avr::service::Service svc(cfg, avr::load_weights(a.weights));
  std::cerr << "serving on http://" << a.host << ":" << a.port << std::endl;
  svc.run(a.host, a.port);
  return 0;
}

void report_error(std::string_view code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analog video degradation, training, evaluation and restoration"};
  app.require_subcommand(1);
  int rc = 0;

  DegradeArgs dg;
  auto* c = app.add_subcommand("degrade", "Degrade one clip with a degradation config");
  c->add_option("--in", dg.in, "Frame directory or container")->required();
  c->add_option("--out", dg.out, "Output frame directory")->required();
  c->add_option("--config", dg.config, "Degradation config JSON")->required();
  c->add_option("--seed", dg.seed, "Overrides the config seed");
  c->callback([&] { rc = degrade(dg); });

  BuildArgs bd;
  c = app.add_subcommand("build-dataset", "Degrade a directory of clean clips into a paired corpus");
  c->add_option("--clean", bd.clean, "Directory of clean clips")->required();
  c->add_option("--out", bd.out, "Corpus root")->required();
  c->add_option("--config", bd.config, "Degradation config JSON")->required();
  c->add_option("--split", bd.split, "Train share by frame count")->capture_default_str();
  c->add_option("--seed", bd.seed, "Overrides the config seed");
  c->callback([&] { rc = build_dataset(bd); });

  TrainArgs tr;
  c = app.add_subcommand("train", "Train a restoration model");
  c->add_option("--data", tr.data, "manifest.json of a paired corpus")->required();
  c->add_option("--model-config", tr.model_config, "Model config JSON")->required();
  c->add_option("--train-config", tr.train_config, "Training config JSON")->required();
  c->add_option("--out", tr.out, "Checkpoint directory")->required();
  c->add_option("--steps", tr.steps, "Overrides the configured step count");
  c->add_flag("--fresh", tr.fresh, "Ignore an existing latest.avrw");
  c->callback([&] { rc = train(tr); });

  EvalArgs ev;
  c = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  c->add_option("--data", ev.data, "manifest.json of a paired corpus")->required();
  c->add_option("--weights", ev.weights, "Checkpoint")->required();
  c->add_option("--crop", ev.crop, "Central crop size")->capture_default_str();
  c->add_option("--report", ev.report, "Report JSON output")->required();
  c->add_option("--extractor", ev.extractor, "Feature extractor weights for LPIPS");
  c->add_flag("--per-channel-ssim", ev.per_channel_ssim, "Average SSIM over RGB instead of luma");
  c->callback([&] { rc = eval(ev); });

  RestoreArgs rs;
  c = app.add_subcommand("restore", "Restore a video or frame directory");
  c->add_option("--in", rs.in, "Frame directory or container")->required();
  c->add_option("--weights", rs.weights, "Checkpoint")->required();
  c->add_option("--out", rs.out, "Output frame directory")->required();
  c->add_option("--video", rs.video, "Also encode a container (needs AVR_ENCODER)");
  c->callback([&] { rc = restore(rs); });

  ServeArgs sv;
  c = app.add_subcommand("serve", "Run the HTTP restoration service");
  c->add_option("--weights", sv.weights, "Checkpoint")->required();
  c->add_option("--port", sv.port, "Port")->capture_default_str();
  c->add_option("--host", sv.host, "Bind address")->capture_default_str();
  c->add_option("--data-dir", sv.data_dir, "Job store directory")->capture_default_str();
  c->add_option("--examples", sv.examples, "Example clips directory");
  c->add_option("--static", sv.static_dir, "UI bundle directory served at /");
  c->add_option("--max-upload-mb", sv.max_upload_mb, "Upload size limit")->capture_default_str();
  c->add_option("--max-frames", sv.max_frames, "Upload duration limit in frames")
      ->capture_default_str();
  c->add_option("--window-delay-ms", sv.window_delay_ms, "Throttle per restored window");
  c->add_flag("--allow-duplicate-jobs", sv.allow_duplicates,
              "Accept a job for a video that already has one active");
  c->callback([&] { rc = serve(sv); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  } catch (const avr::Error& e) {
    report_error(e.code_name(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("InternalError", e.what());
    return 1;
  }
  return rc;
}
