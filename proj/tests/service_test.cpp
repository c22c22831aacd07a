// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>

#include "avr/service.hpp"
#include "test_util.hpp"

namespace avr::service {
namespace {

using test::TempDir;

ModelConfig toy_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.depths = {1, 1};
  c.heads = {2, 2};
  c.bottleneck_depth = 1;
  c.window = {5, 2, 2};
  return c;
}

RestorationModel perturbed_model() {
  RestorationModel m = init_parameters(toy_config(), 1);
  Tensor& w = m.params.at("output.weight").node()->value;
  w = test::random_tensor(w.shape(), 2, -0.05, 0.05);
  return m;
}

std::string frame_zip(const StorageClip& clip) {
  std::vector<zip::Entry> entries;
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const auto& f = clip.frames[i];
    entries.push_back({"frames/" + frame_filename(i), png::encode({f.height(), f.width(), f.data()})});
  }
  return zip::write(entries);
}

StorageClip unzip_frames(const std::string& bytes) {
  StorageClip c;
  auto entries = zip::read(bytes);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& e : entries) {
    png::Rgb8Image img = png::decode(e.data);
    c.frames.emplace_back(img.height, img.width, std::move(img.pixels));
  }
  return c;
}

nlohmann::json body(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

class ServiceTest : public ::testing::Test {
 protected:
  void start(ServiceConfig cfg = {}, RestorationModel model = init_parameters(toy_config(), 1)) {
    cfg.data_dir = dir_ / "data";
    cfg.codecs = {};
    svc_ = std::make_unique<Service>(cfg, std::move(model));
    client_ = std::make_unique<httplib::Client>("127.0.0.1", svc_->start());
  }

  httplib::Result upload(const std::string& bytes, const std::string& name = "clip.zip") {
    httplib::MultipartFormDataItems items{{"file", bytes, name, "application/octet-stream"}};
    return client_->Post("/api/videos", items);
  }

  std::string upload_id(const StorageClip& clip) {
    auto r = upload(frame_zip(clip));
    EXPECT_EQ(r->status, 201) << r->body;
    return body(r)["video_id"];
  }

  httplib::Result post_job(const nlohmann::json& j) {
    return client_->Post("/api/jobs", j.dump(), "application/json");
  }

  // Polls until the job is done or failed; checks the state machine on the way.
  nlohmann::json wait_job(const std::string& id, std::vector<std::string>* states = nullptr) {
    double progress = 0.0;
    std::string last = "queued";
    for (int i = 0; i < 2000; ++i) {
      const nlohmann::json j = body(client_->Get("/api/jobs/" + id));
      const std::string s = j["state"];
      EXPECT_GE(j["progress"].get<double>(), progress);
      progress = j["progress"];
      if (last == "running") EXPECT_NE(s, "queued");
      if (states && (states->empty() || states->back() != s)) states->push_back(s);
      if (s == "done" || s == "failed") {
        EXPECT_EQ(j["output_ref"].is_null(), s != "done");
        EXPECT_EQ(j["error"].is_null(), s != "failed");
        return j;
      }
      last = s;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ADD_FAILURE() << "job " << id << " did not finish";
    return {};
  }

  TempDir dir_;
  std::unique_ptr<Service> svc_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(ServiceTest, IdentityRoundTripIsBitExact) {
  ServiceConfig cfg;
  cfg.window_delay = std::chrono::milliseconds(30);
  start(cfg);
  const StorageClip clip = test::random_storage_clip(7, 21, 18, 3);
  const std::string vid = upload_id(clip);
  const auto meta = body(client_->Get("/api/videos/" + vid));
  EXPECT_EQ(meta["frames"], 7);
  EXPECT_EQ(meta["width"], 18);
  EXPECT_EQ(meta["height"], 21);
  EXPECT_EQ(meta["fps"], 25.0);

  auto r = post_job({{"video_id", vid}});
  ASSERT_EQ(r->status, 201);
  std::vector<std::string> states{body(r)["state"]};
  const auto job = wait_job(body(r)["job_id"], &states);
  EXPECT_EQ(job["state"], "done");
  EXPECT_EQ(job["progress"], 1.0);
  EXPECT_EQ(states, (std::vector<std::string>{"queued", "running", "done"}));

  r = client_->Get("/api/videos/" + vid + "/restored");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/zip");
  EXPECT_EQ(unzip_frames(r->body).frames, clip.frames);

  r = client_->Get("/api/videos/" + vid + "/comparison");
  ASSERT_EQ(r->status, 200);
  const auto cmp = body(r);
  ASSERT_EQ(cmp["per_frame_pairs"].size(), 7u);
  const std::string restored_url = cmp["per_frame_pairs"][3]["restored"];
  r = client_->Get(restored_url);
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(png::decode(r->body).pixels, clip.frames[3].data());
  EXPECT_EQ(client_->Get(cmp["per_frame_pairs"][3]["original"].get<std::string>())->body, r->body);
  EXPECT_EQ(unzip_frames(client_->Get(cmp["original_url"].get<std::string>())->body).frames,
            clip.frames);
}

TEST_F(ServiceTest, RestoredOutputMatchesDirectRestoration) {
  start({}, perturbed_model());
  const StorageClip clip = test::random_storage_clip(6, 16, 16, 4);
  const std::string vid = upload_id(clip);
  wait_job(body(post_job({{"video_id", vid}}))["job_id"]);
  const StorageClip got = unzip_frames(client_->Get("/api/videos/" + vid + "/restored")->body);
  EXPECT_EQ(got.frames, restore_video(perturbed_model(), clip).frames);
  EXPECT_NE(got.frames, clip.frames);
}

TEST_F(ServiceTest, UploadErrors) {
  ServiceConfig cfg;
  cfg.max_upload_bytes = 4096;
  cfg.max_frames = 3;
  start(cfg);
  EXPECT_EQ(upload("just some text", "notes.txt")->status, 415);
  EXPECT_EQ(upload(std::string(5000, 'x'))->status, 413);
  EXPECT_EQ(upload(frame_zip(test::random_storage_clip(4, 4, 4, 1)))->status, 413);
  EXPECT_EQ(upload(zip::write({{"readme.txt", "no frames"}}))->status, 415);
  EXPECT_EQ(client_->Post("/api/videos", "raw", "application/octet-stream")->status, 400);
  const StorageClip png_clip = test::random_storage_clip(1, 8, 8, 2);
  const auto& f = png_clip.frames[0];
  EXPECT_EQ(upload(png::encode({8, 8, f.data()}), "frame.png")->status, 201);
}

TEST_F(ServiceTest, JobErrors) {
  ServiceConfig cfg;
  cfg.window_delay = std::chrono::milliseconds(200);
  start(cfg);
  EXPECT_EQ(post_job({{"video_id", "nope"}})->status, 404);
  EXPECT_EQ(post_job({{"example_id", "nope"}})->status, 404);
  EXPECT_EQ(post_job({{"other", 1}})->status, 400);
  EXPECT_EQ(client_->Post("/api/jobs", "{", "application/json")->status, 400);
  EXPECT_EQ(client_->Get("/api/jobs/nope")->status, 404);
  EXPECT_EQ(client_->Get("/api/videos/nope")->status, 404);
  EXPECT_EQ(client_->Get("/api/videos/nope/restored")->status, 404);

  const std::string vid = upload_id(test::random_storage_clip(10, 8, 8, 5));
  EXPECT_EQ(client_->Get("/api/videos/" + vid + "/restored")->status, 409);
  const std::string job = body(post_job({{"video_id", vid}}))["job_id"];
  EXPECT_EQ(post_job({{"video_id", vid}})->status, 409);
  EXPECT_EQ(client_->Get("/api/videos/" + vid + "/restored")->status, 409);
  EXPECT_EQ(client_->Get("/api/videos/" + vid + "/comparison")->status, 409);
  wait_job(job);
  EXPECT_EQ(client_->Get("/api/videos/" + vid + "/restored")->status, 200);
  EXPECT_EQ(post_job({{"video_id", vid}})->status, 201);
}

TEST_F(ServiceTest, FailedJobCarriesError) {
  start();
  const std::string vid = upload_id(test::random_storage_clip(2, 3, 3, 6));
  const auto job = wait_job(body(post_job({{"video_id", vid}}))["job_id"]);
  EXPECT_EQ(job["state"], "failed");
  EXPECT_NE(job["error"].get<std::string>().find("smaller"), std::string::npos);
}

TEST_F(ServiceTest, JobsRunInFifoOrder) {
  start();
  std::vector<std::string> jobs;
  for (int i = 0; i < 3; ++i)
    jobs.push_back(body(post_job({{"video_id", upload_id(test::random_storage_clip(5, 8, 8, 10 + i))}}))["job_id"]);
  std::vector<std::string> finished;
  for (const auto& id : jobs) finished.push_back(wait_job(id)["finished_at"]);
  EXPECT_TRUE(std::is_sorted(finished.begin(), finished.end()));
}

TEST_F(ServiceTest, ExamplesAreListedAndRestorable) {
  const fs::path ex = dir_ / "examples";
  save_clip(test::random_storage_clip(5, 16, 16, 7), ex / "tape1");
  std::ofstream(ex / "tape1" / "title.txt") << "Home movie\n";
  ServiceConfig cfg;
  cfg.examples_dir = ex;
  start(cfg);
  const auto list = body(client_->Get("/api/examples"));
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["example_id"], "tape1");
  EXPECT_EQ(list[0]["title"], "Home movie");
  auto r = client_->Get(list[0]["thumbnail_url"].get<std::string>());
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(png::decode(r->body).width, 16);
  r = post_job({{"example_id", "tape1"}});
  ASSERT_EQ(r->status, 201);
  EXPECT_EQ(wait_job(body(r)["job_id"])["state"], "done");
  r = client_->Get("/api/videos/" + body(r)["video_id"].get<std::string>() + "/restored");
  EXPECT_EQ(unzip_frames(r->body).size(), 5u);
}

TEST_F(ServiceTest, ShippedExampleIsListed) {
  ServiceConfig cfg;
  cfg.examples_dir = fs::path(AVR_SOURCE_DIR) / "assets" / "examples";
  start(cfg);
  const auto list = body(client_->Get("/api/examples"));
  ASSERT_GE(list.size(), 1u);
  const auto r = post_job({{"example_id", list[0]["example_id"]}});
  EXPECT_EQ(wait_job(body(r)["job_id"])["state"], "done");
}

TEST_F(ServiceTest, ContainerPathUsesExternalTools) {
  ServiceConfig cfg;
  cfg.data_dir = dir_ / "data";
  cfg.codecs.decoder = "tar -xf {input} -C {output}";
  cfg.codecs.encoder = "tar -cf {output} -C {input} .";
  cfg.container_type = "video/x-test";
  cfg.container_ext = "tar";
  svc_ = std::make_unique<Service>(cfg, init_parameters(toy_config(), 1));
  client_ = std::make_unique<httplib::Client>("127.0.0.1", svc_->start());

  const StorageClip clip = test::random_storage_clip(5, 8, 8, 8);
  save_clip(clip, dir_ / "src");
  ASSERT_EQ(std::system(("tar -cf " + (dir_ / "in.tar").string() + " -C " +
                         (dir_ / "src").string() + " .").c_str()), 0);
  const std::string vid = body(upload(zip::read_file((dir_ / "in.tar").string()), "in.tar"))["video_id"];
  wait_job(body(post_job({{"video_id", vid}}))["job_id"]);
  auto r = client_->Get("/api/videos/" + vid + "/restored");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "video/x-test");
  zip::write_file((dir_ / "out.tar").string(), r->body);
  EXPECT_EQ(load_clip(dir_ / "out.tar", cfg.codecs).frames, clip.frames);
  r = client_->Get("/api/videos/" + vid + "/restored?format=zip");
  EXPECT_EQ(unzip_frames(r->body).frames, clip.frames);
}

TEST_F(ServiceTest, StopMidJobThenRestartFinishesIt) {
  ServiceConfig cfg;
  cfg.window_delay = std::chrono::milliseconds(100);
  start(cfg);
  const StorageClip clip = test::random_storage_clip(25, 8, 8, 9);
  const std::string vid = upload_id(clip);
  const std::string job = body(post_job({{"video_id", vid}}))["job_id"];
  for (int i = 0; i < 500 && body(client_->Get("/api/jobs/" + job))["state"] != "running"; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  svc_->stop();
  client_.reset();
  svc_.reset();

  std::ifstream in(dir_ / "data" / "jobs" / (job + ".json"));
  EXPECT_EQ(nlohmann::json::parse(in)["state"], "running");

  cfg.window_delay = std::chrono::milliseconds(0);
  start(cfg);
  EXPECT_EQ(wait_job(job)["state"], "done");
  EXPECT_EQ(unzip_frames(client_->Get("/api/videos/" + vid + "/restored")->body).frames,
            clip.frames);
}

TEST_F(ServiceTest, RestartKeepsFinishedJobs) {
  start();
  const std::string vid = upload_id(test::random_storage_clip(5, 8, 8, 11));
  const std::string job = body(post_job({{"video_id", vid}}))["job_id"];
  const auto done = wait_job(job);
  client_.reset();
  svc_.reset();
  start();
  EXPECT_EQ(body(client_->Get("/api/jobs/" + job)), done);
  EXPECT_EQ(client_->Get("/api/videos/" + vid + "/restored")->status, 200);
}

TEST(JobRecord, JsonRoundTrip) {
  RestoreJob j;
  j.id = "j1";
  j.video_id = "v1";
  j.state = JobState::kFailed;
  j.progress = 0.4;
  j.input_ref = "f00";
  j.error = "boom";
  j.created_at = utc_now();
  j.finished_at = j.created_at;
  j.seq = 3;
  EXPECT_EQ(to_json(job_from_json(to_json(j))), to_json(j));
  EXPECT_THROW(parse_state("paused"), Error);
}

}  // namespace
}  // namespace avr::service
