/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "handpress/synthio.hpp"

using namespace handpress;
namespace fs = std::filesystem;

namespace {
ScenarioConfig small_scenario() {
  ScenarioConfig c = ScenarioConfig::defaults();
  c.num_frames = 2;
  c.num_cameras = 3;
  c.image_size = 64;
  c.seed = 424242;
  return c;
}
}  // namespace

TEST_CASE("scene generation is deterministic for a fixed seed") {
  const ScenarioConfig c = small_scenario();
  const SyntheticScene a = generate_scene(c);
  const SyntheticScene b = generate_scene(c);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t f = 0; f < a.frames.size(); ++f) {
    for (size_t ci = 0; ci < a.frames[f].mask.size(); ++ci) {
      CHECK(a.frames[f].mask[ci].raw() == b.frames[f].mask[ci].raw());
      CHECK(a.frames[f].depth[ci].raw() == b.frames[f].depth[ci].raw());
      CHECK(a.frames[f].appearance[ci].raw() == b.frames[f].appearance[ci].raw());
    }
    CHECK(a.frames[f].pressure.grid.raw() == b.frames[f].pressure.grid.raw());
    CHECK(a.init_estimates[f].theta == b.init_estimates[f].theta);
  }
}

TEST_CASE("observations satisfy the masked-channel invariants") {
  const SyntheticScene scene = generate_scene(small_scenario());
  for (const auto& obs : scene.frames) obs.validate();
}

TEST_CASE("scripted press integrates to area times pressure") {
  ScenarioConfig c = small_scenario();
  c.num_frames = 1;
  REQUIRE(!c.contacts.empty());
  const SyntheticScene scene = generate_scene(c);
  const ImageF& grid = scene.frames[0].pressure.grid;
  int cells = 0;
  for (float v : grid.raw())
    if (v > 0) ++cells;
  REQUIRE(cells > 10);  // tip touches at frame 0 by construction
  const double cell_area =
      (c.pad.extent.x() / c.pad.cols) * (c.pad.extent.y() / c.pad.rows);
  PressureFrame pf = scene.frames[0].pressure;
  const double force = grid_force(pf);
  CHECK(force == doctest::Approx(cells * cell_area * c.contacts[0].peak_pa).epsilon(1e-9));
  // sanity against the scripted disk area
  const double disk = M_PI * c.contacts[0].radius_m * c.contacts[0].radius_m *
                      c.contacts[0].peak_pa;
  CHECK(force == doctest::Approx(disk).epsilon(0.15));
}

TEST_CASE("sequence directory round-trip") {
  const ScenarioConfig c = small_scenario();
  const SyntheticScene scene = generate_scene(c);
  const std::string dir = (fs::temp_directory_path() / "hp_seq_test").string();
  fs::remove_all(dir);
  save_sequence(scene, c, dir);
  const LoadedSequence seq = load_sequence(dir);
  REQUIRE(seq.frames.size() == scene.frames.size());
  REQUIRE(seq.cameras.size() == scene.cameras.size());
  CHECK(seq.model.num_vertices() == scene.model.num_vertices());
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    for (size_t ci = 0; ci < seq.cameras.size(); ++ci) {
      CHECK(seq.frames[f].mask[ci].raw() == scene.frames[f].mask[ci].raw());
      CHECK(seq.frames[f].depth[ci].raw() == scene.frames[f].depth[ci].raw());
      // appearance goes through 8-bit quantization
      for (size_t i = 0; i < seq.frames[f].appearance[ci].raw().size(); ++i) {
        const float got = seq.frames[f].appearance[ci].raw()[i];
        const float want = scene.frames[f].appearance[ci].raw()[i];
        CHECK(std::abs(got - want) <= 0.5f / 255 + 1e-6f);
      }
    }
    CHECK(seq.frames[f].pressure.grid.raw() == scene.frames[f].pressure.grid.raw());
    CHECK(seq.init_estimates[f].theta == scene.init_estimates[f].theta);
    for (const auto& [id, px] : scene.init_estimates[f].root_px)
      CHECK((seq.init_estimates[f].root_px.at(id) - px).norm() == 0.0);
  }
  // ground truth present and intact
  REQUIRE(seq.gt.size() == scene.gt_states.size());
  for (size_t f = 0; f < seq.gt.size(); ++f) {
    CHECK(seq.gt[f].theta == scene.gt_states[f].theta);
    CHECK((seq.gt[f].translation - scene.gt_states[f].translation).norm() == 0.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("annotation records round-trip exactly") {
  auto rng = make_rng(55);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<AnnotationRecord> records;
  for (int f = 0; f < 3; ++f) {
    AnnotationRecord r;
    r.frame = f;
    r.theta = VecX(5);
    r.beta = VecX(2);
    r.d_vert = VecX(7);
    for (int i = 0; i < 5; ++i) r.theta[i] = u(rng);
    for (int i = 0; i < 2; ++i) r.beta[i] = u(rng);
    for (int i = 0; i < 7; ++i) r.d_vert[i] = u(rng) * 1e-3;
    r.translation = Vec3(u(rng), u(rng), u(rng));
    r.contact = f % 2 == 0;
    r.camera_losses["cam0"] = {u(rng) * 0.1 + 0.2, u(rng) * 0.1 + 0.3};
    if (f == 1) {
      UVPressureMap uv;
      uv.values = ImageF(8, 8, 1);
      for (auto& v : uv.values.raw()) v = static_cast<float>(std::abs(u(rng)) * 1000);
      r.pressure_uv = std::move(uv);
    }
    records.push_back(std::move(r));
  }
  const std::string dir = (fs::temp_directory_path() / "hp_ann_test").string();
  fs::remove_all(dir);
  save_annotations(records, dir);
  const auto back = load_annotations(dir);
  REQUIRE(back.size() == 3);
  for (int f = 0; f < 3; ++f) {
    CHECK(back[f].frame == records[f].frame);
    CHECK(back[f].theta == records[f].theta);            // bitwise double round-trip
    CHECK(back[f].beta == records[f].beta);
    CHECK(back[f].d_vert == records[f].d_vert);
    CHECK((back[f].translation - records[f].translation).norm() == 0.0);
    CHECK(back[f].contact == records[f].contact);
    CHECK(back[f].camera_losses == records[f].camera_losses);
    CHECK(back[f].pressure_uv.has_value() == records[f].pressure_uv.has_value());
    if (back[f].pressure_uv)
      CHECK(back[f].pressure_uv->values.raw() == records[f].pressure_uv->values.raw());
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed annotation files raise data errors") {
  const std::string dir = (fs::temp_directory_path() / "hp_bad_ann").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/000000.json");
    os << "{\"version\":1,\"frame\":0,\"theta\":[0.1,";  // truncated
  }
  CHECK_THROWS_AS(load_annotations(dir), DataError);
  {
    std::ofstream os(dir + "/000000.json");
    os << R"({"version":99,"frame":0,"theta":[],"beta":[],"translation":[0,0,0],
           "d_vert":[],"contact":false,"losses":{},"uv_pressure":null})";
  }
  CHECK_THROWS_WITH_AS(load_annotations(dir), doctest::Contains("version"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("png round-trip preserves 8-bit data") {
  ImageU8 img(13, 9, 4);
  auto rng = make_rng(3);
  for (auto& v : img.raw()) v = static_cast<uint8_t>(rng() & 0xff);
  const std::string path = (fs::temp_directory_path() / "hp_png_test.png").string();
  write_png(path, img);
  const ImageU8 back = read_png(path);
  REQUIRE(back.width() == 13);
  REQUIRE(back.height() == 9);
  REQUIRE(back.channels() == 4);
  CHECK(back.raw() == img.raw());
  fs::remove(path);
}

TEST_CASE("pressure preview palette maps zero to black and saturates by max") {
  ImageF grid(4, 1, 1, 0.f);
  grid.at(1, 0) = 2500.f;
  grid.at(2, 0) = 5000.f;
  grid.at(3, 0) = 9999.f;
  const ImageU8 img = pressure_preview(grid, 5000.0);
  CHECK(img.at(0, 0, 0) == 0);
  CHECK(img.at(0, 0, 2) == 0);
  CHECK(img.at(3, 0, 0) == 255);  // saturated red channel at and beyond max
  CHECK(img.at(2, 0, 0) == 255);
}

TEST_CASE("scenario config round-trip") {
  ScenarioConfig c = small_scenario();
  c.noise.pixel_sigma = 0.01;
  c.init.root_px_sigma = 0.7;
  const std::string path = (fs::temp_directory_path() / "hp_scenario.json").string();
  save_scenario(c, path);
  const ScenarioConfig back = load_scenario(path);
  CHECK(back.seed == c.seed);
  CHECK(back.num_frames == c.num_frames);
  CHECK(back.theta0 == c.theta0);
  CHECK(back.noise.pixel_sigma == c.noise.pixel_sigma);
  CHECK(back.init.root_px_sigma == c.init.root_px_sigma);
  CHECK(back.contacts.size() == c.contacts.size());
  fs::remove(path);
}
