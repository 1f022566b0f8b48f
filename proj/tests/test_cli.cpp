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

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "handpress/core.hpp"
#include "handpress/synthio.hpp"

using namespace handpress;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(HANDPRESS_CLI_PATH) + " " + args;
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("no arguments prints usage and exits 1") {
  CHECK(run("2>/dev/null") == 1);
  CHECK(run("--help >/dev/null 2>&1") == 0);
  CHECK(run("bogus-subcommand 2>/dev/null") == 1);
}

TEST_CASE("synth then annotate produces annotations and a loss log") {
  TempDir dir("hp_cli_e2e");
  const std::string seq = dir.str() + "/seq";
  REQUIRE(run("synth --out " + seq + " --seed 7 --frames 2 --cameras 3 --size 64 2>/dev/null") == 0);
  CHECK(fs::exists(seq + "/cameras.json"));
  CHECK(fs::exists(seq + "/frames/000000/cam0.png"));
  CHECK(fs::exists(seq + "/frames/000001/pressure.raw"));
  CHECK(fs::exists(seq + "/gt/000000.json"));

  REQUIRE(run("annotate " + seq +
              " --batch 2 --iters-pose 16 --iters-shape 10 2>/dev/null") == 0);
  CHECK(fs::exists(seq + "/annotations/000000.json"));
  CHECK(fs::exists(seq + "/annotations/000001.json"));
  CHECK(fs::exists(seq + "/losses.csv"));
  const std::string csv = slurp(seq + "/losses.csv");
  CHECK(csv.rfind("epoch,term,value", 0) == 0);
  CHECK(csv.find("pose.total") != std::string::npos);
  CHECK(csv.find("shape.total") != std::string::npos);
}

TEST_CASE("synth is byte-deterministic and annotate is thread-count independent") {
  TempDir dir("hp_cli_det");
  const std::string a = dir.str() + "/a", b = dir.str() + "/b";
  REQUIRE(run("synth --out " + a + " --seed 11 --frames 2 --cameras 3 --size 64 2>/dev/null") == 0);
  REQUIRE(run("synth --out " + b + " --seed 11 --frames 2 --cameras 3 --size 64 2>/dev/null") == 0);
  CHECK(slurp(a + "/frames/000000/cam0.png") == slurp(b + "/frames/000000/cam0.png"));
  CHECK(slurp(a + "/frames/000001/pressure.raw") == slurp(b + "/frames/000001/pressure.raw"));
  CHECK(slurp(a + "/gt/000000.json") == slurp(b + "/gt/000000.json"));

  REQUIRE(run("annotate " + a + " --threads 1 --batch 2 --iters-pose 12 --iters-shape 8 "
              "--out " + a + "/ann1 2>/dev/null") == 0);
  REQUIRE(run("annotate " + a + " --threads 2 --batch 2 --iters-pose 12 --iters-shape 8 "
              "--out " + a + "/ann2 2>/dev/null") == 0);
  CHECK(slurp(a + "/ann1/000000.json") == slurp(a + "/ann2/000000.json"));
  CHECK(slurp(a + "/ann1/000000_uv.raw") == slurp(a + "/ann2/000000_uv.raw"));
  CHECK(slurp(a + "/ann1/000001.json") == slurp(a + "/ann2/000001.json"));
}

TEST_CASE("evaluate reports perfect metrics for identical grids") {
  TempDir dir("hp_cli_eval");
  ImageF grid(12, 8, 1, 0.f);
  for (int x = 3; x < 7; ++x) grid.at(x, 4) = 900.f;
  const std::string est = dir.str() + "/est.raw", gt = dir.str() + "/gt.raw";
  write_raw(est, grid);
  write_raw(gt, grid);
  const std::string out = dir.str() + "/out.txt";
  REQUIRE(run("evaluate " + est + " " + gt + " --csv " + dir.str() + "/m.csv > " + out +
              " 2>/dev/null") == 0);
  const std::string text = slurp(out);
  CHECK(text.find("contact_iou: 100") != std::string::npos);
  CHECK(text.find("mae_pa: 0") != std::string::npos);
  const std::string csv = slurp(dir.str() + "/m.csv");
  CHECK(csv.find("0,100,100,0,1,1") != std::string::npos);
  // mismatched sizes produce a data error (exit 2)
  ImageF other(4, 4, 1, 0.f);
  write_raw(dir.str() + "/other.raw", other);
  CHECK(run("evaluate " + est + " " + dir.str() + "/other.raw 2>/dev/null") == 2);
}

TEST_CASE("render writes previews and raw dumps; bake-uv bakes ground truth") {
  TempDir dir("hp_cli_render");
  const std::string seq = dir.str() + "/seq";
  REQUIRE(run("synth --out " + seq + " --seed 3 --frames 1 --cameras 2 --size 64 2>/dev/null") == 0);
  // render the gt state
  REQUIRE(run("render --model " + seq + "/model.json --cameras " + seq +
              "/cameras.json --state " + seq + "/gt/000000.json --pad " + seq +
              "/pad.json --out " + dir.str() + "/render 2>/dev/null") == 0);
  CHECK(fs::exists(dir.str() + "/render/cam0_mask.png"));
  CHECK(fs::exists(dir.str() + "/render/cam0_depth.raw"));
  CHECK(fs::exists(dir.str() + "/render/pad_depth.raw"));

  REQUIRE(run("bake-uv " + seq + " 0 --out " + dir.str() + "/uv.raw --png " + dir.str() +
              "/uv.png 2>/dev/null") == 0);
  const ImageF uv = read_raw(dir.str() + "/uv.raw");
  CHECK(uv.width() == 256);
  double mass = 0;
  for (float v : uv.raw()) mass += v;
  CHECK(mass > 0);  // the default scenario presses at frame 0
}

TEST_CASE("sync-check simulation mode reports zero mismatches") {
  TempDir dir("hp_cli_sync");
  const std::string out = dir.str() + "/sync.txt";
  REQUIRE(run("sync-check --simulate 50 --devices 6 --seed 5 > " + out + " 2>/dev/null") == 0);
  const std::string text = slurp(out);
  CHECK(text.find("verification mismatches: 0") != std::string::npos);
}

TEST_CASE("missing inputs exit with the data-error code") {
  CHECK(run("annotate /nonexistent-dir-xyz 2>/dev/null") == 2);
  CHECK(run("evaluate /nope.raw /nope2.raw 2>/dev/null") == 2);
}
