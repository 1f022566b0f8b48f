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

#include "handpress/annotator.hpp"

using namespace handpress;

namespace {

// small rig for fast unit runs
ScenarioConfig unit_scenario(int frames = 2, double init_theta = 0.0,
                             double init_root = 0.0) {
  ScenarioConfig c = ScenarioConfig::defaults();
  c.num_frames = frames;
  c.num_cameras = 3;
  c.image_size = 96;
  c.seed = 31337;
  c.init.theta_range = init_theta;
  c.init.root_range_m = init_root;
  return c;
}

LoadedSequence to_sequence(const SyntheticScene& scene) {
  LoadedSequence seq;
  seq.cameras = scene.cameras;
  seq.pad = scene.pad;
  seq.model = scene.model;
  seq.frames = scene.frames;
  seq.init_estimates = scene.init_estimates;
  return seq;
}

OptimizerConfig unit_config() {
  OptimizerConfig c;
  c.iters_pose = 60;
  c.iters_shape = 40;
  c.epochs = 3;
  c.warmup_iters = 10;
  c.appearance_texture_size = 32;
  c.pressure_texture_size = 64;
  return c;
}

}  // namespace

TEST_CASE("initialize: oracle estimates reproduce the ground truth state") {
  ScenarioConfig c = unit_scenario();
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  // zero init noise: estimates are the ground truth
  const HandState s =
      initialize(seq.model, seq.cameras, seq.init_estimates[0], scene.gt_states[0].beta);
  CHECK(s.theta == scene.gt_states[0].theta);
  CHECK((s.translation - scene.gt_states[0].translation).norm() < 1e-6);
}

TEST_CASE("initialize: root perturbation moves the triangulated root accordingly") {
  ScenarioConfig c = unit_scenario(1, 0.0, 0.02);
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  const HandState s =
      initialize(seq.model, seq.cameras, seq.init_estimates[0], scene.gt_states[0].beta);
  const double err = (s.translation - scene.gt_states[0].translation).norm();
  CHECK(err > 1e-4);            // perturbed
  CHECK(err < 0.02 * 1.8);      // within the scripted +-20 mm box diagonal
}

TEST_CASE("initialize: fewer than two root estimates fails") {
  ScenarioConfig c = unit_scenario();
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  InitEstimate partial = seq.init_estimates[0];
  auto it = partial.root_px.begin();
  ++it;
  partial.root_px.erase(it, partial.root_px.end());
  CHECK_THROWS_AS(initialize(seq.model, seq.cameras, partial, scene.gt_states[0].beta),
                  InitializationError);
  InitEstimate empty;
  CHECK_THROWS_AS(initialize(seq.model, seq.cameras, empty, scene.gt_states[0].beta),
                  InitializationError);
}

TEST_CASE("optimize_pose at ground truth is a fixed point") {
  ScenarioConfig c = unit_scenario(2);
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  std::vector<HandState> init;
  for (const auto& s : scene.gt_states) init.push_back(s);
  OptimizerConfig config = unit_config();
  Texture tex(config.appearance_texture_size, config.appearance_texture_size, 3, 0.5);
  const PoseStageResult res = optimize_pose(seq, 0, 2, init, std::move(tex), config);
  CHECK(res.diagnostics.final_loss <= res.diagnostics.initial_loss + 1e-12);
  for (int f = 0; f < 2; ++f) {
    CHECK((res.states[f].theta - scene.gt_states[f].theta).cwiseAbs().maxCoeff() < 1e-3);
    CHECK((res.states[f].translation - scene.gt_states[f].translation).norm() < 1e-3);
  }
}

TEST_CASE("optimize_pose recovers a perturbed pose (small scale)") {
  ScenarioConfig c = unit_scenario(2, 0.1, 0.01);
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  std::vector<HandState> init;
  for (int f = 0; f < 2; ++f)
    init.push_back(
        initialize(seq.model, seq.cameras, seq.init_estimates[f], scene.gt_states[f].beta));
  OptimizerConfig config = unit_config();
  config.iters_pose = 120;
  Texture tex(config.appearance_texture_size, config.appearance_texture_size, 3, 0.5);
  const PoseStageResult res = optimize_pose(seq, 0, 2, init, std::move(tex), config);
  CHECK(res.diagnostics.final_loss < 0.6 * res.diagnostics.initial_loss);
  // joints move toward ground truth
  for (int f = 0; f < 2; ++f) {
    const Mesh gt_mesh = skin(seq.model, scene.gt_states[f]);
    const Mesh init_mesh = skin(seq.model, init[f]);
    const Mesh got_mesh = skin(seq.model, res.states[f]);
    const MatX3 gt_j = regress_joints(seq.model, gt_mesh);
    const double before = (regress_joints(seq.model, init_mesh) - gt_j).rowwise().norm().mean();
    const double after = (regress_joints(seq.model, got_mesh) - gt_j).rowwise().norm().mean();
    CHECK(after < 0.5 * before);
  }
}

TEST_CASE("refine_shape keeps pose bitwise frozen and stays near zero offsets at GT") {
  ScenarioConfig c = unit_scenario(1);
  c.contacts.clear();  // no pressure: stage 2 should barely move
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  std::vector<HandState> pose_states = {scene.gt_states[0]};
  OptimizerConfig config = unit_config();
  Texture tex(config.appearance_texture_size, config.appearance_texture_size, 3, 0.5);
  const ShapeStageResult res = refine_shape(seq, 0, 1, pose_states, std::move(tex), config);
  // theta and translation bitwise identical
  CHECK(res.states[0].theta == pose_states[0].theta);
  CHECK(res.states[0].translation == pose_states[0].translation);
  // offsets stay below 0.5 mm RMS
  const double rms = std::sqrt(res.states[0].d_vert.squaredNorm() / res.states[0].d_vert.size());
  CHECK(rms < 5e-4);
}

TEST_CASE("annotate_sequence: beta frozen bitwise, records complete, deterministic") {
  ScenarioConfig c = unit_scenario(3, 0.05, 0.005);
  const SyntheticScene scene = generate_scene(c);
  const LoadedSequence seq = to_sequence(scene);
  OptimizerConfig config = unit_config();
  config.batch_size = 2;  // forces two batches with carry-over
  config.iters_pose = 30;
  config.iters_shape = 20;
  VecX beta = VecX::Zero(seq.model.num_shape_coeffs());
  beta[1] = 0.123456789;
  const auto run1 = annotate_sequence(seq, config, beta);
  REQUIRE(run1.size() == 3);
  for (const auto& rec : run1) {
    CHECK(rec.beta == beta);  // bitwise immutability
    CHECK(rec.theta.size() == seq.model.num_pose_coeffs());
    CHECK(rec.d_vert.size() == seq.model.num_vertices());
    CHECK(rec.camera_losses.size() == seq.cameras.size());
    for (const auto& [id, ml] : rec.camera_losses) {
      CHECK(std::isfinite(ml.first));
      CHECK(std::isfinite(ml.second));
    }
    CHECK(rec.pressure_uv.has_value());
  }
  // determinism: bitwise identical records on a second run
  const auto run2 = annotate_sequence(seq, config, beta);
  for (size_t f = 0; f < run1.size(); ++f) {
    CHECK(run1[f].theta == run2[f].theta);
    CHECK(run1[f].translation == run2[f].translation);
    CHECK(run1[f].d_vert == run2[f].d_vert);
    CHECK(run1[f].pressure_uv->values.raw() == run2[f].pressure_uv->values.raw());
  }
  // and across thread counts
  set_thread_count(1);
  const auto run3 = annotate_sequence(seq, config, beta);
  set_thread_count(0);
  for (size_t f = 0; f < run1.size(); ++f) {
    CHECK(run1[f].theta == run3[f].theta);
    CHECK(run1[f].d_vert == run3[f].d_vert);
  }
}

TEST_CASE("annotate_sequence: provider failure names the frame") {
  ScenarioConfig c = unit_scenario(2);
  const SyntheticScene scene = generate_scene(c);
  LoadedSequence seq = to_sequence(scene);
  seq.init_estimates[1] = InitEstimate{};  // missing provider output
  OptimizerConfig config = unit_config();
  config.batch_size = 1;
  config.iters_pose = 4;
  config.iters_shape = 4;
  const VecX beta = VecX::Zero(seq.model.num_shape_coeffs());
  CHECK_THROWS_WITH_AS(annotate_sequence(seq, config, beta), doctest::Contains("frame 1"),
                       NumericalError);
}

TEST_CASE("calibrate_beta recovers a zero shape within tolerance") {
  ScenarioConfig c = unit_scenario(3, 0.08, 0.008);
  const SyntheticScene scene = generate_scene(c);  // generated with beta* = 0
  const LoadedSequence seq = to_sequence(scene);
  OptimizerConfig config = unit_config();
  config.iters_calibration = 150;
  StageDiagnostics diag;
  const VecX beta = calibrate_beta(seq, config, &diag);
  CHECK(beta.norm() < 0.05);
  CHECK(diag.final_loss <= diag.initial_loss);
  LoadedSequence empty = seq;
  empty.frames.clear();
  CHECK_THROWS_AS(calibrate_beta(empty, config), std::invalid_argument);
}

TEST_CASE("optimizer config round-trip") {
  OptimizerConfig c = unit_config();
  c.weights.lambda_appearance = 0.234;
  c.lr_theta = 0.007;
  const std::string path = "/tmp/hp_optcfg.json";
  save_optimizer_config(c, path);
  const OptimizerConfig back = load_optimizer_config(path);
  CHECK(back.iters_pose == c.iters_pose);
  CHECK(back.lr_theta == c.lr_theta);
  CHECK(back.weights.lambda_appearance == c.weights.lambda_appearance);
  std::remove(path.c_str());
}
