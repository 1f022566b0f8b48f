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
#ifndef HANDPRESS_SYNTHIO_HPP_
#define HANDPRESS_SYNTHIO_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "handpress/objectives.hpp"
#include "handpress/pressure.hpp"
#include "handpress/rasterizer.hpp"

namespace handpress {

// ----------------------------------------------------------------------------
// PNG I/O (8-bit previews and mask/appearance storage)

void write_png(const std::string& path, const ImageU8& image);  // 1/3/4 channels
ImageU8 read_png(const std::string& path);

/// Pressure heat map preview: fixed black-blue-red-yellow palette over
/// [0, max_pa].
ImageU8 pressure_preview(const ImageF& grid, double max_pa = 5000.0);

// ----------------------------------------------------------------------------
// Scenario configuration

struct NoiseConfig {
  double pixel_sigma = 0.0;    // appearance noise (0..1 units)
  double depth_sigma_m = 0.0;  // depth noise inside the mask
};

struct InitPerturbation {
  double theta_range = 0.0;   // uniform +- per pose coefficient
  double root_range_m = 0.0;  // uniform +- per world axis on the root point
  double root_px_sigma = 0.0; // extra per-camera pixel noise on root estimates
};

struct ContactScript {
  int fingertip_landmark = 8;  // index fingertip in the built-in model
  double radius_m = 0.010;
  double peak_pa = 1000.0;
  double contact_height_m = 0.004;  // blob active when the tip is this close
};

struct ScenarioConfig {
  uint64_t seed = 12345;
  int num_frames = 8;
  int num_cameras = 7;
  int image_size = 256;
  double rig_radius_m = 0.65;
  double fps = 30.0;
  PadGeometry pad;
  VecX theta0, dtheta;       // pose at frame 0 and total linear drift
  Vec3 translation_drift = Vec3::Zero();
  VecX beta;                 // ground-truth shape
  std::vector<ContactScript> contacts;
  NoiseConfig noise;
  InitPerturbation init;

  /// Fills theta0/beta with the built-in defaults for the synthetic hand:
  /// palm-down above the pad, slight curl, index fingertip touching.
  static ScenarioConfig defaults();
};

ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& config, const std::string& path);

// ----------------------------------------------------------------------------
// Generated scene

struct InitEstimate {
  VecX theta;                          // designated-camera pose estimate
  std::map<std::string, Vec2> root_px; // per-camera root pixel estimate
};

struct SyntheticScene {
  std::vector<CameraModel> cameras;
  PadGeometry pad;
  HandModel model;
  Texture appearance;                    // ground-truth appearance texture
  std::vector<ObservationFrame> frames;
  std::vector<HandState> gt_states;
  std::vector<InitEstimate> init_estimates;
  std::vector<ObstacleDepth> obstacles;  // per camera
};

/// Deterministic from (config, seed inside config); observations are hard
/// renders of the ground-truth mesh, depth-culled against the pad geometry.
SyntheticScene generate_scene(const ScenarioConfig& config);

// ----------------------------------------------------------------------------
// Annotation records and sequence I/O

struct AnnotationRecord {
  int frame = 0;
  VecX theta, beta;
  Vec3 translation = Vec3::Zero();
  VecX d_vert;
  std::map<std::string, std::pair<double, double>> camera_losses;  // (mask, depth)
  bool contact = false;
  std::optional<UVPressureMap> pressure_uv;
};

/// Sequence directory layout:
///   cameras.json pad.json model.json scenario.json
///   frames/<%06d>/cam<i>.png (RGBA: masked appearance + mask in alpha)
///   frames/<%06d>/cam<i>_depth.raw frames/<%06d>/pressure.raw
///   frames/<%06d>/init.json
///   gt/<%06d>.json [gt/<%06d>_uv.raw]
///   annotations/<%06d>.json [annotations/<%06d>_uv.raw]   (written later)
void save_sequence(const SyntheticScene& scene, const ScenarioConfig& config,
                   const std::string& dir);

struct LoadedSequence {
  std::vector<CameraModel> cameras;
  PadGeometry pad;
  HandModel model;
  std::vector<ObservationFrame> frames;
  std::vector<InitEstimate> init_estimates;
  std::vector<AnnotationRecord> gt;  // empty when absent
};

LoadedSequence load_sequence(const std::string& dir);

void save_annotations(const std::vector<AnnotationRecord>& records, const std::string& dir);
std::vector<AnnotationRecord> load_annotations(const std::string& dir);

PadGeometry load_pad(const std::string& path);
void save_pad(const PadGeometry& pad, const std::string& path);

}  // namespace handpress

#endif  // HANDPRESS_SYNTHIO_HPP_
