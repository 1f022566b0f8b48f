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
#ifndef HANDPRESS_CAMERA_HPP_
#define HANDPRESS_CAMERA_HPP_

#include <optional>
#include <string>
#include <vector>

#include "handpress/core.hpp"

namespace handpress {

enum class CameraKind { kPerspective, kOrthographic };

/// Pinhole or orthographic camera. World-to-camera: x_cam = R * x_world + t.
/// Perspective pixels: (fx*X/Z + cx, fy*Y/Z + cy); orthographic pixels:
/// (ppm*X + cx, ppm*Y + cy). Depth is the camera-frame Z in both cases.
struct CameraModel {
  std::string id;
  CameraKind kind = CameraKind::kPerspective;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double pixels_per_meter = 0;  // orthographic only

  void validate() const;
  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 view_direction() const { return rotation.row(2).transpose(); }

  /// Principal-point-shifted sub-window camera (crop support).
  CameraModel window(int x0, int y0, int w, int h) const;
};

struct Projection {
  Vec2 pixel;
  double depth = 0;
  bool behind = false;  // non-positive perspective depth
};

Projection project(const CameraModel& camera, const Vec3& point);
std::vector<Projection> project(const CameraModel& camera, const MatX3& points);

/// d(pixel, depth)/d(world point): rows (du, dv, dz), columns world xyz.
Mat3 projection_jacobian(const CameraModel& camera, const Vec3& point);

struct TriangulationResult {
  Vec3 point;
  double rms_px = 0;
  bool ill_conditioned = false;
};

/// Linear DLT followed by Gauss-Newton reprojection refinement.
/// Throws std::invalid_argument with fewer than two observations.
TriangulationResult triangulate(const std::vector<CameraModel>& cameras,
                                const std::vector<Vec2>& observations);

struct PnpResult {
  Mat3 rotation;
  Vec3 translation;
  double mean_reprojection_px = 0;
  int iterations = 0;
};

/// Pose from 2D-3D correspondences. Coplanar targets are initialized from a
/// homography decomposition, general ones from DLT; both are refined by
/// Gauss-Newton on squared reprojection error.
PnpResult solve_pnp(const MatX3& object_points, const MatX2& image_points,
                    const CameraModel& intrinsics);

// ----------------------------------------------------------------------------
// Pose timeline with Slerp gap filling.

struct TimelinePose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
};

struct PoseTimeline {
  std::vector<std::optional<TimelinePose>> poses;
  std::vector<double> reprojection_px;  // per frame, 0 where invalid
  std::vector<double> timestamps;       // strictly increasing (s)
  std::vector<bool> interpolated;       // set by slerp_fill

  void validate() const;
};

/// Fills missing poses: rotations by shortest-arc Slerp between the nearest
/// valid neighbors, translations linearly, both parameterized by timestamp
/// fraction. Throws DataError when a gap touches the sequence boundary.
PoseTimeline slerp_fill(const PoseTimeline& timeline);

Quat slerp(const Quat& a, const Quat& b, double t);

// Calibration file: array of per-camera records {id, fx, fy, cx, cy, width,
// height, R (9 row-major), t (3)}; an optional "distortion" field must be
// empty or all-zero.
std::vector<CameraModel> load_cameras(const std::string& path);
void save_cameras(const std::vector<CameraModel>& cameras, const std::string& path);

}  // namespace handpress

#endif  // HANDPRESS_CAMERA_HPP_
