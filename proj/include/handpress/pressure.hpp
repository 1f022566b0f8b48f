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
#ifndef HANDPRESS_PRESSURE_HPP_
#define HANDPRESS_PRESSURE_HPP_

#include <string>
#include <vector>

#include "handpress/camera.hpp"
#include "handpress/core.hpp"
#include "handpress/hand_model.hpp"

namespace handpress {

struct PadGeometry;  // rasterizer.hpp

/// Pressure counting as contact: strictly above 0.5 kPa.
constexpr double kContactThresholdPa = 500.0;

/// Touchpad pressure grid in pascals with its world placement.
struct PressureFrame {
  ImageF grid;         // cols x rows, Pa
  Vec3 origin = Vec3::Zero();   // pad corner (world, m)
  Vec3 u_dir = Vec3::UnitX();   // unit, along extent.x
  Vec3 v_dir = Vec3::UnitY();
  Vec2 extent = Vec2(0.240, 0.1695);
  double timestamp = 0;

  void validate() const;
};

/// Scalar pressure texture over the hand's UV atlas (Pa).
struct UVPressureMap {
  ImageF values;
};

/// Cell is contact iff pressure > threshold (strict).
ImageU8 contact_mask(const ImageF& pressure, double threshold_pa = kContactThresholdPa);

/// Rasterizes an image-space pressure map into UV space over the faces that
/// are averted from the camera (identified by inverting normals and the
/// z-test, i.e. the farthest surface); camera-facing faces receive zero.
UVPressureMap bake_pressure_to_uv(const Mesh& mesh, const CameraModel& camera,
                                  const ImageF& pressure_image, int uv_resolution = 256);

/// Variant for the virtual under-pad view: bakes a pad pressure grid through
/// the pad's orthographic geometry onto the pad-facing surface.
UVPressureMap bake_pad_pressure_to_uv(const Mesh& mesh, const PadGeometry& pad,
                                      const ImageF& pressure_grid, int uv_resolution = 256);

/// Binary mask of texels covered by any face of the UV atlas.
ImageU8 uv_atlas_mask(const MeshTopology& topology, int uv_resolution);

// ----------------------------------------------------------------------------
// Evaluation metrics (PressureVision conventions).

/// IoU of thresholded contact masks, in percent; both empty -> 100, flagged.
struct MetricValue {
  double value = 0;
  bool degenerate = false;
};

MetricValue metric_contact_iou(const ImageF& est, const ImageF& gt);
/// 100 * sum(min) / sum(max); both all-zero -> 100, flagged.
MetricValue metric_volumetric_iou(const ImageF& est, const ImageF& gt);
/// Mean absolute error over all grid cells (Pa).
double metric_mae(const ImageF& est, const ImageF& gt);
/// Percent of frames whose any-contact flag matches.
double metric_temporal_accuracy(const std::vector<ImageF>& est,
                                const std::vector<ImageF>& gt);

/// Contact and volumetric IoU over UV texels restricted to the atlas mask.
std::pair<MetricValue, MetricValue> uv_metrics(const UVPressureMap& est,
                                               const UVPressureMap& gt,
                                               const ImageU8& atlas);

/// Total force (N) represented by a pressure grid: sum of cell pressure times
/// cell area.
double grid_force(const PressureFrame& frame);
double image_force(const ImageF& grid, const Vec2& extent_m);

/// Total force carried by a UV pressure map: per-texel pressure times the
/// texel's 3D surface area (UV area scaled by the face's 3D/UV area ratio).
double uv_force(const UVPressureMap& map, const Mesh& mesh);

struct MetricsRow {
  int frame = 0;
  double contact_iou = 0;
  double vol_iou = 0;
  double mae_pa = 0;
  bool contact_est = false;
  bool contact_gt = false;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace handpress

#endif  // HANDPRESS_PRESSURE_HPP_
