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
#ifndef HANDPRESS_MARKER_HPP_
#define HANDPRESS_MARKER_HPP_

#include <array>
#include <map>
#include <string>
#include <vector>

#include "handpress/camera.hpp"
#include "handpress/core.hpp"

namespace handpress {

/// Labels of the nine active markers around the pad.
constexpr std::array<const char*, 9> kMarkerLabels = {"0", "1", "2", "3", "4",
                                                      "5", "L", "M", "R"};

/// Asymmetric 9-marker board. Labels follow the identification procedure:
/// 0/M are the closest pair, 2 and 4 extend their line, L sits nearest that
/// line on 0's side, 3 lies alone across the 0-centroid line, 5 hugs that
/// line, and 1 is nearer than R to the 2-5 line.
struct MarkerLayout {
  std::map<std::string, Vec3> positions;  // label -> 3D position (m)
  Vec3 normal = Vec3::UnitZ();            // marker-bearing side of the board

  /// Checks the identification predicates with margins on the nominal
  /// top-down view and a sweep of anisotropic compressions (oblique views).
  /// Throws DataError when the layout is ambiguous.
  void validate() const;

  MatX3 points_in_order() const;  // rows ordered as kMarkerLabels
};

/// Built-in layout respecting the board topology; validated at construction.
MarkerLayout canonical_marker_layout();

MarkerLayout load_marker_layout(const std::string& path);
void save_marker_layout(const MarkerLayout& layout, const std::string& path);

struct InsufficientMarkersError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AmbiguousIdentificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Threshold, 8-connected components, intensity-weighted centroids;
/// components under 2 px area discarded. Coordinates are pixel indices.
std::vector<Vec2> detect_markers(const ImageF& ir_image, double intensity_threshold);

/// Identification of all nine markers from unordered 2D centroids.
/// With more than nine centroids every 9-subset is tried; a subset counts as
/// consistent when the predicates hold and, when a layout is supplied, the
/// labeled points fit a board-to-image homography. Exactly one consistent
/// subset must remain. Predicate ties within 1e-3 of the minimum pairwise
/// distance raise AmbiguousIdentificationError.
std::map<std::string, Vec2> identify_markers(const std::vector<Vec2>& centroids,
                                             const MarkerLayout* layout = nullptr);

struct TrackingConfig {
  double intensity_threshold = 128.0;
  double reprojection_filter_px = 1.0;  // frames above are invalidated
  double frame_rate = 30.0;
};

/// Per frame: detect -> identify -> PnP; frames over the reprojection filter
/// or with failed identification are invalidated and Slerp-filled.
PoseTimeline track_camera(const std::vector<ImageF>& frames, const MarkerLayout& layout,
                          const CameraModel& intrinsics, const TrackingConfig& config = {});

}  // namespace handpress

#endif  // HANDPRESS_MARKER_HPP_
