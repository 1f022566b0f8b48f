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
#ifndef HANDPRESS_RASTERIZER_HPP_
#define HANDPRESS_RASTERIZER_HPP_

#include <limits>

#include "handpress/camera.hpp"
#include "handpress/core.hpp"
#include "handpress/hand_model.hpp"

namespace handpress {

/// Texture over UV space; values sampled bilinearly with clamped borders.
struct Texture {
  ImageD values;  // W x H x C

  Texture() = default;
  Texture(int w, int h, int c, double fill = 0.0) : values(w, h, c, fill) {}
  int channels() const { return values.channels(); }
  double sample(double u, double v, int c) const {
    return bilinear(values, u * values.width(), v * values.height(), c);
  }
};

struct RasterizerOptions {
  double sigma = 1.0;    // soft silhouette width, pixels
  double cutoff = 8.0;   // soft influence radius in sigmas
  bool soft_mask = true; // false: hard coverage in [0,1] (0/1)
  enum class Facing { kFront, kBack, kAll };
  Facing facing = Facing::kFront;  // faces contributing depth/feature
  bool farthest = false;           // invert the z-test (occluded-surface picks)
  double near_clip = 1e-6;
  int tile = 32;
};

/// Per-pixel render result. Empty pixels: mask 0 (plus soft tails), depth 0,
/// feature 0, face_id -1.
struct RenderOutput {
  ImageD mask;
  ImageD depth;
  ImageD feature;
  ImageI face_id;

  int width() const { return mask.width(); }
  int height() const { return mask.height(); }
};

/// Soft differentiable rasterization: hard z-buffer for depth/feature
/// (barycentric interpolation, nearest front-facing face), soft silhouette
/// mask as the probabilistic union over faces of sigmoid(signed pixel
/// distance to the face boundary / sigma). Back-facing faces are excluded
/// from depth/feature but contribute to the silhouette.
RenderOutput rasterize(const Mesh& mesh, const CameraModel& camera,
                       const Texture* texture, const RasterizerOptions& opts = {});

struct RenderGrad {
  MatX3 d_vertices;   // dL/d(world vertex)
  ImageD d_texture;   // dL/d(texel), empty when no texture
};

/// Adjoint of rasterize: upstream per-pixel gradients for any subset of the
/// mask/depth/feature channels (null = zero). Deterministic independent of
/// thread count. Passing the matching forward render avoids recomputing the
/// hard pass.
RenderGrad rasterize_backward(const Mesh& mesh, const CameraModel& camera,
                              const Texture* texture, const RasterizerOptions& opts,
                              const ImageD* d_mask, const ImageD* d_depth,
                              const ImageD* d_feature,
                              const RenderOutput* forward = nullptr);

// ----------------------------------------------------------------------------
// Depth culling against static scene obstacles.

/// Per-camera depth of static scene geometry; +inf where empty.
struct ObstacleDepth {
  ImageD depth;
  static constexpr double kEmpty = std::numeric_limits<double>::infinity();
};

/// Zeroes mask/depth/feature at pixels where the obstacle is at or in front
/// of the rendered surface (obstacle depth <= rendered depth). If `kept` is
/// given it receives the per-pixel keep mask for gradient masking.
RenderOutput depth_cull(const RenderOutput& render, const ObstacleDepth& obstacles,
                        ImageU8* kept = nullptr);

// ----------------------------------------------------------------------------
// Touchpad geometry and the virtual under-pad orthographic render.

/// Oriented box collider (for the intersection loss).
struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns are unit axes
  Vec3 half_extents = Vec3::Zero();
};

struct PadGeometry {
  Vec3 center = Vec3::Zero();            // center of the sensing surface
  Vec3 u_dir = Vec3::UnitX();            // along the 240 mm edge
  Vec3 v_dir = Vec3::UnitY();            // along the 169.5 mm edge
  Vec2 extent = Vec2(0.240, 0.1695);     // m
  int cols = 185, rows = 105;            // sensel grid
  double thickness = 0.012;              // collision box below the surface
  double camera_plane_offset = 0.01;     // Z_v2p: virtual camera plane to pad

  Vec3 normal() const { return u_dir.cross(v_dir).normalized(); }
  Obb collision_box() const;
  /// Occluder body for depth culling: the collision box recessed below the
  /// sensing surface, so exact-contact pixels are never culled away.
  Obb occluder_box(double recess = 0.0015) const;
  /// Pad-plane coordinates (u, v) in meters from the pad corner and height
  /// above the surface.
  Vec3 to_pad_frame(const Vec3& world) const;
};

/// Result of the virtual orthographic render below the pad. The depth channel
/// reports camera_plane_offset - height_above_pad where covered (so a surface
/// resting on the pad reads exactly Z_v2p) and 0 elsewhere; consult the mask
/// for coverage. Only pad-facing (downward-normal) faces participate, with a
/// farthest-from-above z-test picking the surface closest to the pad.
struct VirtualRender {
  ImageD pressure;  // Pa
  ImageD depth;
  ImageD mask;
  ImageI face_id;
};

VirtualRender rasterize_under_pad(const Mesh& mesh, const PadGeometry& pad,
                                  const Texture* pressure_texture);

struct VirtualGrad {
  MatX3 d_vertices;
  ImageD d_texture;
};

VirtualGrad rasterize_under_pad_backward(const Mesh& mesh, const PadGeometry& pad,
                                         const Texture* pressure_texture,
                                         const ImageD* d_pressure, const ImageD* d_depth);

/// Hard depth render of obstacle geometry (pad box + optional extra boxes)
/// for a camera, producing an ObstacleDepth raster.
ObstacleDepth render_obstacles(const std::vector<Obb>& boxes, const CameraModel& camera);

/// Box surface triangulation (12 faces).
Mesh obb_mesh(const Obb& box);

// Render dumps: raw float grids (exact) and 8-bit PNG previews live in
// synthio; see write_raw/read_raw in core.

}  // namespace handpress

#endif  // HANDPRESS_RASTERIZER_HPP_
