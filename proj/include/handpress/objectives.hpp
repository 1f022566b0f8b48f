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
#ifndef HANDPRESS_OBJECTIVES_HPP_
#define HANDPRESS_OBJECTIVES_HPP_

#include <vector>

#include "handpress/pressure.hpp"
#include "handpress/rasterizer.hpp"

namespace handpress {

struct LossWeights {
  double lambda_mask = 1.0;
  double lambda_appearance = 0.1;
  double lambda_depth = 1.0;
  double intersection = 1.0;
  double arap = 0.5;
  double laplacian = 0.1;
  double normal_consistency = 0.01;
  double offset = 1.0;
  double temporal = 0.1;
  double virtual_pressure = 1e-6;  // per Pa^2
  double virtual_contact = 1.0;
  double beta_l2 = 1e-3;

  void validate() const;
};

/// One multi-camera observation: masked appearance/depth plus the binary hand
/// mask per static camera, the pad pressure frame, and a timestamp.
struct ObservationFrame {
  std::vector<ImageF> appearance;  // I_gt = I_in (*) M_gt, 3 channels
  std::vector<ImageF> depth;       // D_gt = D_in (*) M_gt, meters
  std::vector<ImageF> mask;        // M_gt, binary {0,1}
  PressureFrame pressure;          // P_gt
  double timestamp = 0;

  void validate() const;
};

struct LossValue {
  double value = 0;
  bool degenerate = false;
};

// Soft IoU losses: intersection = sum of per-pixel minima, union = maxima.
LossValue mask_iou_loss(const ImageD& rendered, const ImageF& gt);
LossValue mask_iou_loss_backward(const ImageD& rendered, const ImageF& gt, ImageD* d_rendered);

/// MSE over pixels inside gt-mask union rendered coverage, averaged per
/// channel; rendered coverage comes from the face_id raster.
LossValue appearance_loss(const ImageD& feature, const ImageI& face_id,
                          const ImageF& gt_appearance, const ImageF& gt_mask);
LossValue appearance_loss_backward(const ImageD& feature, const ImageI& face_id,
                                   const ImageF& gt_appearance, const ImageF& gt_mask,
                                   ImageD* d_feature);

LossValue depth_vol_iou_loss(const ImageD& rendered, const ImageF& gt);
LossValue depth_vol_iou_loss_backward(const ImageD& rendered, const ImageF& gt,
                                      ImageD* d_rendered);

struct RenderLossBreakdown {
  double total = 0;
  std::vector<double> mask_iou;      // per camera
  std::vector<double> appearance;    // per camera
  std::vector<double> depth_vol_iou; // per camera
  bool degenerate = false;
};

/// Sum over cameras of lambda_M * mask-IoU + lambda_A * appearance MSE +
/// lambda_D * depth volumetric IoU. Depth culling must already be applied.
RenderLossBreakdown render_loss(const std::vector<RenderOutput>& renders,
                                const ObservationFrame& obs, const LossWeights& weights);

// ----------------------------------------------------------------------------
// Geometry terms

/// Self-intersections (BVH-accelerated triangle pair tests, vertex-to-plane
/// penetration depth) plus squared exit distance of vertices inside collider
/// boxes. Zero when nothing intersects.
double intersection_loss(const Mesh& mesh, const std::vector<Obb>& colliders);
double intersection_loss_backward(const Mesh& mesh, const std::vector<Obb>& colliders,
                                  MatX3* d_vertices);

/// (1/|E|) sum over vertices and incident edges of | |e*| - |e_ref| |;
/// each undirected edge contributes twice, |E| counts undirected edges.
double arap_loss(const Mesh& mesh_star, const Mesh& mesh_ref);
double arap_loss_backward(const Mesh& mesh_star, const Mesh& mesh_ref, MatX3* d_vertices);

/// Mean squared norm of uniform Laplacian vectors (vertex minus one-ring mean).
double laplacian_loss(const Mesh& mesh);
double laplacian_loss_backward(const Mesh& mesh, MatX3* d_vertices);

/// Mean over adjacent-face pairs of (1 - cos angle between face normals).
double normal_consistency_loss(const Mesh& mesh);
double normal_consistency_loss_backward(const Mesh& mesh, MatX3* d_vertices);

inline double offset_loss(const VecX& d_vert) { return d_vert.squaredNorm(); }
inline double offset_loss_backward(const VecX& d_vert, VecX* grad) {
  *grad = 2.0 * d_vert;
  return d_vert.squaredNorm();
}

/// (1/(B-2)) sum_i || J_{i+2} - 2 J_{i+1} + J_i ||_2 (Frobenius norm per term).
/// Throws std::invalid_argument when fewer than 3 frames are given.
double temporal_loss(const std::vector<MatX3>& joint_trajectories);
double temporal_loss_backward(const std::vector<MatX3>& joint_trajectories,
                              std::vector<MatX3>* d_joints);

// ----------------------------------------------------------------------------
// Virtual render objective

struct VirtualRenderLoss {
  double pressure_mse = 0;   // Pa^2, over all sensel cells
  double contact_l1 = 0;     // m, mean over contact pixels covered by the mesh
  double total = 0;          // pressure_mse + contact_l1 (paper formula)
  int contact_pixels = 0;
  int uncovered_contact_pixels = 0;
};

/// MSE(rendered pressure, P_gt) + mean over contact pixels of
/// |depth - Z_v2p|; contact = P_gt > 500 Pa (strict).
VirtualRenderLoss virtual_render_loss(const VirtualRender& vr, const PressureFrame& gt,
                                      const PadGeometry& pad);
VirtualRenderLoss virtual_render_loss_backward(const VirtualRender& vr,
                                               const PressureFrame& gt,
                                               const PadGeometry& pad,
                                               double w_pressure, double w_contact,
                                               ImageD* d_pressure, ImageD* d_depth);

}  // namespace handpress

#endif  // HANDPRESS_OBJECTIVES_HPP_
