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
#ifndef HANDPRESS_HAND_MODEL_HPP_
#define HANDPRESS_HAND_MODEL_HPP_

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "handpress/core.hpp"

namespace handpress {

/// Shared immutable mesh connectivity: faces, per-corner UVs, undirected
/// edges, vertex one-rings and adjacent-face pairs.
struct MeshTopology {
  MatX3i faces;            // F x 3 vertex indices
  MatX2 uv;                // 3F x 2, one UV per face corner, row f*3+k
  std::vector<std::pair<int, int>> edges;         // undirected, i < j
  std::vector<std::vector<int>> vertex_neighbors; // one-ring per vertex
  std::vector<std::pair<int, int>> adjacent_faces; // share an edge

  int num_faces() const { return static_cast<int>(faces.rows()); }
  static std::shared_ptr<const MeshTopology> build(const MatX3i& faces, const MatX2& uv);
};

struct Mesh {
  std::shared_ptr<const MeshTopology> topology;
  MatX3 vertices;  // meters
  MatX3 normals;   // unit, area-weighted average of face normals

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  const MatX3i& faces() const { return topology->faces; }
  void recompute_normals();
};

/// Parametric articulated hand: template mesh + skeleton + skinning weights +
/// pose/shape bases + landmark regressor.
struct HandModel {
  MatX3 template_vertices;  // V x 3 (m)
  std::shared_ptr<const MeshTopology> topology;
  MatX3 joints_template;    // J x 3 (m)
  std::vector<int> parents; // J, -1 for the single root
  MatX weights;             // V x J, rows convex
  MatX pose_basis;          // 3J x P, theta -> per-joint axis-angle
  MatX shape_basis;         // 3V x S, beta -> vertex offsets
  MatX joint_regressor;     // L x V, posed vertices -> landmark positions

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_joints() const { return static_cast<int>(joints_template.rows()); }
  int num_pose_coeffs() const { return static_cast<int>(pose_basis.cols()); }
  int num_shape_coeffs() const { return static_cast<int>(shape_basis.cols()); }
  int num_landmarks() const { return static_cast<int>(joint_regressor.rows()); }

  /// Throws DataError when an invariant is violated (weight convexity,
  /// acyclic single-root tree, UV coverage, basis dimensions).
  void validate() const;

  /// Left-hand variant: template and joints mirrored through x=0, face
  /// winding reversed, axis-angle y/z components negated in the pose basis.
  HandModel mirrored_x(bool flip_uv_u) const;
};

struct HandState {
  VecX theta;        // P pose coefficients
  VecX beta;         // S shape coefficients
  Vec3 translation = Vec3::Zero();
  VecX d_vert;       // per-vertex offset along the reference normal (m)

  static HandState rest(const HandModel& m);
};

/// Rest-pose vertices: template + shape_basis * beta.
MatX3 shaped_rest_vertices(const HandModel& model, const VecX& beta);

/// Rest skeleton for a given shape: template joints displaced by the
/// skinning-weighted mean offset of their vertices.
MatX3 shaped_rest_joints(const HandModel& model, const VecX& beta);

/// Linear blend skinning: LBS(template + shape, rotations(pose_basis*theta))
/// + translation, with freshly computed normals.
Mesh skin(const HandModel& model, const VecX& theta, const VecX& beta,
          const Vec3& translation);
inline Mesh skin(const HandModel& m, const HandState& s) {
  return skin(m, s.theta, s.beta, s.translation);
}

/// Forward-mode Jacobian of posed vertices w.r.t. (theta, beta, translation).
/// d_theta[k] and d_beta[s] are V x 3 matrices; dV/dt is identity per vertex.
struct SkinJacobian {
  std::vector<MatX3> d_theta;
  std::vector<MatX3> d_beta;
};
Mesh skin_with_jacobian(const HandModel& model, const HandState& s, SkinJacobian* jac);

/// Posed world transforms of every joint (for FK oracles and debugging).
void forward_kinematics(const HandModel& model, const VecX& theta, const VecX& beta,
                        std::vector<Mat3>* rotations, std::vector<Vec3>* translations);

/// Moves each vertex by d_vert[i] along the *input* mesh's normal (the
/// reference normals are not recomputed before offsetting); the result's
/// normals are recomputed after displacement.
Mesh displace(const Mesh& mesh, const VecX& d_vert);

/// joint_regressor * vertices.
MatX3 regress_joints(const HandModel& model, const Mesh& mesh);

/// Rodrigues rotation and its derivative w.r.t. the axis-angle vector.
Mat3 rodrigues(const Vec3& omega);
void rodrigues_jacobian(const Vec3& omega, Mat3 d_omega[3]);

// Model file I/O (single JSON document, row-major arrays, explicit lengths).
HandModel load_hand_model(const std::string& path);
void save_hand_model(const HandModel& model, const std::string& path);

/// Built-in procedurally generated hand: box palm, extruded square-ish
/// fingers, 16 joints, 21 regressed landmarks, 10 pose and 4 shape coeffs.
HandModel synthetic_hand();

}  // namespace handpress

#endif  // HANDPRESS_HAND_MODEL_HPP_
