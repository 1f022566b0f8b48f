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
#include "handpress/hand_model.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace handpress {

std::shared_ptr<const MeshTopology> MeshTopology::build(const MatX3i& faces,
                                                        const MatX2& uv) {
  auto topo = std::make_shared<MeshTopology>();
  topo->faces = faces;
  topo->uv = uv;
  if (uv.rows() != faces.rows() * 3)
    throw DataError("MeshTopology: uv rows must equal 3 * face count");

  std::set<std::pair<int, int>> edge_set;
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  int max_idx = -1;
  for (int f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      max_idx = std::max(max_idx, std::max(a, b));
      if (a > b) std::swap(a, b);
      edge_set.insert({a, b});
      edge_faces[{a, b}].push_back(f);
    }
  }
  topo->edges.assign(edge_set.begin(), edge_set.end());
  topo->vertex_neighbors.resize(max_idx + 1);
  for (const auto& [a, b] : topo->edges) {
    topo->vertex_neighbors[a].push_back(b);
    topo->vertex_neighbors[b].push_back(a);
  }
  for (const auto& [e, fs] : edge_faces) {
    for (size_t i = 0; i < fs.size(); ++i)
      for (size_t j = i + 1; j < fs.size(); ++j)
        topo->adjacent_faces.emplace_back(fs[i], fs[j]);
  }
  return topo;
}

void Mesh::recompute_normals() {
  normals = MatX3::Zero(vertices.rows(), 3);
  const MatX3i& F = topology->faces;
  for (int f = 0; f < F.rows(); ++f) {
    const Vec3 a = vertices.row(F(f, 0)), b = vertices.row(F(f, 1)), c = vertices.row(F(f, 2));
    const Vec3 fn = (b - a).cross(c - a);  // magnitude = 2 * area
    for (int k = 0; k < 3; ++k) normals.row(F(f, k)) += fn.transpose();
  }
  for (int i = 0; i < normals.rows(); ++i) {
    const double n = normals.row(i).norm();
    if (n > 1e-20) normals.row(i) /= n;
  }
}

void HandModel::validate() const {
  const int V = num_vertices(), J = num_joints();
  if (!topology) throw DataError("HandModel: missing topology");
  if (topology->faces.size() > 0 && topology->faces.maxCoeff() >= V)
    throw DataError("HandModel: face index out of range");
  if (static_cast<int>(parents.size()) != J)
    throw DataError("HandModel: parents length mismatch");
  int roots = 0;
  for (int j = 0; j < J; ++j) {
    if (parents[j] < 0) {
      ++roots;
      continue;
    }
    // walk up; a cycle would exceed J steps
    int p = j, steps = 0;
    while (p >= 0) {
      p = parents[p];
      if (++steps > J) throw DataError("HandModel: kinematic tree has a cycle");
    }
    if (parents[j] >= J) throw DataError("HandModel: parent index out of range");
  }
  if (roots != 1) throw DataError("HandModel: kinematic tree must have a single root");
  if (weights.rows() != V || weights.cols() != J)
    throw DataError("HandModel: weights must be V x J");
  for (int i = 0; i < V; ++i) {
    double s = 0;
    for (int j = 0; j < J; ++j) {
      if (weights(i, j) < -1e-12) throw DataError("HandModel: negative skinning weight");
      s += weights(i, j);
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw DataError("HandModel: skinning weights of vertex " + std::to_string(i) +
                      " sum to " + std::to_string(s));
  }
  if (pose_basis.rows() != 3 * J || pose_basis.cols() < 1)
    throw DataError("HandModel: pose basis must be 3J x P with P >= 1");
  if (shape_basis.rows() != 3 * V)
    throw DataError("HandModel: shape basis must be 3V x S");
  if (joint_regressor.cols() != V)
    throw DataError("HandModel: joint regressor must be L x V");
}

HandModel HandModel::mirrored_x(bool flip_uv_u) const {
  HandModel m = *this;
  m.template_vertices.col(0) *= -1.0;
  m.joints_template.col(0) *= -1.0;
  MatX3i faces = topology->faces;
  for (int f = 0; f < faces.rows(); ++f) std::swap(faces(f, 1), faces(f, 2));
  MatX2 uv(topology->uv.rows(), 2);
  for (int f = 0; f < faces.rows(); ++f) {
    // winding swap exchanges corners 1 and 2
    uv.row(3 * f + 0) = topology->uv.row(3 * f + 0);
    uv.row(3 * f + 1) = topology->uv.row(3 * f + 2);
    uv.row(3 * f + 2) = topology->uv.row(3 * f + 1);
  }
  if (flip_uv_u) uv.col(0) = (1.0 - uv.col(0).array()).matrix();
  m.topology = MeshTopology::build(faces, uv);
  // Mirror conjugation of a rotation: axis-angle (x, y, z) -> (x, -y, -z).
  for (int j = 0; j < num_joints(); ++j) {
    m.pose_basis.row(3 * j + 1) *= -1.0;
    m.pose_basis.row(3 * j + 2) *= -1.0;
  }
  for (int i = 0; i < num_vertices(); ++i) m.shape_basis.row(3 * i + 0) *= -1.0;
  return m;
}

HandState HandState::rest(const HandModel& m) {
  HandState s;
  s.theta = VecX::Zero(m.num_pose_coeffs());
  s.beta = VecX::Zero(m.num_shape_coeffs());
  s.d_vert = VecX::Zero(m.num_vertices());
  return s;
}

MatX3 shaped_rest_vertices(const HandModel& model, const VecX& beta) {
  if (beta.size() != model.num_shape_coeffs())
    throw std::invalid_argument("beta dimension mismatch");
  MatX3 v = model.template_vertices;
  if (beta.size() > 0) {
    const VecX off = model.shape_basis * beta;
    for (int i = 0; i < v.rows(); ++i)
      v.row(i) += Eigen::RowVector3d(off[3 * i], off[3 * i + 1], off[3 * i + 2]);
  }
  return v;
}

MatX3 shaped_rest_joints(const HandModel& model, const VecX& beta) {
  MatX3 joints = model.joints_template;
  if (beta.size() == 0 || beta.isZero(0)) return joints;
  const VecX off = model.shape_basis * beta;
  const int V = model.num_vertices();
  for (int j = 0; j < model.num_joints(); ++j) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0;
    for (int i = 0; i < V; ++i) {
      const double w = model.weights(i, j);
      if (w <= 0) continue;
      acc += w * Vec3(off[3 * i], off[3 * i + 1], off[3 * i + 2]);
      wsum += w;
    }
    if (wsum > 1e-12) joints.row(j) += (acc / wsum).transpose();
  }
  return joints;
}

Mat3 rodrigues(const Vec3& omega) {
  const double th = omega.norm();
  if (th < 1e-12) {
    Mat3 K;
    K << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return Mat3::Identity() + K;  // first order
  }
  return Eigen::AngleAxisd(th, omega / th).toRotationMatrix();
}

static Mat3 skew(const Vec3& v) {
  Mat3 K;
  K << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return K;
}

void rodrigues_jacobian(const Vec3& omega, Mat3 d_omega[3]) {
  // dR/dw_k = ((w_k [w]x + [w x (I - R) e_k]x) / |w|^2) R, with the small-angle
  // limit dR/dw_k -> [e_k]x.
  const double th2 = omega.squaredNorm();
  const Mat3 R = rodrigues(omega);
  for (int k = 0; k < 3; ++k) {
    const Vec3 ek = Vec3::Unit(k);
    if (th2 < 1e-16) {
      d_omega[k] = skew(ek);
    } else {
      const Vec3 v = omega.cross((Mat3::Identity() - R) * ek);
      d_omega[k] = ((omega[k] * skew(omega) + skew(v)) / th2) * R;
    }
  }
}

namespace {

struct JointFrame {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

// World transforms G_j = G_parent * T(r_j - r_parent) * R_j, root uses r_root.
void fk_frames(const HandModel& model, const MatX3& rest_joints,
               const std::vector<Mat3>& local_rot, std::vector<JointFrame>* out) {
  const int J = model.num_joints();
  out->resize(J);
  for (int j = 0; j < J; ++j) {
    const int p = model.parents[j];
    const Vec3 rj = rest_joints.row(j);
    Vec3 offset = rj;
    JointFrame parent;
    if (p >= 0) {
      parent = (*out)[p];
      offset = rj - Vec3(rest_joints.row(p));
    }
    JointFrame f;
    f.R = parent.R * local_rot[j];
    f.t = parent.R * offset + parent.t;
    (*out)[j] = f;
  }
}

}  // namespace

void forward_kinematics(const HandModel& model, const VecX& theta, const VecX& beta,
                        std::vector<Mat3>* rotations, std::vector<Vec3>* translations) {
  const int J = model.num_joints();
  const VecX pose = model.pose_basis * theta;
  std::vector<Mat3> local(J);
  for (int j = 0; j < J; ++j) local[j] = rodrigues(pose.segment<3>(3 * j));
  const MatX3 rest_joints = shaped_rest_joints(model, beta);
  std::vector<JointFrame> frames;
  fk_frames(model, rest_joints, local, &frames);
  rotations->resize(J);
  translations->resize(J);
  for (int j = 0; j < J; ++j) {
    (*rotations)[j] = frames[j].R;
    // skinning transform S_j = G_j * T(-r_j): maps rest space to posed space
    (*translations)[j] = frames[j].t - frames[j].R * Vec3(rest_joints.row(j));
  }
}

Mesh skin(const HandModel& model, const VecX& theta, const VecX& beta,
          const Vec3& translation) {
  HandState s;
  s.theta = theta;
  s.beta = beta;
  s.translation = translation;
  return skin_with_jacobian(model, s, nullptr);
}

Mesh skin_with_jacobian(const HandModel& model, const HandState& s, SkinJacobian* jac) {
  const int V = model.num_vertices(), J = model.num_joints();
  const int P = model.num_pose_coeffs(), S = model.num_shape_coeffs();
  if (s.theta.size() != P) throw std::invalid_argument("skin: theta dimension mismatch");
  if (s.beta.size() != S) throw std::invalid_argument("skin: beta dimension mismatch");

  const VecX pose = model.pose_basis * s.theta;
  std::vector<Mat3> local(J);
  std::vector<std::array<Mat3, 3>> dlocal(J);
  for (int j = 0; j < J; ++j) {
    const Vec3 w = pose.segment<3>(3 * j);
    local[j] = rodrigues(w);
    if (jac) rodrigues_jacobian(w, dlocal[j].data());
  }

  const MatX3 rest_joints = shaped_rest_joints(model, s.beta);
  const MatX3 rest_verts = shaped_rest_vertices(model, s.beta);
  std::vector<JointFrame> frames;
  fk_frames(model, rest_joints, local, &frames);

  // Skinning transforms S_j = (R_j, t_j - R_j r_j).
  std::vector<Mat3> SR(J);
  std::vector<Vec3> St(J);
  for (int j = 0; j < J; ++j) {
    SR[j] = frames[j].R;
    St[j] = frames[j].t - frames[j].R * Vec3(rest_joints.row(j));
  }

  Mesh mesh;
  mesh.topology = model.topology;
  mesh.vertices.resize(V, 3);
  for (int i = 0; i < V; ++i) {
    Vec3 acc = Vec3::Zero();
    const Vec3 v = rest_verts.row(i);
    for (int j = 0; j < J; ++j) {
      const double w = model.weights(i, j);
      if (w != 0.0) acc += w * (SR[j] * v + St[j]);
    }
    mesh.vertices.row(i) = (acc + s.translation).transpose();
  }
  mesh.recompute_normals();

  if (!jac) return mesh;

  // Forward-mode tangents per parameter. For each p we propagate
  // dG_j = dG_parent * L_j + G_parent * dL_j through the chain, where the
  // local transform is L_j = (R_j^local, r_j - r_parent).
  jac->d_theta.assign(P, MatX3::Zero(V, 3));
  jac->d_beta.assign(S, MatX3::Zero(V, 3));

  struct FrameTangent {
    Mat3 dR = Mat3::Zero();
    Vec3 dt = Vec3::Zero();
  };

  // Shape derivative of rest joints: linear, reuse shaped_rest_joints per unit.
  std::vector<MatX3> drj_dbeta(S);
  std::vector<MatX3> drv_dbeta(S);
  for (int sidx = 0; sidx < S; ++sidx) {
    VecX unit = VecX::Zero(S);
    unit[sidx] = 1.0;
    drj_dbeta[sidx] = shaped_rest_joints(model, unit) - model.joints_template;
    MatX3 dv(V, 3);
    for (int i = 0; i < V; ++i)
      dv.row(i) = Eigen::RowVector3d(model.shape_basis(3 * i, sidx),
                                     model.shape_basis(3 * i + 1, sidx),
                                     model.shape_basis(3 * i + 2, sidx));
    drv_dbeta[sidx] = dv;
  }

  std::vector<FrameTangent> dframes(J);
  std::vector<Mat3> dSR(J);
  std::vector<Vec3> dSt(J);

  auto propagate = [&](const std::function<Mat3(int)>& dlocal_rot,
                       const std::function<Vec3(int)>& doffset,
                       const std::function<Vec3(int)>& drest_joint) {
    for (int j = 0; j < J; ++j) {
      const int p = model.parents[j];
      const Vec3 rj = rest_joints.row(j);
      Vec3 offset = rj;
      JointFrame parent;
      FrameTangent dparent;
      if (p >= 0) {
        parent = frames[p];
        dparent = dframes[p];
        offset = rj - Vec3(rest_joints.row(p));
      }
      FrameTangent d;
      d.dR = dparent.dR * local[j] + parent.R * dlocal_rot(j);
      d.dt = dparent.dR * offset + parent.R * doffset(j) + dparent.dt;
      dframes[j] = d;
      dSR[j] = d.dR;
      dSt[j] = d.dt - d.dR * rj - frames[j].R * drest_joint(j);
    }
  };

  auto accumulate = [&](MatX3* out, const std::function<Vec3(int)>& dvrest) {
    for (int i = 0; i < V; ++i) {
      Vec3 acc = Vec3::Zero();
      const Vec3 v = rest_verts.row(i);
      const Vec3 dv = dvrest(i);
      for (int j = 0; j < J; ++j) {
        const double w = model.weights(i, j);
        if (w != 0.0) acc += w * (dSR[j] * v + SR[j] * dv + dSt[j]);
      }
      out->row(i) = acc.transpose();
    }
  };

  for (int k = 0; k < P; ++k) {
    propagate(
        [&](int j) {
          Mat3 dR = Mat3::Zero();
          for (int a = 0; a < 3; ++a) {
            const double c = model.pose_basis(3 * j + a, k);
            if (c != 0.0) dR += c * dlocal[j][a];
          }
          return dR;
        },
        [&](int) { return Vec3::Zero(); }, [&](int) { return Vec3::Zero(); });
    accumulate(&jac->d_theta[k], [&](int) { return Vec3::Zero(); });
  }
  for (int sidx = 0; sidx < S; ++sidx) {
    propagate([&](int) { return Mat3::Zero(); },
              [&](int j) {
                const int p = model.parents[j];
                Vec3 doff = drj_dbeta[sidx].row(j);
                if (p >= 0) doff -= Vec3(drj_dbeta[sidx].row(p));
                return doff;
              },
              [&](int j) { return Vec3(drj_dbeta[sidx].row(j)); });
    accumulate(&jac->d_beta[sidx], [&](int i) { return Vec3(drv_dbeta[sidx].row(i)); });
  }
  return mesh;
}

Mesh displace(const Mesh& mesh, const VecX& d_vert) {
  if (d_vert.size() != mesh.vertices.rows())
    throw std::invalid_argument("displace: d_vert length mismatch");
  Mesh out = mesh;
  for (int i = 0; i < out.vertices.rows(); ++i)
    out.vertices.row(i) += d_vert[i] * mesh.normals.row(i);
  out.recompute_normals();
  return out;
}

MatX3 regress_joints(const HandModel& model, const Mesh& mesh) {
  if (mesh.vertices.rows() != model.joint_regressor.cols())
    throw std::invalid_argument("regress_joints: vertex count mismatch");
  return model.joint_regressor * mesh.vertices;
}

}  // namespace handpress
