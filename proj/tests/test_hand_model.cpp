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

#include <filesystem>
#include <map>

#include "handpress/hand_model.hpp"

using namespace handpress;

namespace {

// Independent per-vertex forward kinematics: walk the chain from the root,
// rotating the vertex rigidly about each joint's rest position in turn.
Vec3 fk_oracle_vertex(const HandModel& m, const VecX& theta, int joint, const Vec3& v) {
  const VecX pose = m.pose_basis * theta;
  // chain from root to `joint`
  std::vector<int> chain;
  for (int j = joint; j >= 0; j = m.parents[j]) chain.push_back(j);
  std::reverse(chain.begin(), chain.end());
  Vec3 p = v;
  std::vector<Vec3> joint_pos(m.num_joints());
  for (int j = 0; j < m.num_joints(); ++j) joint_pos[j] = m.joints_template.row(j);
  // apply rotations leaf-to-root: each rotates the point and all deeper joints
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    const int j = *it;
    const Vec3 w = pose.segment<3>(3 * j);
    const Mat3 R = rodrigues(w);
    const Vec3 r = joint_pos[j];
    p = R * (p - r) + r;
  }
  return p;
}

HandModel two_bone_model() {
  // two joints along x, a handful of vertices, trivially valid
  HandModel m;
  m.template_vertices.resize(4, 3);
  m.template_vertices << 0, 0, 0, 0.1, 0, 0, 0.2, 0, 0, 0.3, 0, 0;
  MatX3i faces(2, 3);
  faces << 0, 1, 2, 1, 3, 2;
  MatX2 uv = MatX2::Zero(6, 2);
  m.topology = MeshTopology::build(faces, uv);
  m.joints_template.resize(2, 3);
  m.joints_template << 0, 0, 0, 0.15, 0, 0;
  m.parents = {-1, 0};
  m.weights = MatX::Zero(4, 2);
  m.weights << 1, 0, 1, 0, 0, 1, 0, 1;
  m.pose_basis = MatX::Zero(6, 2);
  m.pose_basis(2, 0) = 1.0;  // coeff 0: root rotation about z
  m.pose_basis(5, 1) = 1.0;  // coeff 1: joint 1 rotation about z
  m.shape_basis = MatX::Zero(12, 1);
  for (int i = 0; i < 4; ++i) m.shape_basis(3 * i, 0) = 0.1 * i;
  m.joint_regressor = MatX::Zero(2, 4);
  m.joint_regressor(0, 0) = 1.0;
  m.joint_regressor(1, 2) = 1.0;
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("skin at rest reproduces the template exactly") {
  const HandModel m = synthetic_hand();
  const Mesh mesh = skin(m, VecX::Zero(m.num_pose_coeffs()), VecX::Zero(m.num_shape_coeffs()),
                         Vec3::Zero());
  CHECK((mesh.vertices - m.template_vertices).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("skin translation shifts every vertex") {
  const HandModel m = synthetic_hand();
  const Vec3 t(0.1, 0, 0);
  const Mesh mesh = skin(m, VecX::Zero(m.num_pose_coeffs()), VecX::Zero(m.num_shape_coeffs()), t);
  for (int i = 0; i < m.num_vertices(); ++i) {
    CHECK(mesh.vertices(i, 0) == doctest::Approx(m.template_vertices(i, 0) + 0.1).epsilon(1e-12));
    CHECK(mesh.vertices(i, 1) == doctest::Approx(m.template_vertices(i, 1)).epsilon(1e-12));
  }
}

TEST_CASE("single joint rotation matches the per-vertex FK oracle") {
  const HandModel m = two_bone_model();
  VecX theta = VecX::Zero(2);
  theta[1] = M_PI / 2;  // joint 1 rotated 90 degrees about its axis
  const Mesh mesh = skin(m, theta, VecX::Zero(1), Vec3::Zero());
  // vertices 2 and 3 carry weight 1 on joint 1
  for (int vi : {2, 3}) {
    const Vec3 expect = fk_oracle_vertex(m, theta, 1, Vec3(m.template_vertices.row(vi)));
    CHECK((Vec3(mesh.vertices.row(vi)) - expect).norm() < 1e-12);
  }
  // a 90 degree z-rotation about (0.15,0,0) maps (0.2,0,0) -> (0.15,0.05,0)
  CHECK(mesh.vertices(2, 0) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(mesh.vertices(2, 1) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("FK oracle agrees with skinning on the synthetic hand for weight-1 vertices") {
  const HandModel m = synthetic_hand();
  auto rng = make_rng(3);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  VecX theta(m.num_pose_coeffs());
  for (int k = 0; k < theta.size(); ++k) theta[k] = u(rng);
  const Mesh mesh = skin(m, theta, VecX::Zero(m.num_shape_coeffs()), Vec3::Zero());
  int checked = 0;
  for (int i = 0; i < m.num_vertices() && checked < 40; ++i) {
    int owner = -1;
    for (int j = 0; j < m.num_joints(); ++j)
      if (m.weights(i, j) == 1.0) owner = j;
    if (owner < 0) continue;
    const Vec3 expect = fk_oracle_vertex(m, theta, owner, Vec3(m.template_vertices.row(i)));
    CHECK((Vec3(mesh.vertices.row(i)) - expect).norm() < 1e-10);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("rigid invariance: translations differ by exactly the offset") {
  const HandModel m = synthetic_hand();
  auto rng = make_rng(11);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  VecX theta(m.num_pose_coeffs());
  for (int k = 0; k < theta.size(); ++k) theta[k] = u(rng);
  const Vec3 t1(0.02, -0.01, 0.05), t2(-0.3, 0.2, 0.9);
  const Mesh a = skin(m, theta, VecX::Zero(m.num_shape_coeffs()), t1);
  const Mesh b = skin(m, theta, VecX::Zero(m.num_shape_coeffs()), t2);
  const MatX3 diff = b.vertices - a.vertices;
  for (int i = 0; i < diff.rows(); ++i)
    CHECK((Vec3(diff.row(i)) - (t2 - t1)).norm() < 1e-12);
}

TEST_CASE("LBS convexity: posed vertices inside the hull of per-joint rigid copies") {
  const HandModel m = synthetic_hand();
  auto rng = make_rng(12);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  VecX theta(m.num_pose_coeffs());
  for (int k = 0; k < theta.size(); ++k) theta[k] = u(rng);
  HandState s = HandState::rest(m);
  s.theta = theta;
  const Mesh mesh = skin(m, s);
  std::vector<Mat3> R;
  std::vector<Vec3> T;
  forward_kinematics(m, theta, s.beta, &R, &T);
  for (int i = 0; i < m.num_vertices(); i += 17) {
    const Vec3 v = m.template_vertices.row(i);
    // the posed vertex is the weight-convex combination of rigid copies;
    // check it lies within their bounding box (a hull superset is enough
    // only if inside; use the exact combination instead)
    Vec3 combo = Vec3::Zero();
    for (int j = 0; j < m.num_joints(); ++j)
      if (m.weights(i, j) > 0) combo += m.weights(i, j) * (R[j] * v + T[j]);
    CHECK((Vec3(mesh.vertices.row(i)) - combo).norm() < 1e-12);
  }
}

TEST_CASE("displace: zero offsets keep the mesh, radial offsets grow a sphere") {
  // icosphere-ish test via the synthetic hand for zero case
  const HandModel m = synthetic_hand();
  const Mesh mesh = skin(m, HandState::rest(m));
  const Mesh same = displace(mesh, VecX::Zero(m.num_vertices()));
  CHECK((same.vertices - mesh.vertices).cwiseAbs().maxCoeff() == 0.0);

  // a unit octahedron subdivided: use an analytic sphere instead
  const int n = 64;
  MatX3 verts(n * n, 3);
  std::vector<int> idx;
  MatX3i faces((n - 1) * (n - 1) * 2, 3);
  int fi = 0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const double th = M_PI * (a + 0.5) / n, ph = 2 * M_PI * b / n;
      verts.row(a * n + b) =
          Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th))
              .transpose();
    }
  }
  for (int a = 0; a + 1 < n; ++a) {
    for (int b = 0; b + 1 < n; ++b) {
      faces.row(fi++) << a * n + b, (a + 1) * n + b, a * n + b + 1;
      faces.row(fi++) << a * n + b + 1, (a + 1) * n + b, (a + 1) * n + b + 1;
    }
  }
  faces.conservativeResize(fi, 3);
  Mesh sphere;
  sphere.topology = MeshTopology::build(faces, MatX2::Zero(3 * fi, 2));
  sphere.vertices = verts;
  sphere.recompute_normals();
  const Mesh grown = displace(sphere, VecX::Constant(n * n, 0.01));
  for (int a = 2; a < n - 2; ++a) {
    for (int b = 2; b < n - 2; ++b) {
      // area-weighted normals of an interior grid sample are radial to within
      // discretization error; the radius grows accordingly
      const int i = a * n + b;
      CHECK(Vec3(grown.vertices.row(i)).norm() == doctest::Approx(1.01).epsilon(2e-4));
    }
  }

  // single nonzero entry moves exactly one vertex
  VecX d = VecX::Zero(n * n);
  d[3 * n + 7] = 0.005;
  const Mesh one = displace(sphere, d);
  int moved = 0;
  for (int i = 0; i < one.vertices.rows(); ++i)
    if ((one.vertices.row(i) - sphere.vertices.row(i)).norm() > 0) ++moved;
  CHECK(moved == 1);
  CHECK((one.vertices.row(3 * n + 7) - sphere.vertices.row(3 * n + 7)).norm() ==
        doctest::Approx(0.005).epsilon(1e-9));
}

TEST_CASE("displace additivity along fixed reference normals") {
  const HandModel m = synthetic_hand();
  const Mesh mesh = skin(m, HandState::rest(m));
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(-0.002, 0.002);
  VecX a(m.num_vertices()), b(m.num_vertices());
  for (int i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  // both displacements measured along mesh's normals
  Mesh da = displace(mesh, a);
  MatX3 expected = mesh.vertices;
  for (int i = 0; i < expected.rows(); ++i)
    expected.row(i) += (a[i] + b[i]) * mesh.normals.row(i);
  // apply b along the ORIGINAL normals: displace(mesh, a+b)
  const Mesh dab = displace(mesh, VecX(a + b));
  CHECK((dab.vertices - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("regress_joints matches a dense matmul oracle") {
  const HandModel m = two_bone_model();
  Mesh mesh = skin(m, VecX::Zero(2), VecX::Zero(1), Vec3(0.01, 0.02, 0.03));
  // identity rows select single vertices
  const MatX3 j = regress_joints(m, mesh);
  CHECK((Vec3(j.row(0)) - Vec3(mesh.vertices.row(0))).norm() < 1e-15);
  CHECK((Vec3(j.row(1)) - Vec3(mesh.vertices.row(2))).norm() < 1e-15);

  // random sparse regressor vs dense oracle on a 10-vertex mesh
  auto rng = make_rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  MatX reg = MatX::Zero(4, 10);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 10; ++c)
      if (u(rng) < 0.3) reg(r, c) = u(rng);
  MatX3 verts(10, 3);
  for (int i = 0; i < 10; ++i) verts.row(i) = Vec3(u(rng), u(rng), u(rng)).transpose();
  MatX3 expect = MatX3::Zero(4, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 10; ++c)
      for (int ax = 0; ax < 3; ++ax) expect(r, ax) += reg(r, c) * verts(c, ax);
  const MatX3 got = reg * verts;
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-14);

  // uniform average row -> centroid
  MatX reg2 = MatX::Constant(1, 10, 0.1);
  const MatX3 cent = reg2 * verts;
  CHECK((Vec3(cent.row(0)) - Vec3(verts.colwise().mean())).norm() < 1e-14);
}

TEST_CASE("regress_joints is linear in the vertices") {
  const HandModel m = synthetic_hand();
  Mesh a = skin(m, HandState::rest(m));
  Mesh b = a;
  auto rng = make_rng(21);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  for (int i = 0; i < b.vertices.rows(); ++i)
    b.vertices.row(i) += Eigen::RowVector3d(u(rng), u(rng), u(rng));
  Mesh sum = a;
  sum.vertices = a.vertices + b.vertices;
  const MatX3 ja = regress_joints(m, a), jb = regress_joints(m, b), js = regress_joints(m, sum);
  CHECK((js - ja - jb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("skin jacobian agrees with finite differences") {
  const HandModel m = synthetic_hand();
  HandState s = HandState::rest(m);
  auto rng = make_rng(31);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int k = 0; k < s.theta.size(); ++k) s.theta[k] = u(rng);
  for (int k = 0; k < s.beta.size(); ++k) s.beta[k] = 0.3 * u(rng);
  SkinJacobian jac;
  skin_with_jacobian(m, s, &jac);
  const double h = 1e-6;
  for (int k = 0; k < s.theta.size(); ++k) {
    HandState sp = s, sm = s;
    sp.theta[k] += h;
    sm.theta[k] -= h;
    const MatX3 fd = (skin(m, sp).vertices - skin(m, sm).vertices) / (2 * h);
    CHECK((fd - jac.d_theta[k]).cwiseAbs().maxCoeff() < 1e-6);
  }
  for (int k = 0; k < s.beta.size(); ++k) {
    HandState sp = s, sm = s;
    sp.beta[k] += h;
    sm.beta[k] -= h;
    const MatX3 fd = (skin(m, sp).vertices - skin(m, sm).vertices) / (2 * h);
    CHECK((fd - jac.d_beta[k]).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("synthetic hand is a closed manifold with convex weights") {
  const HandModel m = synthetic_hand();
  CHECK(m.num_joints() == 16);
  CHECK(m.num_landmarks() == 21);
  CHECK(m.num_vertices() > 600);
  CHECK(m.num_pose_coeffs() == 10);
  // every edge borders exactly two faces
  std::map<std::pair<int, int>, int> edge_count;
  const MatX3i& F = m.topology->faces;
  for (int f = 0; f < F.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = F(f, k), b = F(f, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      edge_count[{a, b}]++;
    }
  }
  for (const auto& [e, c] : edge_count) CHECK(c == 2);
  // positive enclosed volume (outward orientation)
  double vol = 0;
  for (int f = 0; f < F.rows(); ++f) {
    const Vec3 a = m.template_vertices.row(F(f, 0));
    const Vec3 b = m.template_vertices.row(F(f, 1));
    const Vec3 c = m.template_vertices.row(F(f, 2));
    vol += a.dot(b.cross(c)) / 6.0;
  }
  CHECK(vol > 1e-5);
  // all face corners carry UVs inside the unit square
  CHECK(m.topology->uv.minCoeff() >= 0.0);
  CHECK(m.topology->uv.maxCoeff() <= 1.0);
}

TEST_CASE("model JSON round-trip") {
  const HandModel m = synthetic_hand();
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "hp_model.json").string();
  save_hand_model(m, path);
  const HandModel back = load_hand_model(path);
  CHECK((back.template_vertices - m.template_vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.topology->faces == m.topology->faces);
  CHECK((back.weights - m.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.pose_basis - m.pose_basis).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.joint_regressor - m.joint_regressor).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("dimension mismatches raise parameter errors") {
  const HandModel m = synthetic_hand();
  CHECK_THROWS_AS(skin(m, VecX::Zero(3), VecX::Zero(m.num_shape_coeffs()), Vec3::Zero()),
                  std::invalid_argument);
  const Mesh mesh = skin(m, HandState::rest(m));
  CHECK_THROWS_AS(displace(mesh, VecX::Zero(5)), std::invalid_argument);
}

TEST_CASE("mirrored model mirrors geometry through x") {
  const HandModel m = synthetic_hand();
  const HandModel l = m.mirrored_x(false);
  HandState s = HandState::rest(m);
  auto rng = make_rng(77);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int k = 0; k < s.theta.size(); ++k) s.theta[k] = u(rng);
  const Mesh right = skin(m, s);
  const Mesh left = skin(l, s);
  // same coefficients produce the mirror image
  for (int i = 0; i < right.num_vertices(); i += 29) {
    CHECK(left.vertices(i, 0) == doctest::Approx(-right.vertices(i, 0)).epsilon(1e-9));
    CHECK(left.vertices(i, 1) == doctest::Approx(right.vertices(i, 1)).epsilon(1e-9));
    CHECK(left.vertices(i, 2) == doctest::Approx(right.vertices(i, 2)).epsilon(1e-9));
  }
}
