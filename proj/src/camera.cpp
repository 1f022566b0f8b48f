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
#include "handpress/camera.hpp"

#include <fstream>

#include <Eigen/SVD>
#include <json.hpp>

namespace handpress {

void CameraModel::validate() const {
  const Mat3 rrt = rotation * rotation.transpose();
  if ((rrt - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw DataError("CameraModel: rotation not orthonormal");
  if (rotation.determinant() < 0)
    throw DataError("CameraModel: rotation determinant must be +1");
  if (kind == CameraKind::kPerspective && (fx <= 0 || fy <= 0))
    throw DataError("CameraModel: fx, fy must be positive");
  if (kind == CameraKind::kOrthographic && pixels_per_meter <= 0)
    throw DataError("CameraModel: pixels_per_meter must be positive");
}

CameraModel CameraModel::window(int x0, int y0, int w, int h) const {
  CameraModel c = *this;
  c.cx -= x0;
  c.cy -= y0;
  c.width = w;
  c.height = h;
  return c;
}

Projection project(const CameraModel& camera, const Vec3& point) {
  const Vec3 pc = camera.rotation * point + camera.translation;
  Projection p;
  p.depth = pc.z();
  if (camera.kind == CameraKind::kPerspective) {
    if (pc.z() <= 0) {
      p.behind = true;
      p.pixel = Vec2(0, 0);
      return p;
    }
    p.pixel = Vec2(camera.fx * pc.x() / pc.z() + camera.cx,
                   camera.fy * pc.y() / pc.z() + camera.cy);
  } else {
    p.pixel = Vec2(camera.pixels_per_meter * pc.x() + camera.cx,
                   camera.pixels_per_meter * pc.y() + camera.cy);
  }
  return p;
}

std::vector<Projection> project(const CameraModel& camera, const MatX3& points) {
  std::vector<Projection> out(points.rows());
  for (int i = 0; i < points.rows(); ++i) out[i] = project(camera, Vec3(points.row(i)));
  return out;
}

Mat3 projection_jacobian(const CameraModel& camera, const Vec3& point) {
  const Vec3 pc = camera.rotation * point + camera.translation;
  Mat3 j;
  if (camera.kind == CameraKind::kPerspective) {
    const double z = pc.z(), iz = 1.0 / z;
    j.row(0) = camera.fx * iz * camera.rotation.row(0) -
               camera.fx * pc.x() * iz * iz * camera.rotation.row(2);
    j.row(1) = camera.fy * iz * camera.rotation.row(1) -
               camera.fy * pc.y() * iz * iz * camera.rotation.row(2);
  } else {
    j.row(0) = camera.pixels_per_meter * camera.rotation.row(0);
    j.row(1) = camera.pixels_per_meter * camera.rotation.row(1);
  }
  j.row(2) = camera.rotation.row(2);
  return j;
}

TriangulationResult triangulate(const std::vector<CameraModel>& cameras,
                                const std::vector<Vec2>& observations) {
  if (cameras.size() != observations.size())
    throw std::invalid_argument("triangulate: camera/observation count mismatch");
  const int n = static_cast<int>(cameras.size());
  if (n < 2) throw std::invalid_argument("triangulate: needs at least two views");

  // DLT: rows from x * (P3 X) - (P1 X) = 0 etc., P = K [R | t].
  MatX A(2 * n, 4);
  for (int i = 0; i < n; ++i) {
    const CameraModel& c = cameras[i];
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = c.rotation;
    P.col(3) = c.translation;
    Mat3 K = Mat3::Identity();
    K(0, 0) = c.fx;
    K(1, 1) = c.fy;
    K(0, 2) = c.cx;
    K(1, 2) = c.cy;
    P = K * P;
    A.row(2 * i) = observations[i].x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = observations[i].y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeThinV);
  Vec4 X = svd.matrixV().col(3);
  TriangulationResult res;
  const auto& sv = svd.singularValues();
  res.ill_conditioned = sv[2] < 1e-9 * sv[0] || std::abs(X[3]) < 1e-14;
  Vec3 x = X.head<3>() / X[3];

  // Gauss-Newton on pixel reprojection.
  for (int it = 0; it < 20; ++it) {
    Mat3 H = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
      const Projection pr = project(cameras[i], x);
      if (pr.behind) continue;
      const Mat3 jz = projection_jacobian(cameras[i], x);
      const Eigen::Matrix<double, 2, 3> J = jz.topRows<2>();
      const Vec2 r = pr.pixel - observations[i];
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    const Vec3 step = H.ldlt().solve(g);
    x -= step;
    if (step.norm() < 1e-14) break;
  }
  double sq = 0;
  for (int i = 0; i < n; ++i) {
    const Projection pr = project(cameras[i], x);
    sq += (pr.pixel - observations[i]).squaredNorm();
  }
  res.point = x;
  res.rms_px = std::sqrt(sq / n);
  return res;
}

namespace {

Mat3 skew3(const Vec3& v) {
  Mat3 K;
  K << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return K;
}

// Pose from a plane-to-image homography: H ~ K [r1 r2 t].
bool pose_from_homography(const Mat3& H, const Mat3& K, Mat3* R, Vec3* t) {
  const Mat3 A = K.inverse() * H;
  const double s = std::sqrt(A.col(0).norm() * A.col(1).norm());
  if (s < 1e-14) return false;
  Vec3 r1 = A.col(0) / s, r2 = A.col(1) / s, tt = A.col(2) / s;
  if (tt.z() < 0) {
    r1 = -r1;
    r2 = -r2;
    tt = -tt;
  }
  Mat3 Q;
  Q.col(0) = r1;
  Q.col(1) = r2;
  Q.col(2) = r1.cross(r2);
  Eigen::JacobiSVD<Mat3> svd(Q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  *R = svd.matrixU() * svd.matrixV().transpose();
  if (R->determinant() < 0) {
    Mat3 D = Mat3::Identity();
    D(2, 2) = -1;
    *R = svd.matrixU() * D * svd.matrixV().transpose();
  }
  *t = tt;
  return true;
}

}  // namespace

PnpResult solve_pnp(const MatX3& object_points, const MatX2& image_points,
                    const CameraModel& intrinsics) {
  const int n = static_cast<int>(object_points.rows());
  if (n < 4 || image_points.rows() != n)
    throw std::invalid_argument("solve_pnp: needs >= 4 correspondences");

  // Degeneracy: collinear object points.
  const Vec3 mean = object_points.colwise().mean();
  MatX3 centered = object_points.rowwise() - mean.transpose();
  Eigen::JacobiSVD<MatX> psvd(centered, Eigen::ComputeThinV);
  const auto& psv = psvd.singularValues();
  if (psv[1] < 1e-9 * std::max(psv[0], 1e-12))
    throw std::invalid_argument("solve_pnp: degenerate (collinear) object points");
  const bool coplanar = psv[2] < 1e-7 * psv[0];

  Mat3 K = Mat3::Identity();
  K(0, 0) = intrinsics.fx;
  K(1, 1) = intrinsics.fy;
  K(0, 2) = intrinsics.cx;
  K(1, 2) = intrinsics.cy;

  Mat3 R = Mat3::Identity();
  Vec3 t(0, 0, 1);
  bool initialized = false;

  if (coplanar) {
    // Plane frame: columns of V span the plane.
    const Mat3 axes = psvd.matrixV();
    MatX2 plane(n, 2);
    for (int i = 0; i < n; ++i) {
      plane(i, 0) = centered.row(i).dot(axes.col(0));
      plane(i, 1) = centered.row(i).dot(axes.col(1));
    }
    // DLT homography plane -> pixels.
    MatX A = MatX::Zero(2 * n, 9);
    for (int i = 0; i < n; ++i) {
      const double X = plane(i, 0), Y = plane(i, 1);
      const double u = image_points(i, 0), v = image_points(i, 1);
      A.row(2 * i) << X, Y, 1, 0, 0, 0, -u * X, -u * Y, -u;
      A.row(2 * i + 1) << 0, 0, 0, X, Y, 1, -v * X, -v * Y, -v;
    }
    Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
    const VecX h = svd.matrixV().col(8);
    Mat3 H;
    H << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
    Mat3 Rp;
    Vec3 tp;
    if (pose_from_homography(H, K, &Rp, &tp)) {
      // compose with the plane frame: X_cam = Rp * [plane coords; 0] + tp
      Mat3 B;
      B.col(0) = axes.col(0);
      B.col(1) = axes.col(1);
      B.col(2) = axes.col(0).cross(axes.col(1));
      R = Rp * B.transpose();
      t = tp - R * mean;
      initialized = true;
    }
  }
  if (!initialized) {
    // DLT for a full projection matrix.
    MatX A = MatX::Zero(2 * n, 12);
    for (int i = 0; i < n; ++i) {
      const Vec3 X = object_points.row(i);
      const double u = image_points(i, 0), v = image_points(i, 1);
      A.block<1, 4>(2 * i, 0) << X.x(), X.y(), X.z(), 1;
      A.block<1, 4>(2 * i, 8) << -u * X.x(), -u * X.y(), -u * X.z(), -u;
      A.block<1, 4>(2 * i + 1, 4) << X.x(), X.y(), X.z(), 1;
      A.block<1, 4>(2 * i + 1, 8) << -v * X.x(), -v * X.y(), -v * X.z(), -v;
    }
    Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
    const VecX p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> P;
    P << p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11];
    Mat3 M = K.inverse() * P.leftCols<3>();
    double scale = std::cbrt(std::abs(M.determinant()));
    if (scale < 1e-14) throw std::invalid_argument("solve_pnp: degenerate configuration");
    if (M.determinant() < 0) scale = -scale;
    M /= scale;
    Eigen::JacobiSVD<Mat3> rsvd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    R = rsvd.matrixU() * rsvd.matrixV().transpose();
    t = K.inverse() * P.col(3) / scale;
  }

  // Gauss-Newton on se(3): left-multiplied increment [w, dt].
  CameraModel cam = intrinsics;
  cam.kind = CameraKind::kPerspective;
  PnpResult res;
  double prev_cost = std::numeric_limits<double>::infinity();
  const int max_iters = 100;
  int it = 0;
  for (; it < max_iters; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    double cost = 0;
    for (int i = 0; i < n; ++i) {
      const Vec3 pc = R * Vec3(object_points.row(i)) + t;
      if (pc.z() <= 1e-9) continue;
      const double iz = 1.0 / pc.z();
      const Vec2 pix(intrinsics.fx * pc.x() * iz + intrinsics.cx,
                     intrinsics.fy * pc.y() * iz + intrinsics.cy);
      const Vec2 r = pix - Vec2(image_points.row(i));
      cost += r.squaredNorm();
      Eigen::Matrix<double, 2, 3> Jp;
      Jp << intrinsics.fx * iz, 0, -intrinsics.fx * pc.x() * iz * iz, 0,
          intrinsics.fy * iz, -intrinsics.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> Jx;
      Jx.leftCols<3>() = -skew3(pc);
      Jx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> J = Jp * Jx;
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    const Eigen::Matrix<double, 6, 1> step = H.ldlt().solve(g);
    const Vec3 w = -step.head<3>(), dt = -step.tail<3>();
    const double ang = w.norm();
    const Mat3 dR = ang < 1e-15
                        ? Mat3::Identity()
                        : Eigen::AngleAxisd(ang, w / ang).toRotationMatrix();
    R = dR * R;
    t = dR * t + dt;
    if (step.norm() < 1e-14) break;
    prev_cost = cost;
  }
  (void)prev_cost;

  double err = 0;
  int valid = 0;
  for (int i = 0; i < n; ++i) {
    const Vec3 pc = R * Vec3(object_points.row(i)) + t;
    if (pc.z() <= 0) continue;
    const Vec2 pix(intrinsics.fx * pc.x() / pc.z() + intrinsics.cx,
                   intrinsics.fy * pc.y() / pc.z() + intrinsics.cy);
    err += (pix - Vec2(image_points.row(i))).norm();
    ++valid;
  }
  if (valid < n)
    throw NumericalError("solve_pnp: points behind camera after refinement");
  res.rotation = R;
  res.translation = t;
  res.mean_reprojection_px = err / n;
  res.iterations = it;
  if (it >= max_iters && res.mean_reprojection_px > 1e3)
    throw NumericalError("solve_pnp: no convergence, residual " +
                         std::to_string(res.mean_reprojection_px) + " px");
  return res;
}

void PoseTimeline::validate() const {
  if (poses.size() != timestamps.size() || poses.size() != reprojection_px.size())
    throw DataError("PoseTimeline: field lengths differ");
  for (size_t i = 1; i < timestamps.size(); ++i)
    if (timestamps[i] <= timestamps[i - 1])
      throw DataError("PoseTimeline: timestamps must be strictly increasing");
  for (const auto& p : poses)
    if (p && std::abs(p->rotation.norm() - 1.0) > 1e-9)
      throw DataError("PoseTimeline: non-unit quaternion");
}

Quat slerp(const Quat& a0, const Quat& b0, double t) {
  const Quat a = canonical(a0);
  Quat b = canonical(b0);
  double d = a.dot(b);
  if (d < 0) {  // shortest arc
    b.coeffs() = -b.coeffs();
    d = -d;
  }
  if (d > 1.0 - 1e-12) {
    Quat r;
    r.coeffs() = (1 - t) * a.coeffs() + t * b.coeffs();
    r.normalize();
    return r;
  }
  const double th = std::acos(std::min(1.0, d));
  const double s = std::sin(th);
  Quat r;
  r.coeffs() = (std::sin((1 - t) * th) / s) * a.coeffs() + (std::sin(t * th) / s) * b.coeffs();
  r.normalize();
  return r;
}

PoseTimeline slerp_fill(const PoseTimeline& timeline) {
  timeline.validate();
  const int n = static_cast<int>(timeline.poses.size());
  if (n == 0) return timeline;
  if (!timeline.poses.front() || !timeline.poses.back())
    throw DataError("slerp_fill: gap at sequence boundary");
  PoseTimeline out = timeline;
  out.interpolated.assign(n, false);
  int prev = 0;
  for (int i = 1; i < n; ++i) {
    if (!out.poses[i]) continue;
    if (i > prev + 1) {
      const TimelinePose& a = *out.poses[prev];
      const TimelinePose& b = *out.poses[i];
      for (int k = prev + 1; k < i; ++k) {
        const double t = (out.timestamps[k] - out.timestamps[prev]) /
                         (out.timestamps[i] - out.timestamps[prev]);
        TimelinePose p;
        p.rotation = slerp(a.rotation, b.rotation, t);
        p.translation = (1 - t) * a.translation + t * b.translation;
        out.poses[k] = p;
        out.interpolated[k] = true;
      }
    }
    prev = i;
  }
  return out;
}

using nlohmann::json;

std::vector<CameraModel> load_cameras(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_cameras: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_cameras: parse error in " + path + ": " + e.what());
  }
  std::vector<CameraModel> cams;
  for (const auto& c : j.at("cameras")) {
    CameraModel cam;
    cam.id = c.value("id", "");
    cam.fx = c.at("fx");
    cam.fy = c.at("fy");
    cam.cx = c.at("cx");
    cam.cy = c.at("cy");
    cam.width = c.at("width");
    cam.height = c.at("height");
    const auto& R = c.at("R");
    const auto& t = c.at("t");
    if (R.size() != 9 || t.size() != 3)
      throw DataError("load_cameras: R must have 9 entries and t 3, camera " + cam.id);
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) cam.rotation(r, cc) = R[3 * r + cc];
    for (int a = 0; a < 3; ++a) cam.translation[a] = t[a];
    if (c.contains("distortion")) {
      for (const auto& d : c.at("distortion"))
        if (std::abs(d.get<double>()) > 0)
          throw DataError("load_cameras: distortion model not supported");
    }
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

void save_cameras(const std::vector<CameraModel>& cameras, const std::string& path) {
  json arr = json::array();
  for (const auto& c : cameras) {
    json jc;
    jc["id"] = c.id;
    jc["fx"] = c.fx;
    jc["fy"] = c.fy;
    jc["cx"] = c.cx;
    jc["cy"] = c.cy;
    jc["width"] = c.width;
    jc["height"] = c.height;
    std::vector<double> R(9), t(3);
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) R[3 * r + cc] = c.rotation(r, cc);
    for (int a = 0; a < 3; ++a) t[a] = c.translation[a];
    jc["R"] = R;
    jc["t"] = t;
    arr.push_back(jc);
  }
  json j;
  j["cameras"] = arr;
  std::ofstream os(path);
  if (!os) throw DataError("save_cameras: cannot open " + path);
  os << j.dump(2);
}

}  // namespace handpress
