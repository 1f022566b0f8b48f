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

#include <fstream>

#include <filesystem>

#include "handpress/camera.hpp"
#include "handpress/marker.hpp"

using namespace handpress;

namespace {

CameraModel simple_camera(double fx = 100, double cx = 50) {
  CameraModel c;
  c.fx = c.fy = fx;
  c.cx = c.cy = cx;
  c.width = c.height = static_cast<int>(2 * cx);
  return c;
}

CameraModel ring_camera(double azimuth, double elevation, double dist, double fx, int size) {
  const Vec3 target(0, 0, 0);
  const Vec3 pos = dist * Vec3(std::cos(elevation) * std::cos(azimuth),
                               std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
  CameraModel cam;
  cam.fx = cam.fy = fx;
  cam.cx = cam.cy = size / 2.0;
  cam.width = cam.height = size;
  Vec3 f = (target - pos).normalized();
  Vec3 r = f.cross(Vec3::UnitZ());
  if (r.norm() < 1e-12) r = Vec3::UnitX();
  r.normalize();
  cam.rotation.row(0) = r.transpose();
  cam.rotation.row(1) = f.cross(r).transpose();
  cam.rotation.row(2) = f.transpose();
  cam.translation = -cam.rotation * pos;
  return cam;
}

}  // namespace

TEST_CASE("pinhole projection on and off the optical axis") {
  const CameraModel c = simple_camera();
  const Projection p0 = project(c, Vec3(0, 0, 1));
  CHECK(p0.pixel.x() == doctest::Approx(50.0));
  CHECK(p0.pixel.y() == doctest::Approx(50.0));
  CHECK(p0.depth == doctest::Approx(1.0));
  CHECK_FALSE(p0.behind);

  // hand evaluation: u = 100 * 0.1 / 1 + 50 = 60
  const Projection p1 = project(c, Vec3(0.1, 0, 1));
  CHECK(p1.pixel.x() == doctest::Approx(60.0));
  CHECK(p1.pixel.y() == doctest::Approx(50.0));

  const Projection pb = project(c, Vec3(0, 0, -0.5));
  CHECK(pb.behind);
}

TEST_CASE("orthographic projection is the linear map oracle") {
  CameraModel c;
  c.kind = CameraKind::kOrthographic;
  c.pixels_per_meter = 1000;
  c.cx = 7;
  c.cy = 3;
  c.width = c.height = 512;
  const Projection p = project(c, Vec3(0.01, 0.02, 0.3));
  CHECK(p.pixel.x() == doctest::Approx(0.01 * 1000 + 7));
  CHECK(p.pixel.y() == doctest::Approx(0.02 * 1000 + 3));
  CHECK(p.depth == doctest::Approx(0.3));
}

TEST_CASE("projection jacobian matches finite differences") {
  const CameraModel c = ring_camera(0.3, 0.7, 1.2, 300, 256);
  const Vec3 x(0.05, -0.07, 0.1);
  const Mat3 J = projection_jacobian(c, x);
  const double h = 1e-7;
  for (int a = 0; a < 3; ++a) {
    Vec3 xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    const Projection pp = project(c, xp), pm = project(c, xm);
    CHECK(J(0, a) == doctest::Approx((pp.pixel.x() - pm.pixel.x()) / (2 * h)).epsilon(1e-5));
    CHECK(J(1, a) == doctest::Approx((pp.pixel.y() - pm.pixel.y()) / (2 * h)).epsilon(1e-5));
    CHECK(J(2, a) == doctest::Approx((pp.depth - pm.depth) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("triangulation recovers a noiseless point and reports ill conditioning") {
  std::vector<CameraModel> cams = {ring_camera(0, 0.5, 1.0, 300, 256),
                                   ring_camera(M_PI / 2, 0.5, 1.0, 300, 256)};
  const Vec3 x(0.1, 0.2, 0.5);
  std::vector<Vec2> obs;
  for (const auto& c : cams) obs.push_back(project(c, x).pixel);
  const TriangulationResult r = triangulate(cams, obs);
  CHECK((r.point - x).norm() < 1e-9);
  CHECK(r.rms_px < 1e-7);

  CHECK_THROWS_AS(triangulate({cams[0]}, {obs[0]}), std::invalid_argument);
}

TEST_CASE("triangulation under pixel noise stays within 2 mm on the 7-camera ring") {
  // rig-scale cameras (~1 m away, HD-class focal length)
  std::vector<CameraModel> cams;
  for (int i = 0; i < 7; ++i)
    cams.push_back(ring_camera(2 * M_PI * i / 7, 0.6, 0.9, 900, 768));
  const Vec3 x(0.03, -0.02, 0.05);
  auto rng = make_rng(123);
  std::normal_distribution<double> noise(0.0, 0.5);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec2> obs;
    for (const auto& c : cams) {
      Vec2 p = project(c, x).pixel;
      p += Vec2(noise(rng), noise(rng));
      obs.push_back(p);
    }
    const TriangulationResult r = triangulate(cams, obs);
    worst = std::max(worst, (r.point - x).norm());
  }
  CHECK(worst < 0.002);
}

TEST_CASE("project-triangulate round trip reprojects below 1e-7 px") {
  std::vector<CameraModel> cams;
  for (int i = 0; i < 5; ++i)
    cams.push_back(ring_camera(2 * M_PI * i / 5 + 0.2, 0.4 + 0.1 * i, 1.1, 280, 256));
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 x(u(rng), u(rng), u(rng) * 0.5);
    std::vector<Vec2> obs;
    for (const auto& c : cams) obs.push_back(project(c, x).pixel);
    const TriangulationResult r = triangulate(cams, obs);
    CHECK(r.rms_px < 1e-7);
  }
}

TEST_CASE("planar PnP recovers a synthetic pose viewing the marker board") {
  const MarkerLayout layout = canonical_marker_layout();
  const MatX3 object = layout.points_in_order();
  const CameraModel cam = ring_camera(0.8, 0.9, 1.5, 600, 640);
  MatX2 image(9, 2);
  for (int i = 0; i < 9; ++i)
    image.row(i) = project(cam, Vec3(object.row(i))).pixel.transpose();
  CameraModel intr = cam;
  intr.rotation = Mat3::Identity();
  intr.translation = Vec3::Zero();
  const PnpResult r = solve_pnp(object, image, intr);
  CHECK(r.mean_reprojection_px < 1e-6);
  const Mat3 dR = r.rotation * cam.rotation.transpose();
  const double angle = std::acos(std::clamp((dR.trace() - 1) / 2, -1.0, 1.0));
  CHECK(angle * 180 / M_PI < 0.01);
  CHECK((r.translation - cam.translation).norm() < 1e-6);
}

TEST_CASE("PnP identity and degenerate cases") {
  // object points already in camera frame, in front of the camera
  MatX3 object(6, 3);
  object << 0, 0, 1, 0.2, 0, 1.1, 0, 0.15, 0.9, -0.1, -0.1, 1.2, 0.1, 0.1, 1.0,
      -0.15, 0.1, 1.05;
  CameraModel intr = simple_camera(400, 320);
  MatX2 image(6, 2);
  for (int i = 0; i < 6; ++i)
    image.row(i) = project(intr, Vec3(object.row(i))).pixel.transpose();
  const PnpResult r = solve_pnp(object, image, intr);
  CHECK((r.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(r.translation.norm() < 1e-7);

  MatX3 collinear(4, 3);
  collinear << 0, 0, 0, 0.1, 0, 0, 0.2, 0, 0, 0.3, 0, 0;
  MatX2 img4 = MatX2::Zero(4, 2);
  CHECK_THROWS_AS(solve_pnp(collinear, img4, intr), std::invalid_argument);
  CHECK_THROWS_AS(solve_pnp(object.topRows(3), image.topRows(3), intr),
                  std::invalid_argument);
}

TEST_CASE("PnP equivariance under rigid transforms of the object points") {
  const MarkerLayout layout = canonical_marker_layout();
  const MatX3 object = layout.points_in_order();
  const CameraModel cam = ring_camera(-0.4, 1.0, 1.2, 500, 640);
  MatX2 image(9, 2);
  for (int i = 0; i < 9; ++i)
    image.row(i) = project(cam, Vec3(object.row(i))).pixel.transpose();
  CameraModel intr = cam;
  intr.rotation = Mat3::Identity();
  intr.translation = Vec3::Zero();

  auto rng = make_rng(17);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
    const double ang = 0.7 * u(rng);
    const Mat3 T_R = Eigen::AngleAxisd(ang, axis).toRotationMatrix();
    const Vec3 T_t(0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng));
    MatX3 moved(9, 3);
    for (int i = 0; i < 9; ++i)
      moved.row(i) = (T_R * Vec3(object.row(i)) + T_t).transpose();
    const PnpResult r = solve_pnp(moved, image, intr);
    // camera pose composed with T^-1: projecting moved points must match
    const Mat3 expect_R = cam.rotation * T_R.transpose();
    const Vec3 expect_t = cam.translation - expect_R * T_t;
    CHECK((r.rotation - expect_R).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.translation - expect_t).norm() < 1e-6);
  }
}

TEST_CASE("slerp fills a one-frame gap with the midpoint rotation") {
  PoseTimeline tl;
  tl.timestamps = {0.0, 1.0, 2.0};
  tl.reprojection_px = {0, 0, 0};
  TimelinePose a, b;
  a.rotation = Quat::Identity();
  b.rotation = Quat(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()));
  a.translation = Vec3(0, 0, 0);
  b.translation = Vec3(1, 0, 0);
  tl.poses = {a, std::nullopt, b};
  const PoseTimeline filled = slerp_fill(tl);
  REQUIRE(filled.poses[1].has_value());
  CHECK(filled.interpolated[1]);
  const Quat expect(Eigen::AngleAxisd(M_PI / 4, Vec3::UnitZ()));
  CHECK(std::abs(filled.poses[1]->rotation.angularDistance(expect)) < 1e-12);
  CHECK((filled.poses[1]->translation - Vec3(0.5, 0, 0)).norm() < 1e-12);
}

TEST_CASE("slerp_fill leaves complete timelines unchanged and rejects boundary gaps") {
  PoseTimeline tl;
  tl.timestamps = {0.0, 0.5};
  tl.reprojection_px = {0, 0};
  TimelinePose p;
  tl.poses = {p, p};
  const PoseTimeline same = slerp_fill(tl);
  CHECK_FALSE(same.interpolated[0]);
  CHECK_FALSE(same.interpolated[1]);

  tl.poses = {std::nullopt, p};
  CHECK_THROWS_AS(slerp_fill(tl), DataError);
}

TEST_CASE("slerp outputs unit quaternions equidistant at the midpoint") {
  auto rng = make_rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Quat a(u(rng), u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng), u(rng));
    a.normalize();
    b.normalize();
    const Quat mid = slerp(a, b, 0.5);
    CHECK(std::abs(mid.norm() - 1.0) < 1e-12);
    CHECK(std::abs(mid.angularDistance(a) - mid.angularDistance(b)) < 1e-9);
    // endpoints
    CHECK(slerp(a, b, 0.0).angularDistance(a) < 1e-12);
    CHECK(slerp(a, b, 1.0).angularDistance(b) < 1e-12);
  }
}

TEST_CASE("camera calibration file round-trip and distortion rejection") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "hp_cams.json").string();
  std::vector<CameraModel> cams = {ring_camera(0.1, 0.5, 1.0, 300, 256),
                                   ring_camera(1.1, 0.4, 1.1, 280, 256)};
  cams[0].id = "cam0";
  cams[1].id = "cam1";
  save_cameras(cams, path);
  const auto back = load_cameras(path);
  REQUIRE(back.size() == 2);
  CHECK((back[0].rotation - cams[0].rotation).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back[1].translation - cams[1].translation).norm() == 0.0);

  // nonzero distortion is rejected
  {
    std::ofstream os(path);
    os << R"({"cameras":[{"id":"c","fx":100,"fy":100,"cx":50,"cy":50,"width":100,
        "height":100,"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0],"distortion":[0.1]}]})";
  }
  CHECK_THROWS_AS(load_cameras(path), DataError);
  std::filesystem::remove(path);
}
