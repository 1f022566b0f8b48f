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

#include "handpress/pressure.hpp"
#include "handpress/rasterizer.hpp"

using namespace handpress;

namespace {

// brute-force per-cell reimplementation of the metrics
struct BruteMetrics {
  double contact_iou, vol_iou, mae;
};

BruteMetrics brute(const ImageF& est, const ImageF& gt) {
  int inter = 0, uni = 0;
  double smin = 0, smax = 0, abs_sum = 0;
  const int n = est.width() * est.height();
  for (int i = 0; i < n; ++i) {
    const double e = est.raw()[i], g = gt.raw()[i];
    const bool a = e > 500.0, b = g > 500.0;
    if (a && b) ++inter;
    if (a || b) ++uni;
    smin += e < g ? e : g;
    smax += e > g ? e : g;
    abs_sum += e > g ? e - g : g - e;
  }
  BruteMetrics r;
  r.contact_iou = uni == 0 ? 100.0 : 100.0 * inter / uni;
  r.vol_iou = smax <= 0 ? 100.0 : 100.0 * smin / smax;
  r.mae = abs_sum / n;
  return r;
}

ImageF random_grid(std::mt19937_64& rng, int w, int h, double sparsity = 0.6) {
  std::uniform_real_distribution<double> u(0, 1);
  ImageF g(w, h, 1, 0.f);
  for (auto& v : g.raw())
    if (u(rng) > sparsity) v = static_cast<float>(u(rng) * 3000.0);
  return g;
}

Mesh flat_quad(double side, double height, bool face_down) {
  MatX3 v(4, 3);
  v << -side / 2, -side / 2, height, side / 2, -side / 2, height, side / 2, side / 2,
      height, -side / 2, side / 2, height;
  MatX3i f(2, 3);
  f << 0, 1, 2, 0, 2, 3;
  MatX2 uv(6, 2);
  uv << 0.1, 0.1, 0.9, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.9;
  Mesh m;
  m.topology = MeshTopology::build(f, uv);
  m.vertices = v;
  m.recompute_normals();
  const Vec3 n = (Vec3(v.row(1)) - Vec3(v.row(0))).cross(Vec3(v.row(2)) - Vec3(v.row(0)));
  const bool down = n.z() < 0;
  if (down != face_down) {
    MatX3i ff = f;
    std::swap(ff(0, 1), ff(0, 2));
    std::swap(ff(1, 1), ff(1, 2));
    MatX2 uv2 = uv;
    uv2.row(1).swap(uv2.row(2));
    uv2.row(4).swap(uv2.row(5));
    m.topology = MeshTopology::build(ff, uv2);
    m.recompute_normals();
  }
  return m;
}

}  // namespace

TEST_CASE("contact mask thresholds strictly above 500 Pa") {
  ImageF p(4, 3, 1, 0.f);
  ImageU8 none = contact_mask(p);
  for (auto v : none.raw()) CHECK(v == 0);
  p.at(2, 1) = 600.f;
  const ImageU8 one = contact_mask(p);
  int count = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      if (one.at(x, y)) {
        ++count;
        CHECK(x == 2);
        CHECK(y == 1);
      }
  CHECK(count == 1);
  p.at(2, 1) = 500.f;  // exactly at threshold: not contact
  const ImageU8 edge = contact_mask(p);
  for (auto v : edge.raw()) CHECK(v == 0);
}

TEST_CASE("metric closed-form examples") {
  ImageF a(4, 1, 1, 0.f), b(4, 1, 1, 0.f);
  a.at(0, 0) = 1000.f;
  b.at(0, 0) = 1000.f;
  CHECK(metric_contact_iou(a, b).value == doctest::Approx(100.0));
  CHECK(metric_mae(a, b) == doctest::Approx(0.0));

  // disjoint contacts
  b.at(0, 0) = 0.f;
  b.at(1, 0) = 1000.f;
  CHECK(metric_contact_iou(a, b).value == doctest::Approx(0.0));

  // I=3, U=4 -> 75
  ImageF c(4, 1, 1, 1000.f), d(4, 1, 1, 1000.f);
  d.at(3, 0) = 0.f;
  CHECK(metric_contact_iou(c, d).value == doctest::Approx(75.0));

  // volumetric, est=[1,3] vs gt=[2,2]: sum-min 3 over sum-max 5
  ImageF e(2, 1, 1), g(2, 1, 1);
  e.at(0, 0) = 1.f;
  e.at(1, 0) = 3.f;
  g.at(0, 0) = 2.f;
  g.at(1, 0) = 2.f;
  CHECK(metric_volumetric_iou(e, g).value == doctest::Approx(60.0));
  CHECK(metric_volumetric_iou(g, g).value == doctest::Approx(100.0));
  ImageF zero(2, 1, 1, 0.f);
  CHECK(metric_volumetric_iou(zero, g).value == doctest::Approx(0.0));
  CHECK(metric_volumetric_iou(zero, zero).degenerate);

  // MAE: uniform offset and half offset
  ImageF m1(4, 1, 1, 300.f), m2(4, 1, 1, 400.f);
  CHECK(metric_mae(m1, m2) == doctest::Approx(100.0));
  m2 = m1;
  m2.at(0, 0) += 100.f;
  m2.at(1, 0) += 100.f;
  CHECK(metric_mae(m1, m2) == doctest::Approx(50.0));
}

TEST_CASE("temporal accuracy counts matching any-contact flags") {
  std::vector<ImageF> est, gt;
  for (int i = 0; i < 10; ++i) {
    est.push_back(ImageF(2, 2, 1, 0.f));
    ImageF g(2, 2, 1, 0.f);
    if (i < 3) g.at(0, 0) = 1000.f;  // contact in 3 of 10 frames
    gt.push_back(g);
  }
  CHECK(metric_temporal_accuracy(est, est) == doctest::Approx(100.0));
  CHECK(metric_temporal_accuracy(est, gt) == doctest::Approx(70.0));
  CHECK_THROWS_AS(metric_temporal_accuracy({}, {}), std::invalid_argument);
}

TEST_CASE("metrics match the brute-force oracle on random grids") {
  auto rng = make_rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const ImageF est = random_grid(rng, 23, 17);
    const ImageF gt = random_grid(rng, 23, 17);
    const BruteMetrics b = brute(est, gt);
    CHECK(metric_contact_iou(est, gt).value == doctest::Approx(b.contact_iou).epsilon(1e-13));
    CHECK(metric_volumetric_iou(est, gt).value == doctest::Approx(b.vol_iou).epsilon(1e-13));
    CHECK(metric_mae(est, gt) == doctest::Approx(b.mae).epsilon(1e-13));
    // symmetry
    CHECK(metric_contact_iou(gt, est).value == metric_contact_iou(est, gt).value);
    CHECK(metric_volumetric_iou(gt, est).value ==
          doctest::Approx(metric_volumetric_iou(est, gt).value).epsilon(1e-13));
    CHECK(metric_mae(gt, est) == doctest::Approx(metric_mae(est, gt)).epsilon(1e-13));
  }
}

TEST_CASE("volumetric IoU is invariant to common positive scaling") {
  auto rng = make_rng(5);
  const ImageF a = random_grid(rng, 9, 9), b = random_grid(rng, 9, 9);
  ImageF a2 = a, b2 = b;
  for (auto& v : a2.raw()) v *= 2.f;
  for (auto& v : b2.raw()) v *= 2.f;
  CHECK(metric_volumetric_iou(a2, b2).value ==
        doctest::Approx(metric_volumetric_iou(a, b).value).epsilon(1e-12));
}

TEST_CASE("uv metrics restrict to the atlas and match the grid oracle") {
  UVPressureMap est, gt;
  est.values = ImageF(16, 16, 1, 0.f);
  gt.values = ImageF(16, 16, 1, 0.f);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) {
      est.values.at(x, y) = 800.f;
      gt.values.at(x, y) = 800.f;
    }
  ImageU8 atlas(16, 16, 1, 1);
  auto [ci, vi] = uv_metrics(est, gt, atlas);
  CHECK(ci.value == doctest::Approx(100.0));
  CHECK(vi.value == doctest::Approx(100.0));

  // disjoint blobs
  UVPressureMap shifted;
  shifted.values = ImageF(16, 16, 1, 0.f);
  for (int y = 8; y < 12; ++y)
    for (int x = 8; x < 12; ++x) shifted.values.at(x, y) = 800.f;
  auto [cd, vd] = uv_metrics(shifted, gt, atlas);
  CHECK(cd.value == doctest::Approx(0.0));
  CHECK(vd.value == doctest::Approx(0.0));

  // known-overlap blob pair equals the grid metrics on the same arrays
  UVPressureMap part;
  part.values = ImageF(16, 16, 1, 0.f);
  for (int y = 4; y < 8; ++y)
    for (int x = 4; x < 8; ++x) part.values.at(x, y) = 700.f;
  auto [cp, vp] = uv_metrics(part, gt, atlas);
  CHECK(cp.value == doctest::Approx(metric_contact_iou(part.values, gt.values).value));
  CHECK(vp.value == doctest::Approx(metric_volumetric_iou(part.values, gt.values).value));

  // texels outside the atlas are ignored
  ImageU8 tight(16, 16, 1, 0);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) tight.at(x, y) = 1;
  auto [ct, vt] = uv_metrics(shifted, gt, tight);
  CHECK(ct.value == doctest::Approx(0.0));  // shifted blob lies outside the atlas
  CHECK(vt.value == doctest::Approx(0.0));
}

TEST_CASE("bake: zero image bakes to a zero map; camera-facing faces receive nothing") {
  PadGeometry pad;
  pad.center = Vec3::Zero();
  pad.cols = 120;
  pad.rows = 85;
  const Mesh quad = flat_quad(0.06, 0.001, true);
  const UVPressureMap zero =
      bake_pad_pressure_to_uv(quad, pad, ImageF(pad.cols, pad.rows, 1, 0.f), 64);
  for (auto v : zero.values.raw()) CHECK(v == 0.f);

  // quad facing up (away from the pad): nothing rasterizes in the under-pad
  // view, so the bake stays empty regardless of the image
  const Mesh up = flat_quad(0.06, 0.001, false);
  ImageF ones(pad.cols, pad.rows, 1, 1000.f);
  const UVPressureMap none = bake_pad_pressure_to_uv(up, pad, ones, 64);
  for (auto v : none.values.raw()) CHECK(v == 0.f);
}

TEST_CASE("bake: flat quad footprint maps uniformly into its UV island") {
  PadGeometry pad;
  pad.center = Vec3::Zero();
  const Mesh quad = flat_quad(0.08, 0.0, true);
  // pressure image: 1 kPa exactly under the quad footprint
  ImageF img(pad.cols, pad.rows, 1, 0.f);
  const double cw = pad.extent.x() / pad.cols, ch = pad.extent.y() / pad.rows;
  for (int r = 0; r < pad.rows; ++r)
    for (int c = 0; c < pad.cols; ++c) {
      const double u = (c + 0.5) * cw - pad.extent.x() / 2;
      const double v = (r + 0.5) * ch - pad.extent.y() / 2;
      if (std::abs(u) < 0.04 && std::abs(v) < 0.04) img.at(c, r) = 1000.f;
    }
  const int res = 128;
  const UVPressureMap uv = bake_pad_pressure_to_uv(quad, pad, img, res);
  // the quad's UV island spans [0.1, 0.9]^2; interior texels read ~1 kPa
  int total = 0, within = 0;
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double uu = (x + 0.5) / res, vv = (y + 0.5) / res;
      if (uu < 0.12 || uu > 0.88 || vv < 0.12 || vv > 0.88) continue;
      ++total;
      if (std::abs(uv.values.at(x, y) - 1000.f) < 10.f) ++within;
    }
  }
  CHECK(total > 500);
  CHECK(within >= static_cast<int>(0.95 * total));

  // outside the island: zero
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double uu = (x + 0.5) / res, vv = (y + 0.5) / res;
      if (uu > 0.95 || vv > 0.95 || uu < 0.05 || vv < 0.05)
        CHECK(uv.values.at(x, y) == 0.f);
    }
}

TEST_CASE("baked mass stays within tolerance of the image mass") {
  PadGeometry pad;
  pad.center = Vec3::Zero();
  const Mesh quad = flat_quad(0.08, 0.0, true);
  ImageF img(pad.cols, pad.rows, 1, 0.f);
  const double cw = pad.extent.x() / pad.cols, ch = pad.extent.y() / pad.rows;
  for (int r = 0; r < pad.rows; ++r)
    for (int c = 0; c < pad.cols; ++c) {
      const double u = (c + 0.5) * cw - pad.extent.x() / 2;
      const double v = (r + 0.5) * ch - pad.extent.y() / 2;
      if (std::abs(u) < 0.035 && std::abs(v) < 0.03) img.at(c, r) = 1500.f;
    }
  const UVPressureMap uv = bake_pad_pressure_to_uv(quad, pad, img, 256);
  const double image_mass = image_force(img, pad.extent);
  const double baked_mass = uv_force(uv, quad);
  CHECK(baked_mass <= image_mass * 1.02);
  CHECK(baked_mass >= image_mass * 0.9);
}

TEST_CASE("uv atlas mask covers the quad island") {
  const Mesh quad = flat_quad(0.08, 0.0, true);
  const ImageU8 atlas = uv_atlas_mask(*quad.topology, 64);
  int covered = 0;
  for (auto v : atlas.raw()) covered += v;
  // island spans [0.1,0.9]^2 of a 64x64 grid: about (0.8*64)^2 texels
  CHECK(covered > 2300);
  CHECK(covered < 2800);
}

TEST_CASE("metrics CSV writes one row per frame") {
  const std::string path = "/tmp/hp_metrics_test.csv";
  write_metrics_csv(path, {{0, 50.0, 40.0, 12.5, true, false}, {1, 100.0, 100.0, 0.0, true, true}});
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "frame,contact_iou,vol_iou,mae_pa,contact_est,contact_gt");
  std::getline(is, line);
  CHECK(line == "0,50,40,12.5,1,0");
  std::getline(is, line);
  CHECK(line == "1,100,100,0,1,1");
  std::remove(path.c_str());
}
