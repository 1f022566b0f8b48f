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
#include "handpress/pressure.hpp"

#include <cmath>
#include <fstream>

#include "handpress/rasterizer.hpp"

namespace handpress {

void PressureFrame::validate() const {
  if (extent.x() <= 0 || extent.y() <= 0)
    throw DataError("PressureFrame: extent must be positive");
  for (const float v : grid.raw())
    if (v < 0 || !std::isfinite(v)) throw DataError("PressureFrame: negative or non-finite value");
}

ImageU8 contact_mask(const ImageF& pressure, double threshold_pa) {
  ImageU8 out(pressure.width(), pressure.height(), 1, 0);
  for (int y = 0; y < pressure.height(); ++y)
    for (int x = 0; x < pressure.width(); ++x)
      out.at(x, y) = pressure.at(x, y) > threshold_pa ? 1 : 0;
  return out;
}

// ----------------------------------------------------------------------------
// Baking

namespace {

struct UvTexel {
  int face;
  double w[3];  // barycentric in UV space
};

// Last face (in index order) covering each texel wins, matching the write
// order used when baking.
void rasterize_uv_atlas(const MeshTopology& topo, int res,
                        const std::function<bool(int)>& face_selected,
                        const std::function<void(int, int, const UvTexel&)>& emit) {
  const int F = topo.num_faces();
  for (int f = 0; f < F; ++f) {
    if (!face_selected(f)) continue;
    Vec2 p[3];
    for (int k = 0; k < 3; ++k)
      p[k] = Vec2(topo.uv(3 * f + k, 0) * res, topo.uv(3 * f + k, 1) * res);
    const double area = (p[1] - p[0]).x() * (p[2] - p[0]).y() -
                        (p[1] - p[0]).y() * (p[2] - p[0]).x();
    if (std::abs(area) < 1e-14) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].x(), p[1].x(), p[2].x()}))));
    const int x1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({p[0].x(), p[1].x(), p[2].x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].y(), p[1].y(), p[2].y()}))));
    const int y1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({p[0].y(), p[1].y(), p[2].y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q(x + 0.5, y + 0.5);
        double e[3];
        e[0] = (p[2] - p[1]).x() * (q - p[1]).y() - (p[2] - p[1]).y() * (q - p[1]).x();
        e[1] = (p[0] - p[2]).x() * (q - p[2]).y() - (p[0] - p[2]).y() * (q - p[2]).x();
        e[2] = (p[1] - p[0]).x() * (q - p[0]).y() - (p[1] - p[0]).y() * (q - p[0]).x();
        const bool inside = area > 0 ? (e[0] >= 0 && e[1] >= 0 && e[2] >= 0)
                                     : (e[0] <= 0 && e[1] <= 0 && e[2] <= 0);
        if (!inside) continue;
        UvTexel t;
        t.face = f;
        for (int k = 0; k < 3; ++k) t.w[k] = e[k] / area;
        emit(x, y, t);
      }
    }
  }
}

UVPressureMap bake_common(const Mesh& mesh, const ImageF& source, int res,
                          const ImageI& face_id,
                          const std::function<Vec2(const Vec3&)>& to_source_px) {
  UVPressureMap out;
  out.values = ImageF(res, res, 1, 0.f);
  if (source.raw().empty()) return out;

  // faces that won at least one pixel in the occluded-surface render
  std::vector<uint8_t> selected(mesh.faces().rows(), 0);
  for (const int32_t f : face_id.raw())
    if (f >= 0) selected[f] = 1;

  const MatX3i& F = mesh.faces();
  rasterize_uv_atlas(
      *mesh.topology, res, [&](int f) { return selected[f] != 0; },
      [&](int x, int y, const UvTexel& t) {
        Vec3 pos = Vec3::Zero();
        for (int k = 0; k < 3; ++k)
          pos += t.w[k] * Vec3(mesh.vertices.row(F(t.face, k)));
        const Vec2 px = to_source_px(pos);
        const int ix = static_cast<int>(std::floor(px.x()));
        const int iy = static_cast<int>(std::floor(px.y()));
        if (ix < 0 || iy < 0 || ix >= face_id.width() || iy >= face_id.height()) {
          out.values.at(x, y) = 0.f;
          return;
        }
        // visibility: this face must own the pixel in the occluded render
        if (face_id.at(ix, iy) != t.face) {
          out.values.at(x, y) = 0.f;
          return;
        }
        out.values.at(x, y) = static_cast<float>(bilinear(source, px.x(), px.y()));
      });
  return out;
}

}  // namespace

UVPressureMap bake_pressure_to_uv(const Mesh& mesh, const CameraModel& camera,
                                  const ImageF& pressure_image, int uv_resolution) {
  if (pressure_image.raw().empty() ||
      std::all_of(pressure_image.raw().begin(), pressure_image.raw().end(),
                  [](float v) { return v == 0.f; })) {
    UVPressureMap out;
    out.values = ImageF(uv_resolution, uv_resolution, 1, 0.f);
    return out;
  }
  if (pressure_image.width() != camera.width || pressure_image.height() != camera.height)
    throw std::invalid_argument("bake_pressure_to_uv: image/camera raster mismatch");
  RasterizerOptions opts;
  opts.soft_mask = false;
  opts.facing = RasterizerOptions::Facing::kBack;  // camera-averted faces
  opts.farthest = true;                            // inverted z-test
  const RenderOutput r = rasterize(mesh, camera, nullptr, opts);
  return bake_common(mesh, pressure_image, uv_resolution, r.face_id,
                     [&](const Vec3& p) { return project(camera, p).pixel; });
}

UVPressureMap bake_pad_pressure_to_uv(const Mesh& mesh, const PadGeometry& pad,
                                      const ImageF& pressure_grid, int uv_resolution) {
  const VirtualRender vr = rasterize_under_pad(mesh, pad, nullptr);
  const double su = pad.cols / pad.extent.x(), sv = pad.rows / pad.extent.y();
  return bake_common(mesh, pressure_grid, uv_resolution, vr.face_id, [&](const Vec3& p) {
    const Vec3 pf = pad.to_pad_frame(p);
    return Vec2(pf.x() * su, pf.y() * sv);
  });
}

ImageU8 uv_atlas_mask(const MeshTopology& topology, int uv_resolution) {
  ImageU8 out(uv_resolution, uv_resolution, 1, 0);
  rasterize_uv_atlas(topology, uv_resolution, [](int) { return true; },
                     [&](int x, int y, const UvTexel&) { out.at(x, y) = 1; });
  return out;
}

// ----------------------------------------------------------------------------
// Metrics

namespace {
void check_grids(const ImageF& a, const ImageF& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height())
    throw std::invalid_argument(std::string(what) + ": grid size mismatch");
}
}  // namespace

MetricValue metric_contact_iou(const ImageF& est, const ImageF& gt) {
  check_grids(est, gt, "metric_contact_iou");
  int inter = 0, uni = 0;
  for (int y = 0; y < est.height(); ++y) {
    for (int x = 0; x < est.width(); ++x) {
      const bool a = est.at(x, y) > kContactThresholdPa;
      const bool b = gt.at(x, y) > kContactThresholdPa;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
  }
  if (uni == 0) return {100.0, true};
  return {100.0 * inter / uni, false};
}

MetricValue metric_volumetric_iou(const ImageF& est, const ImageF& gt) {
  check_grids(est, gt, "metric_volumetric_iou");
  double smin = 0, smax = 0;
  for (int y = 0; y < est.height(); ++y) {
    for (int x = 0; x < est.width(); ++x) {
      smin += std::min(est.at(x, y), gt.at(x, y));
      smax += std::max(est.at(x, y), gt.at(x, y));
    }
  }
  if (smax <= 0) return {100.0, true};
  return {100.0 * smin / smax, false};
}

double metric_mae(const ImageF& est, const ImageF& gt) {
  check_grids(est, gt, "metric_mae");
  double sum = 0;
  for (int y = 0; y < est.height(); ++y)
    for (int x = 0; x < est.width(); ++x)
      sum += std::abs(double(est.at(x, y)) - double(gt.at(x, y)));
  return sum / (double(est.width()) * est.height());
}

double metric_temporal_accuracy(const std::vector<ImageF>& est,
                                const std::vector<ImageF>& gt) {
  if (est.size() != gt.size())
    throw std::invalid_argument("metric_temporal_accuracy: frame count mismatch");
  if (est.empty())
    throw std::invalid_argument("metric_temporal_accuracy: empty sequence");
  int match = 0;
  for (size_t i = 0; i < est.size(); ++i) {
    const auto any_contact = [](const ImageF& g) {
      for (const float v : g.raw())
        if (v > kContactThresholdPa) return true;
      return false;
    };
    if (any_contact(est[i]) == any_contact(gt[i])) ++match;
  }
  return 100.0 * match / est.size();
}

std::pair<MetricValue, MetricValue> uv_metrics(const UVPressureMap& est,
                                               const UVPressureMap& gt,
                                               const ImageU8& atlas) {
  if (est.values.width() != gt.values.width() || est.values.height() != gt.values.height())
    throw std::invalid_argument("uv_metrics: resolution mismatch");
  int inter = 0, uni = 0;
  double smin = 0, smax = 0;
  for (int y = 0; y < est.values.height(); ++y) {
    for (int x = 0; x < est.values.width(); ++x) {
      if (!atlas.raw().empty() && atlas.at(x, y) == 0) continue;
      const double e = est.values.at(x, y), g = gt.values.at(x, y);
      const bool a = e > kContactThresholdPa, b = g > kContactThresholdPa;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
      smin += std::min(e, g);
      smax += std::max(e, g);
    }
  }
  MetricValue ciou = uni == 0 ? MetricValue{100.0, true}
                              : MetricValue{100.0 * inter / uni, false};
  MetricValue viou = smax <= 0 ? MetricValue{100.0, true}
                               : MetricValue{100.0 * smin / smax, false};
  return {ciou, viou};
}

double grid_force(const PressureFrame& frame) {
  return image_force(frame.grid, frame.extent);
}

double image_force(const ImageF& grid, const Vec2& extent_m) {
  const double cell = (extent_m.x() / grid.width()) * (extent_m.y() / grid.height());
  double sum = 0;
  for (const float v : grid.raw()) sum += v;
  return sum * cell;
}

double uv_force(const UVPressureMap& map, const Mesh& mesh) {
  const int res = map.values.width();
  ImageI owner(res, res, 1, -1);
  rasterize_uv_atlas(*mesh.topology, res, [](int) { return true; },
                     [&](int x, int y, const UvTexel& t) { owner.at(x, y) = t.face; });
  // per-face 3D/UV area ratio
  const MatX3i& F = mesh.faces();
  const MatX2& uv = mesh.topology->uv;
  std::vector<double> ratio(F.rows(), 0.0);
  for (int f = 0; f < F.rows(); ++f) {
    const Vec3 a = mesh.vertices.row(F(f, 0)), b = mesh.vertices.row(F(f, 1)),
               c = mesh.vertices.row(F(f, 2));
    const double area3d = 0.5 * ((b - a).cross(c - a)).norm();
    const Vec2 ua(uv(3 * f, 0), uv(3 * f, 1)), ub(uv(3 * f + 1, 0), uv(3 * f + 1, 1)),
        uc(uv(3 * f + 2, 0), uv(3 * f + 2, 1));
    const double areauv =
        0.5 * std::abs((ub - ua).x() * (uc - ua).y() - (ub - ua).y() * (uc - ua).x());
    ratio[f] = areauv > 1e-16 ? area3d / areauv : 0.0;
  }
  const double texel_uv_area = 1.0 / (double(res) * res);
  double force = 0;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      if (owner.at(x, y) >= 0)
        force += map.values.at(x, y) * texel_uv_area * ratio[owner.at(x, y)];
  return force;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("write_metrics_csv: cannot open " + path);
  os << "frame,contact_iou,vol_iou,mae_pa,contact_est,contact_gt\n";
  for (const auto& r : rows)
    os << r.frame << "," << format_double(r.contact_iou) << "," << format_double(r.vol_iou)
       << "," << format_double(r.mae_pa) << "," << (r.contact_est ? 1 : 0) << ","
       << (r.contact_gt ? 1 : 0) << "\n";
}

}  // namespace handpress
