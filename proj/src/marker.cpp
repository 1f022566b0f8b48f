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
#include "handpress/marker.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace handpress {

namespace {

// Board coordinates (mm): the 0-M-2-4 chain runs along x, the majority group
// sits at negative y which projects to the right of M->0 in image convention
// (x right, y down) when viewed from above.
const std::map<std::string, Vec2> kCanonicalBoardMm = {
    {"4", {-330.0, 0.0}},  {"2", {-170.0, 0.0}},   {"M", {-14.0, 0.0}},
    {"0", {14.0, 0.0}},    {"L", {180.0, -70.0}},  {"3", {-80.0, 200.0}},
    {"5", {-145.5, -174.5}}, {"1", {-205.6, -317.9}}, {"R", {4.4, -199.8}},
};

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct LineFit {
  Vec2 centroid;
  Vec2 dir;         // unit
  double residual;  // max |perp|
  double spread;    // along-extent
};

LineFit fit_line(const std::vector<Vec2>& pts) {
  LineFit f;
  f.centroid = Vec2::Zero();
  for (const auto& p : pts) f.centroid += p;
  f.centroid /= pts.size();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Vec2 d = p - f.centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  f.dir = es.eigenvectors().col(1);  // largest eigenvalue
  double amin = 1e300, amax = -1e300, rmax = 0;
  for (const auto& p : pts) {
    const Vec2 d = p - f.centroid;
    const double along = d.dot(f.dir);
    amin = std::min(amin, along);
    amax = std::max(amax, along);
    rmax = std::max(rmax, std::abs(cross2(f.dir, d)));
  }
  f.residual = rmax;
  f.spread = amax - amin;
  return f;
}

struct IdentifyAttempt {
  std::map<std::string, Vec2> labels;
  bool ok = false;
  std::string why;
};

// The identification procedure on exactly nine points.
IdentifyAttempt identify9(const std::vector<Vec2>& pts) {
  IdentifyAttempt out;
  const int n = 9;

  // 1. closest pair -> {0, M} (orientation resolved by side counts)
  double dmin = 1e300, dsecond = 1e300;
  int ia = -1, ib = -1;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (pts[i] - pts[j]).norm();
      if (d < dmin) {
        dsecond = dmin;
        dmin = d;
        ia = i;
        ib = j;
      } else if (d < dsecond) {
        dsecond = d;
      }
    }
  }
  const double tol = 1e-3 * dmin;
  if (dsecond - dmin <= tol) {
    out.why = "ambiguous closest pair";
    return out;
  }

  // 2. side counts around the M->0 vector: more markers lie on the right
  //    (image convention x right, y down) for the correct orientation.
  auto side_counts = [&](const Vec2& from, const Vec2& to, int* right, int* left) {
    const Vec2 d = to - from;
    const double dn = d.norm();
    *right = *left = 0;
    for (int k = 0; k < n; ++k) {
      if (k == ia || k == ib) continue;
      const double c = cross2(d, pts[k] - from) / dn;
      if (c > tol)
        ++(*right);
      else if (c < -tol)
        ++(*left);
    }
  };
  int r1, l1;
  side_counts(pts[ia], pts[ib], &r1, &l1);  // as if M=ia, 0=ib
  int idx0, idxM;
  if (r1 > l1) {
    idxM = ia;
    idx0 = ib;
  } else if (l1 > r1) {
    idxM = ib;
    idx0 = ia;
  } else {
    out.why = "ambiguous side count";
    return out;
  }

  // 3. 2 and 4: the unlabeled pair whose joint line fit with {0, M} has the
  //    smallest residual/spread ratio; chain order along the fitted line
  //    must be [0, M, 2, 4] with 2 nearer to M.
  std::vector<int> rem;
  for (int k = 0; k < n; ++k)
    if (k != idx0 && k != idxM) rem.push_back(k);
  double best_ratio = 1e300, second_ratio = 1e300;
  int bp = -1, bq = -1;
  LineFit best_fit;
  for (size_t i = 0; i < rem.size(); ++i) {
    for (size_t j = i + 1; j < rem.size(); ++j) {
      const LineFit f = fit_line({pts[idx0], pts[idxM], pts[rem[i]], pts[rem[j]]});
      const double ratio = f.residual / std::max(f.spread, 1e-12);
      if (ratio < best_ratio) {
        second_ratio = best_ratio;
        best_ratio = ratio;
        bp = rem[i];
        bq = rem[j];
        best_fit = f;
      } else if (ratio < second_ratio) {
        second_ratio = ratio;
      }
    }
  }
  // tie check in distance units: residual gap versus the tie tolerance
  if (bp < 0 || (second_ratio - best_ratio) * best_fit.spread <= tol) {
    out.why = "ambiguous collinear pair";
    return out;
  }
  Vec2 lu = best_fit.dir;
  auto along = [&](int k) { return (pts[k] - best_fit.centroid).dot(lu); };
  if (along(idx0) > along(idxM)) lu = -lu;
  const double sM = along(idxM), sp = along(bp), sq = along(bq);
  if (!(along(idx0) < sM && sM < std::min(sp, sq))) {
    out.why = "chain order violated";
    return out;
  }
  if (std::abs(sp - sq) <= tol) {
    out.why = "ambiguous 2/4 order";
    return out;
  }
  const int idx2 = sp < sq ? bp : bq;
  const int idx4 = sp < sq ? bq : bp;

  // 4. L: closest to the fitted main line, on 0's side of M along the line.
  std::vector<int> rem2;
  for (int k : rem)
    if (k != idx2 && k != idx4) rem2.push_back(k);
  const Vec2 ln(-lu.y(), lu.x());
  int idxL = -1;
  double dl_best = 1e300, dl_second = 1e300;
  for (int k : rem2) {
    const double d = std::abs((pts[k] - best_fit.centroid).dot(ln));
    if (d < dl_best) {
      dl_second = dl_best;
      dl_best = d;
      idxL = k;
    } else if (d < dl_second) {
      dl_second = d;
    }
  }
  if (dl_second - dl_best <= tol) {
    out.why = "ambiguous L";
    return out;
  }
  if (!(along(idxL) < sM)) {
    out.why = "L on the wrong side";
    return out;
  }

  // 5. centroid line from 0: 3 sits alone on its side among the rest.
  Vec2 cen = Vec2::Zero();
  for (const auto& p : pts) cen += p;
  cen /= n;
  const Vec2 cd = cen - pts[idx0];
  const double cdn = cd.norm();
  std::vector<int> rem3;
  for (int k : rem2)
    if (k != idxL) rem3.push_back(k);
  std::vector<double> side(rem3.size());
  for (size_t i = 0; i < rem3.size(); ++i)
    side[i] = cross2(cd, pts[rem3[i]] - pts[idx0]) / cdn;
  int idx3 = -1;
  for (size_t i = 0; i < rem3.size(); ++i) {
    bool alone = std::abs(side[i]) > tol;
    for (size_t j = 0; j < rem3.size() && alone; ++j)
      if (j != i && side[i] * side[j] > 0) alone = false;
    if (alone) {
      if (idx3 >= 0) {
        out.why = "centroid isolation not unique";
        return out;
      }
      idx3 = rem3[static_cast<int>(i)];
    }
  }
  if (idx3 < 0) {
    out.why = "no isolated marker across centroid line";
    return out;
  }

  // 6. 5: closest to the centroid line among those not yet labeled.
  std::vector<int> rem4;
  for (int k : rem3)
    if (k != idx3) rem4.push_back(k);
  int idx5 = -1;
  double d5_best = 1e300, d5_second = 1e300;
  for (int k : rem4) {
    const double d = std::abs(cross2(cd, pts[k] - pts[idx0]) / cdn);
    if (d < d5_best) {
      d5_second = d5_best;
      d5_best = d;
      idx5 = k;
    } else if (d < d5_second) {
      d5_second = d;
    }
  }
  if (d5_second - d5_best <= tol) {
    out.why = "ambiguous 5";
    return out;
  }

  // 7. 1 and R by proximity to the 2-5 line, 1 closer.
  std::vector<int> rem5;
  for (int k : rem4)
    if (k != idx5) rem5.push_back(k);
  const Vec2 l25 = pts[idx5] - pts[idx2];
  const double l25n = l25.norm();
  const double dA = std::abs(cross2(l25, pts[rem5[0]] - pts[idx2]) / l25n);
  const double dB = std::abs(cross2(l25, pts[rem5[1]] - pts[idx2]) / l25n);
  if (std::abs(dA - dB) <= tol) {
    out.why = "ambiguous 1/R";
    return out;
  }
  const int idx1 = dA < dB ? rem5[0] : rem5[1];
  const int idxR = dA < dB ? rem5[1] : rem5[0];

  out.labels = {{"0", pts[idx0]}, {"M", pts[idxM]}, {"2", pts[idx2]},
                {"4", pts[idx4]}, {"L", pts[idxL]}, {"3", pts[idx3]},
                {"5", pts[idx5]}, {"1", pts[idx1]}, {"R", pts[idxR]}};
  out.ok = true;
  return out;
}

// Max residual (px) of the best board-to-image homography for a labeling.
double homography_residual(const std::map<std::string, Vec2>& labels,
                           const MarkerLayout& layout) {
  const MatX3 P = layout.points_in_order();
  const Vec3 c3 = P.colwise().mean();
  const Vec3 n = layout.normal.normalized();
  Vec3 bu = (P.row(0).transpose() - c3);
  bu = (bu - bu.dot(n) * n).normalized();
  const Vec3 bv = bu.cross(n);
  MatX A = MatX::Zero(18, 9);
  for (int i = 0; i < 9; ++i) {
    const Vec3 d = P.row(i).transpose() - c3;
    const double X = d.dot(bu), Y = d.dot(bv);
    const Vec2 q = labels.at(kMarkerLabels[i]);
    A.row(2 * i) << X, Y, 1, 0, 0, 0, -q.x() * X, -q.x() * Y, -q.x();
    A.row(2 * i + 1) << 0, 0, 0, X, Y, 1, -q.y() * X, -q.y() * Y, -q.y();
  }
  Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
  const VecX h = svd.matrixV().col(8);
  double worst = 0;
  for (int i = 0; i < 9; ++i) {
    const Vec3 d = P.row(i).transpose() - c3;
    const double X = d.dot(bu), Y = d.dot(bv);
    const double w = h[6] * X + h[7] * Y + h[8];
    if (std::abs(w) < 1e-15) return std::numeric_limits<double>::infinity();
    const Vec2 proj((h[0] * X + h[1] * Y + h[2]) / w, (h[3] * X + h[4] * Y + h[5]) / w);
    worst = std::max(worst, (proj - labels.at(kMarkerLabels[i])).norm());
  }
  return worst;
}

}  // namespace

std::map<std::string, Vec2> identify_markers(const std::vector<Vec2>& centroids,
                                             const MarkerLayout* layout) {
  const int n = static_cast<int>(centroids.size());
  if (n < 9)
    throw InsufficientMarkersError("identify_markers: need 9 centroids, got " +
                                   std::to_string(n));
  if (n == 9) {
    IdentifyAttempt a = identify9(centroids);
    if (!a.ok) throw AmbiguousIdentificationError("identify_markers: " + a.why);
    return a.labels;
  }
  if (n > 14)
    throw AmbiguousIdentificationError(
        "identify_markers: too many candidate centroids (" + std::to_string(n) + ")");
  // noise rejection: exactly one 9-subset may pass the predicates (and the
  // planar-homography consistency check when the layout is known)
  IdentifyAttempt found;
  int found_count = 0;
  std::vector<int> comb(9);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == 9) {
      std::vector<Vec2> sub(9);
      for (int i = 0; i < 9; ++i) sub[i] = centroids[comb[i]];
      IdentifyAttempt a = identify9(sub);
      if (a.ok && layout) {
        double span = 0;
        for (int i = 0; i < 9; ++i)
          for (int j = i + 1; j < 9; ++j) span = std::max(span, (sub[i] - sub[j]).norm());
        if (homography_residual(a.labels, *layout) > std::max(2.0, 0.01 * span)) a.ok = false;
      }
      if (a.ok) {
        ++found_count;
        found = a;
      }
      return;
    }
    for (int i = start; i <= n - (9 - depth); ++i) {
      comb[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  if (found_count == 1) return found.labels;
  throw AmbiguousIdentificationError(
      found_count == 0 ? "identify_markers: no consistent 9-subset"
                       : "identify_markers: multiple consistent 9-subsets");
}

std::vector<Vec2> detect_markers(const ImageF& ir_image, double intensity_threshold) {
  if (ir_image.channels() != 1)
    throw std::invalid_argument("detect_markers: expects a single-channel image");
  const int W = ir_image.width(), H = ir_image.height();
  std::vector<int32_t> label(static_cast<size_t>(W) * H, -1);
  std::vector<Vec2> centroids;
  std::vector<std::array<int, 2>> stack;
  int next = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (ir_image.at(x, y) < intensity_threshold || label[y * W + x] >= 0) continue;
      stack.push_back({x, y});
      label[y * W + x] = next;
      double wsum = 0, xsum = 0, ysum = 0;
      int area = 0;
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        const double wpx = ir_image.at(cx, cy);
        wsum += wpx;
        xsum += wpx * cx;
        ysum += wpx * cy;
        ++area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
            if (label[ny * W + nx] >= 0 || ir_image.at(nx, ny) < intensity_threshold)
              continue;
            label[ny * W + nx] = next;
            stack.push_back({nx, ny});
          }
        }
      }
      ++next;
      if (area >= 2 && wsum > 0) centroids.emplace_back(xsum / wsum, ysum / wsum);
    }
  }
  return centroids;
}

// ----------------------------------------------------------------------------
// Layout

MatX3 MarkerLayout::points_in_order() const {
  MatX3 out(9, 3);
  for (int i = 0; i < 9; ++i) {
    const auto it = positions.find(kMarkerLabels[i]);
    if (it == positions.end())
      throw DataError(std::string("MarkerLayout: missing label ") + kMarkerLabels[i]);
    out.row(i) = it->second.transpose();
  }
  return out;
}

void MarkerLayout::validate() const {
  if (positions.size() != 9) throw DataError("MarkerLayout: needs exactly 9 markers");
  const MatX3 P = points_in_order();
  for (int i = 0; i < 9; ++i)
    for (int j = i + 1; j < 9; ++j)
      if ((P.row(i) - P.row(j)).norm() < 1e-6)
        throw DataError("MarkerLayout: coincident markers");

  // Identification must hold on the nominal top-down view and under a sweep
  // of anisotropic compressions emulating oblique viewing down to 15 deg
  // elevation (the usable beam cone of the marker LEDs).
  const double s_min = std::sin(15.0 * M_PI / 180.0);
  const Vec3 c = P.colwise().mean();
  MatX3 centered = P.rowwise() - c.transpose();
  Eigen::JacobiSVD<MatX> svd(centered, Eigen::ComputeThinV);
  if (svd.singularValues()[2] > 1e-6 * svd.singularValues()[0])
    throw DataError("MarkerLayout: markers must be coplanar");
  const Vec3 n = normal.normalized();
  Vec3 bu = svd.matrixV().col(0);
  bu = (bu - bu.dot(n) * n).normalized();
  if (std::abs(Vec3(svd.matrixV().col(2)).dot(n)) < 0.99)
    throw DataError("MarkerLayout: normal must be perpendicular to the board plane");
  // image frame seen from the marker side: u x v = -n (x right, y down)
  const Vec3 bv = bu.cross(n);
  for (int ai = 0; ai < 16; ++ai) {
    const double th = M_PI * ai / 16;
    for (int si = 0; si < 4; ++si) {
      const double s = s_min + (1.0 - s_min) * si / 3.0;
      std::vector<Vec2> pts;
      for (int i = 0; i < 9; ++i) {
        const Vec3 d = P.row(i).transpose() - c;
        // board plane coordinates in the image convention, compressed along
        // direction th by factor s
        const Vec2 q0(d.dot(bu), d.dot(bv));
        const Vec2 e(std::cos(th), std::sin(th));
        const Vec2 q = q0 - (1.0 - s) * q0.dot(e) * e;
        pts.push_back(q);
      }
      IdentifyAttempt a = identify9(pts);
      if (!a.ok)
        throw DataError("MarkerLayout: identification fails under oblique view (" +
                        a.why + ")");
      for (int i = 0; i < 9; ++i)
        if ((a.labels.at(kMarkerLabels[i]) - pts[i]).norm() > 1e-9)
          throw DataError("MarkerLayout: identification mislabels under oblique view");
    }
  }
}

MarkerLayout canonical_marker_layout() {
  MarkerLayout layout;
  for (const auto& [label, mm] : kCanonicalBoardMm)
    layout.positions[label] = Vec3(mm.x() / 1000.0, mm.y() / 1000.0, 0.0);
  layout.normal = Vec3::UnitZ();
  layout.validate();
  return layout;
}

using nlohmann::json;

MarkerLayout load_marker_layout(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_marker_layout: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_marker_layout: parse error: " + std::string(e.what()));
  }
  MarkerLayout layout;
  for (const auto& [label, pos] : j.at("markers").items()) {
    if (pos.size() != 3) throw DataError("load_marker_layout: positions must be 3D");
    layout.positions[label] = Vec3(pos[0], pos[1], pos[2]);
  }
  if (j.contains("normal")) {
    const auto& nn = j["normal"];
    layout.normal = Vec3(nn[0], nn[1], nn[2]);
  }
  layout.validate();
  return layout;
}

void save_marker_layout(const MarkerLayout& layout, const std::string& path) {
  json markers;
  for (const auto& [label, pos] : layout.positions)
    markers[label] = {pos.x(), pos.y(), pos.z()};
  json j;
  j["markers"] = markers;
  j["normal"] = {layout.normal.x(), layout.normal.y(), layout.normal.z()};
  std::ofstream os(path);
  if (!os) throw DataError("save_marker_layout: cannot open " + path);
  os << j.dump(2);
}

// ----------------------------------------------------------------------------
// Tracking

PoseTimeline track_camera(const std::vector<ImageF>& frames, const MarkerLayout& layout,
                          const CameraModel& intrinsics, const TrackingConfig& config) {
  const MatX3 object = layout.points_in_order();
  PoseTimeline tl;
  const int n = static_cast<int>(frames.size());
  tl.poses.resize(n);
  tl.reprojection_px.assign(n, 0.0);
  tl.timestamps.resize(n);
  tl.interpolated.assign(n, false);
  for (int i = 0; i < n; ++i) {
    tl.timestamps[i] = i / config.frame_rate;
    std::map<std::string, Vec2> id;
    try {
      const auto centroids = detect_markers(frames[i], config.intensity_threshold);
      id = identify_markers(centroids, &layout);
    } catch (const InsufficientMarkersError&) {
      continue;
    } catch (const AmbiguousIdentificationError&) {
      continue;
    }
    MatX2 image(9, 2);
    for (int k = 0; k < 9; ++k) image.row(k) = id.at(kMarkerLabels[k]).transpose();
    PnpResult pnp;
    try {
      pnp = solve_pnp(object, image, intrinsics);
    } catch (const std::exception&) {
      continue;
    }
    if (pnp.mean_reprojection_px > config.reprojection_filter_px) continue;
    TimelinePose pose;
    pose.rotation = canonical(Quat(pnp.rotation));
    pose.translation = pnp.translation;
    tl.poses[i] = pose;
    tl.reprojection_px[i] = pnp.mean_reprojection_px;
  }
  return slerp_fill(tl);
}

}  // namespace handpress
