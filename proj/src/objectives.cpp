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
#include "handpress/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace handpress {

void LossWeights::validate() const {
  const double all[] = {lambda_mask,   lambda_appearance, lambda_depth, intersection,
                        arap,          laplacian,         normal_consistency,
                        offset,        temporal,          virtual_pressure,
                        virtual_contact, beta_l2};
  for (double w : all)
    if (!(w >= 0) || !std::isfinite(w))
      throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
}

void ObservationFrame::validate() const {
  if (appearance.size() != depth.size() || appearance.size() != mask.size())
    throw DataError("ObservationFrame: per-camera channel counts differ");
  for (size_t i = 0; i < mask.size(); ++i) {
    const ImageF& m = mask[i];
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        const float v = m.at(x, y);
        if (v != 0.f && v != 1.f)
          throw DataError("ObservationFrame: mask must be binary");
        if (v == 0.f) {
          if (depth[i].at(x, y) != 0.f)
            throw DataError("ObservationFrame: depth nonzero outside mask");
          for (int c = 0; c < appearance[i].channels(); ++c)
            if (appearance[i].at(x, y, c) != 0.f)
              throw DataError("ObservationFrame: appearance nonzero outside mask");
        }
      }
    }
  }
  pressure.validate();
}

// ----------------------------------------------------------------------------
// Render losses

namespace {
void check_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2)
    throw std::invalid_argument(std::string(what) + ": raster size mismatch");
}
}  // namespace

LossValue mask_iou_loss(const ImageD& rendered, const ImageF& gt) {
  check_same_size(rendered.width(), rendered.height(), gt.width(), gt.height(),
                  "mask_iou_loss");
  double inter = 0, uni = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double r = rendered.at(x, y), g = gt.at(x, y);
      inter += std::min(r, g);
      uni += std::max(r, g);
    }
  }
  if (uni <= 0) return {0.0, true};
  return {1.0 - inter / uni, false};
}

LossValue mask_iou_loss_backward(const ImageD& rendered, const ImageF& gt,
                                 ImageD* d_rendered) {
  const LossValue lv = mask_iou_loss(rendered, gt);
  *d_rendered = ImageD(rendered.width(), rendered.height(), 1, 0.0);
  if (lv.degenerate) return lv;
  double inter = 0, uni = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      inter += std::min(rendered.at(x, y), double(gt.at(x, y)));
      uni += std::max(rendered.at(x, y), double(gt.at(x, y)));
    }
  }
  // loss = 1 - I/U; dI/dr = [r <= g], dU/dr = [r > g]
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double r = rendered.at(x, y), g = gt.at(x, y);
      const double dI = r <= g ? 1.0 : 0.0;
      const double dU = r > g ? 1.0 : 0.0;
      d_rendered->at(x, y) = -(dI * uni - inter * dU) / (uni * uni);
    }
  }
  return lv;
}

namespace {
bool appearance_included(const ImageI& face_id, const ImageF& gt_mask, int x, int y) {
  return gt_mask.at(x, y) > 0.5f || face_id.at(x, y) >= 0;
}
}  // namespace

LossValue appearance_loss(const ImageD& feature, const ImageI& face_id,
                          const ImageF& gt_appearance, const ImageF& gt_mask) {
  check_same_size(feature.width(), feature.height(), gt_appearance.width(),
                  gt_appearance.height(), "appearance_loss");
  const int C = std::min(feature.channels(), gt_appearance.channels());
  double sum = 0;
  int n = 0;
  for (int y = 0; y < feature.height(); ++y) {
    for (int x = 0; x < feature.width(); ++x) {
      if (!appearance_included(face_id, gt_mask, x, y)) continue;
      ++n;
      for (int c = 0; c < C; ++c) {
        const double d = feature.at(x, y, c) - gt_appearance.at(x, y, c);
        sum += d * d;
      }
    }
  }
  if (n == 0) return {0.0, true};
  return {sum / (double(n) * C), false};
}

LossValue appearance_loss_backward(const ImageD& feature, const ImageI& face_id,
                                   const ImageF& gt_appearance, const ImageF& gt_mask,
                                   ImageD* d_feature) {
  const LossValue lv = appearance_loss(feature, face_id, gt_appearance, gt_mask);
  *d_feature = ImageD(feature.width(), feature.height(), feature.channels(), 0.0);
  if (lv.degenerate) return lv;
  const int C = std::min(feature.channels(), gt_appearance.channels());
  int n = 0;
  for (int y = 0; y < feature.height(); ++y)
    for (int x = 0; x < feature.width(); ++x)
      if (appearance_included(face_id, gt_mask, x, y)) ++n;
  const double scale = 2.0 / (double(n) * C);
  for (int y = 0; y < feature.height(); ++y) {
    for (int x = 0; x < feature.width(); ++x) {
      if (!appearance_included(face_id, gt_mask, x, y)) continue;
      for (int c = 0; c < C; ++c)
        d_feature->at(x, y, c) =
            scale * (feature.at(x, y, c) - gt_appearance.at(x, y, c));
    }
  }
  return lv;
}

LossValue depth_vol_iou_loss(const ImageD& rendered, const ImageF& gt) {
  check_same_size(rendered.width(), rendered.height(), gt.width(), gt.height(),
                  "depth_vol_iou_loss");
  double smin = 0, smax = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double r = rendered.at(x, y), g = gt.at(x, y);
      smin += std::min(r, g);
      smax += std::max(r, g);
    }
  }
  if (smax <= 0) return {0.0, true};
  return {1.0 - smin / smax, false};
}

LossValue depth_vol_iou_loss_backward(const ImageD& rendered, const ImageF& gt,
                                      ImageD* d_rendered) {
  const LossValue lv = depth_vol_iou_loss(rendered, gt);
  *d_rendered = ImageD(rendered.width(), rendered.height(), 1, 0.0);
  if (lv.degenerate) return lv;
  double smin = 0, smax = 0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      smin += std::min(rendered.at(x, y), double(gt.at(x, y)));
      smax += std::max(rendered.at(x, y), double(gt.at(x, y)));
    }
  }
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double r = rendered.at(x, y), g = gt.at(x, y);
      const double dmin = r <= g ? 1.0 : 0.0;
      const double dmax = r > g ? 1.0 : 0.0;
      d_rendered->at(x, y) = -(dmin * smax - smin * dmax) / (smax * smax);
    }
  }
  return lv;
}

RenderLossBreakdown render_loss(const std::vector<RenderOutput>& renders,
                                const ObservationFrame& obs, const LossWeights& weights) {
  if (renders.size() != obs.mask.size())
    throw std::invalid_argument("render_loss: camera count mismatch");
  RenderLossBreakdown out;
  for (size_t i = 0; i < renders.size(); ++i) {
    const LossValue m = mask_iou_loss(renders[i].mask, obs.mask[i]);
    const LossValue a = appearance_loss(renders[i].feature, renders[i].face_id,
                                        obs.appearance[i], obs.mask[i]);
    const LossValue d = depth_vol_iou_loss(renders[i].depth, obs.depth[i]);
    out.mask_iou.push_back(m.value);
    out.appearance.push_back(a.value);
    out.depth_vol_iou.push_back(d.value);
    out.degenerate = out.degenerate || m.degenerate || a.degenerate || d.degenerate;
    out.total += weights.lambda_mask * m.value + weights.lambda_appearance * a.value +
                 weights.lambda_depth * d.value;
  }
  return out;
}

// ----------------------------------------------------------------------------
// Mesh intersection: BVH over triangles + exact pair tests.

namespace {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool overlaps(const Aabb& b) const {
    return (lo.array() <= b.hi.array()).all() && (b.lo.array() <= hi.array()).all();
  }
};

struct BvhNode {
  Aabb box;
  int left = -1, right = -1;
  int face = -1;  // leaf
};

class TriBvh {
 public:
  TriBvh(const Mesh& mesh) : mesh_(mesh) {
    const int F = static_cast<int>(mesh.faces().rows());
    boxes_.resize(F);
    std::vector<int> order(F);
    for (int f = 0; f < F; ++f) {
      order[f] = f;
      for (int k = 0; k < 3; ++k)
        boxes_[f].expand(Vec3(mesh.vertices.row(mesh.faces()(f, k))));
    }
    nodes_.reserve(2 * F);
    root_ = build(order, 0, F);
  }

  // All face pairs with overlapping boxes, not sharing a vertex, fi < fj.
  std::vector<std::pair<int, int>> candidate_self_pairs() const {
    std::vector<std::pair<int, int>> out;
    if (root_ < 0) return out;
    collect_pairs(root_, root_, &out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  int build(std::vector<int>& order, int lo, int hi) {
    BvhNode node;
    for (int i = lo; i < hi; ++i) node.box.expand(boxes_[order[i]]);
    if (hi - lo == 1) {
      node.face = order[lo];
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    const Vec3 ext = node.box.hi - node.box.lo;
    int axis = 0;
    if (ext.y() > ext.x()) axis = 1;
    if (ext.z() > ext[axis]) axis = 2;
    const int mid = (lo + hi) / 2;
    std::nth_element(order.begin() + lo, order.begin() + mid, order.begin() + hi,
                     [&](int a, int b) {
                       return boxes_[a].lo[axis] + boxes_[a].hi[axis] <
                              boxes_[b].lo[axis] + boxes_[b].hi[axis];
                     });
    const int l = build(order, lo, mid);
    const int r = build(order, mid, hi);
    node.left = l;
    node.right = r;
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool share_vertex(int fa, int fb) const {
    const MatX3i& F = mesh_.faces();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (F(fa, a) == F(fb, b)) return true;
    return false;
  }

  void collect_pairs(int a, int b, std::vector<std::pair<int, int>>* out) const {
    const BvhNode &na = nodes_[a], &nb = nodes_[b];
    if (!na.box.overlaps(nb.box)) return;
    if (na.face >= 0 && nb.face >= 0) {
      if (na.face < nb.face && !share_vertex(na.face, nb.face))
        out->emplace_back(na.face, nb.face);
      return;
    }
    if (na.face >= 0) {
      collect_pairs(a, nb.left, out);
      collect_pairs(a, nb.right, out);
      return;
    }
    if (nb.face >= 0 || a == b) {
      collect_pairs(na.left, b == a ? na.left : b, out);
      if (a == b) {
        collect_pairs(na.left, na.right, out);
        collect_pairs(na.right, na.right, out);
      } else {
        collect_pairs(na.right, b, out);
      }
      return;
    }
    collect_pairs(na.left, nb.left, out);
    collect_pairs(na.left, nb.right, out);
    collect_pairs(na.right, nb.left, out);
    collect_pairs(na.right, nb.right, out);
  }

  const Mesh& mesh_;
  std::vector<Aabb> boxes_;
  std::vector<BvhNode> nodes_;
  int root_ = -1;
};

// Moller-style triangle-triangle intersection test.
bool tri_tri_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2, const Vec3& b0,
                       const Vec3& b1, const Vec3& b2) {
  const Vec3 na = (a1 - a0).cross(a2 - a0);
  double db0 = na.dot(b0 - a0), db1 = na.dot(b1 - a0), db2 = na.dot(b2 - a0);
  if ((db0 > 0 && db1 > 0 && db2 > 0) || (db0 < 0 && db1 < 0 && db2 < 0)) return false;
  const Vec3 nb = (b1 - b0).cross(b2 - b0);
  double da0 = nb.dot(a0 - b0), da1 = nb.dot(a1 - b0), da2 = nb.dot(a2 - b0);
  if ((da0 > 0 && da1 > 0 && da2 > 0) || (da0 < 0 && da1 < 0 && da2 < 0)) return false;

  const Vec3 d = na.cross(nb);
  const int axis = [&] {
    int ax = 0;
    if (std::abs(d.y()) > std::abs(d.x())) ax = 1;
    if (std::abs(d.z()) > std::abs(d[ax])) ax = 2;
    return ax;
  }();

  // interval of triangle X on the intersection line
  auto interval = [&](const Vec3& p0, const Vec3& p1, const Vec3& p2, double d0, double d1,
                      double d2, double* t0, double* t1) {
    std::array<std::pair<double, double>, 3> pv = {
        {{p0[axis], d0}, {p1[axis], d1}, {p2[axis], d2}}};
    std::vector<double> ts;
    for (int i = 0; i < 3; ++i) {
      const auto& [pi, di] = pv[i];
      const auto& [pj, dj] = pv[(i + 1) % 3];
      if ((di > 0 && dj < 0) || (di < 0 && dj > 0)) {
        ts.push_back(pi + (pj - pi) * di / (di - dj));
      } else if (di == 0) {
        ts.push_back(pi);
      }
    }
    if (ts.empty()) return false;
    *t0 = *std::min_element(ts.begin(), ts.end());
    *t1 = *std::max_element(ts.begin(), ts.end());
    return true;
  };
  double s0, s1, t0, t1;
  if (!interval(a0, a1, a2, da0, da1, da2, &s0, &s1)) return false;
  if (!interval(b0, b1, b2, db0, db1, db2, &t0, &t1)) return false;
  return std::max(s0, t0) <= std::min(s1, t1);
}

double vertex_depth_behind(const Vec3& v, const Vec3& g0, const Vec3& ng_unit) {
  return std::max(0.0, -(v - g0).dot(ng_unit));
}

}  // namespace

double intersection_loss(const Mesh& mesh, const std::vector<Obb>& colliders) {
  return intersection_loss_backward(mesh, colliders, nullptr);
}

double intersection_loss_backward(const Mesh& mesh, const std::vector<Obb>& colliders,
                                  MatX3* d_vertices) {
  const MatX3i& F = mesh.faces();
  const MatX3& V = mesh.vertices;
  if (d_vertices) *d_vertices = MatX3::Zero(V.rows(), 3);
  double loss = 0;

  if (F.rows() > 0) {
    TriBvh bvh(mesh);
    const auto pairs = bvh.candidate_self_pairs();
    for (const auto& [fa, fb] : pairs) {
      const Vec3 a0 = V.row(F(fa, 0)), a1 = V.row(F(fa, 1)), a2 = V.row(F(fa, 2));
      const Vec3 b0 = V.row(F(fb, 0)), b1 = V.row(F(fb, 1)), b2 = V.row(F(fb, 2));
      const Vec3 na = (a1 - a0).cross(a2 - a0), nb = (b1 - b0).cross(b2 - b0);
      if (na.norm() < 1e-20 || nb.norm() < 1e-20) continue;  // degenerate
      if (!tri_tri_intersect(a0, a1, a2, b0, b1, b2)) continue;

      // penetration of each face's vertices behind the opposing plane
      auto accumulate = [&](int face_pen, int face_plane) {
        const Vec3 p0 = V.row(F(face_plane, 0)), p1 = V.row(F(face_plane, 1)),
                   p2 = V.row(F(face_plane, 2));
        const Vec3 c = (p1 - p0).cross(p2 - p0);
        const double cn = c.norm();
        const Vec3 n = c / cn;
        for (int k = 0; k < 3; ++k) {
          const int vi = F(face_pen, k);
          const Vec3 v = V.row(vi);
          const double depth = vertex_depth_behind(v, p0, n);
          if (depth <= 0) continue;
          loss += depth;
          if (!d_vertices) continue;
          // depth = -(v - p0) . n
          d_vertices->row(vi) += (-n).transpose();
          // d/dp0: +n + (v-p0) . dn/dp0 term via chain below
          const Vec3 w = v - p0;
          // dn/dc = (I - n n^T)/|c|
          const Mat3 dn_dc = (Mat3::Identity() - n * n.transpose()) / cn;
          // c = (p1-p0) x (p2-p0)
          // dc/dp1 = -skew(p2-p0), dc/dp2 = skew(p1-p0), dc/dp0 = skew(p2-p1)
          auto skew = [](const Vec3& u) {
            Mat3 K;
            K << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
            return K;
          };
          const Vec3 dd_dn = -w;  // d(depth)/dn
          const Vec3 g_c = dn_dc.transpose() * dd_dn;
          d_vertices->row(F(face_plane, 0)) +=
              (n + skew(p2 - p1).transpose() * g_c).transpose();
          d_vertices->row(F(face_plane, 1)) += ((-skew(p2 - p0)).transpose() * g_c).transpose();
          d_vertices->row(F(face_plane, 2)) += (skew(p1 - p0).transpose() * g_c).transpose();
        }
      };
      accumulate(fa, fb);
      accumulate(fb, fa);
    }
  }

  // vertices inside collider boxes: squared exit distance
  for (const auto& box : colliders) {
    for (int i = 0; i < V.rows(); ++i) {
      const Vec3 local = box.axes.transpose() * (Vec3(V.row(i)) - box.center);
      bool inside = true;
      for (int a = 0; a < 3; ++a)
        if (std::abs(local[a]) >= box.half_extents[a]) {
          inside = false;
          break;
        }
      if (!inside) continue;
      int best_axis = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        const double m = box.half_extents[a] - std::abs(local[a]);
        if (m < best) {
          best = m;
          best_axis = a;
        }
      }
      loss += best * best;
      if (d_vertices) {
        const double sgn = local[best_axis] >= 0 ? 1.0 : -1.0;
        d_vertices->row(i) +=
            (-2.0 * best * sgn * box.axes.col(best_axis)).transpose();
      }
    }
  }
  return loss;
}

// ----------------------------------------------------------------------------
// Regularizers

double arap_loss(const Mesh& mesh_star, const Mesh& mesh_ref) {
  return arap_loss_backward(mesh_star, mesh_ref, nullptr);
}

double arap_loss_backward(const Mesh& mesh_star, const Mesh& mesh_ref, MatX3* d_vertices) {
  if (mesh_star.topology != mesh_ref.topology &&
      (mesh_star.faces().rows() != mesh_ref.faces().rows() ||
       mesh_star.faces() != mesh_ref.faces()))
    throw std::invalid_argument("arap_loss: topology mismatch");
  const auto& edges = mesh_star.topology->edges;
  if (edges.empty()) return 0.0;
  if (d_vertices) *d_vertices = MatX3::Zero(mesh_star.vertices.rows(), 3);
  double sum = 0;
  for (const auto& [i, j] : edges) {
    const Vec3 e_star = mesh_star.vertices.row(i) - mesh_star.vertices.row(j);
    const Vec3 e_ref = mesh_ref.vertices.row(i) - mesh_ref.vertices.row(j);
    const double ls = e_star.norm(), lr = e_ref.norm();
    const double diff = ls - lr;
    sum += 2.0 * std::abs(diff);  // double sum counts each undirected edge twice
    if (d_vertices && ls > 1e-18 && diff != 0.0) {
      const double s = diff > 0 ? 1.0 : -1.0;
      const Vec3 g = (2.0 * s / edges.size()) * (e_star / ls);
      d_vertices->row(i) += g.transpose();
      d_vertices->row(j) -= g.transpose();
    }
  }
  return sum / edges.size();
}

double laplacian_loss(const Mesh& mesh) { return laplacian_loss_backward(mesh, nullptr); }

double laplacian_loss_backward(const Mesh& mesh, MatX3* d_vertices) {
  const auto& nbrs = mesh.topology->vertex_neighbors;
  const int V = static_cast<int>(mesh.vertices.rows());
  if (d_vertices) *d_vertices = MatX3::Zero(V, 3);
  double sum = 0;
  for (int i = 0; i < V && i < static_cast<int>(nbrs.size()); ++i) {
    if (nbrs[i].empty()) continue;  // isolated vertices contribute 0
    Vec3 mean = Vec3::Zero();
    for (int j : nbrs[i]) mean += Vec3(mesh.vertices.row(j));
    mean /= nbrs[i].size();
    const Vec3 lap = Vec3(mesh.vertices.row(i)) - mean;
    sum += lap.squaredNorm();
    if (d_vertices) {
      d_vertices->row(i) += (2.0 / V) * lap.transpose();
      for (int j : nbrs[i])
        d_vertices->row(j) -= (2.0 / (V * double(nbrs[i].size()))) * lap.transpose();
    }
  }
  return V > 0 ? sum / V : 0.0;
}

double normal_consistency_loss(const Mesh& mesh) {
  return normal_consistency_loss_backward(mesh, nullptr);
}

double normal_consistency_loss_backward(const Mesh& mesh, MatX3* d_vertices) {
  const auto& pairs = mesh.topology->adjacent_faces;
  const MatX3i& F = mesh.faces();
  const MatX3& V = mesh.vertices;
  if (d_vertices) *d_vertices = MatX3::Zero(V.rows(), 3);
  if (pairs.empty()) return 0.0;
  auto face_normal = [&](int f, Vec3* c_out, double* cn_out) {
    const Vec3 a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
    const Vec3 cr = (b - a).cross(c - a);
    *c_out = cr;
    *cn_out = cr.norm();
    return Vec3(cr / std::max(*cn_out, 1e-300));
  };
  auto skew = [](const Vec3& u) {
    Mat3 K;
    K << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
    return K;
  };
  double sum = 0;
  for (const auto& [fa, fb] : pairs) {
    Vec3 ca, cb;
    double na_n, nb_n;
    const Vec3 na = face_normal(fa, &ca, &na_n);
    const Vec3 nb = face_normal(fb, &cb, &nb_n);
    if (na_n < 1e-20 || nb_n < 1e-20) continue;
    sum += 1.0 - na.dot(nb);
    if (!d_vertices) continue;
    const double scale = -1.0 / pairs.size();
    // d(na . nb)/d(vertices of fa): dn/dc = (I - n n^T)/|c|
    auto add_face_grad = [&](int f, const Vec3& n, double cn, const Vec3& other_n) {
      const Mat3 dn_dc = (Mat3::Identity() - n * n.transpose()) / cn;
      const Vec3 g_c = dn_dc.transpose() * (scale * other_n);
      const Vec3 a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
      d_vertices->row(F(f, 0)) += (skew(c - b).transpose() * g_c).transpose();
      d_vertices->row(F(f, 1)) += ((-skew(c - a)).transpose() * g_c).transpose();
      d_vertices->row(F(f, 2)) += (skew(b - a).transpose() * g_c).transpose();
    };
    add_face_grad(fa, na, na_n, nb);
    add_face_grad(fb, nb, nb_n, na);
  }
  return sum / pairs.size();
}

double temporal_loss(const std::vector<MatX3>& joint_trajectories) {
  return temporal_loss_backward(joint_trajectories, nullptr);
}

double temporal_loss_backward(const std::vector<MatX3>& joint_trajectories,
                              std::vector<MatX3>* d_joints) {
  const int B = static_cast<int>(joint_trajectories.size());
  if (B < 3) throw std::invalid_argument("temporal_loss: needs at least 3 frames");
  if (d_joints) {
    d_joints->assign(B, MatX3::Zero(joint_trajectories[0].rows(), 3));
  }
  double sum = 0;
  const double inv = 1.0 / (B - 2);
  for (int i = 0; i + 2 < B; ++i) {
    const MatX3 D = joint_trajectories[i + 2] - 2.0 * joint_trajectories[i + 1] +
                    joint_trajectories[i];
    const double n = D.norm();  // Frobenius
    sum += n;
    if (d_joints && n > 1e-18) {
      const MatX3 g = (inv / n) * D;
      (*d_joints)[i] += g;
      (*d_joints)[i + 1] -= 2.0 * g;
      (*d_joints)[i + 2] += g;
    }
  }
  return sum * inv;
}

// ----------------------------------------------------------------------------
// Virtual render objective

VirtualRenderLoss virtual_render_loss(const VirtualRender& vr, const PressureFrame& gt,
                                      const PadGeometry& pad) {
  return virtual_render_loss_backward(vr, gt, pad, 1.0, 1.0, nullptr, nullptr);
}

VirtualRenderLoss virtual_render_loss_backward(const VirtualRender& vr,
                                               const PressureFrame& gt,
                                               const PadGeometry& pad,
                                               double w_pressure, double w_contact,
                                               ImageD* d_pressure, ImageD* d_depth) {
  if (vr.pressure.width() != gt.grid.width() || vr.pressure.height() != gt.grid.height())
    throw std::invalid_argument("virtual_render_loss: sensel raster mismatch");
  const int W = gt.grid.width(), H = gt.grid.height();
  if (d_pressure) *d_pressure = ImageD(W, H, 1, 0.0);
  if (d_depth) *d_depth = ImageD(W, H, 1, 0.0);

  VirtualRenderLoss out;
  const double n_cells = double(W) * H;
  // contact pixels covered by the render
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (gt.grid.at(x, y) > kContactThresholdPa) {
        ++out.contact_pixels;
        if (vr.face_id.at(x, y) < 0) ++out.uncovered_contact_pixels;
      }
  const int covered = out.contact_pixels - out.uncovered_contact_pixels;

  double mse = 0, l1 = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double diff = vr.pressure.at(x, y) - gt.grid.at(x, y);
      mse += diff * diff;
      if (d_pressure) d_pressure->at(x, y) = w_pressure * 2.0 * diff / n_cells;
      if (gt.grid.at(x, y) > kContactThresholdPa && vr.face_id.at(x, y) >= 0) {
        const double gap = vr.depth.at(x, y) - pad.camera_plane_offset;
        l1 += std::abs(gap);
        if (d_depth && covered > 0)
          d_depth->at(x, y) = w_contact * (gap >= 0 ? 1.0 : -1.0) / covered;
      }
    }
  }
  out.pressure_mse = mse / n_cells;
  out.contact_l1 = covered > 0 ? l1 / covered : 0.0;
  out.total = out.pressure_mse + out.contact_l1;
  return out;
}

}  // namespace handpress
