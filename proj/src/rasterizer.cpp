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
#include "handpress/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace handpress {
namespace {

struct ScreenVert {
  double u = 0, v = 0, z = 0;
  bool valid = false;
};

struct FaceEntry {
  int idx;                 // face index in the mesh
  Vec2 p[3];               // screen positions
  double z[3];
  bool hard;               // contributes depth/feature
  double xmin, xmax, ymin, ymax;
};

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Edge functions: e[k] is twice the signed area of (p[k+1], p[k+2], q).
void edge_functions(const Vec2 p[3], const Vec2& q, double e[3], double* area) {
  e[0] = cross2(p[2] - p[1], q - p[1]);
  e[1] = cross2(p[0] - p[2], q - p[2]);
  e[2] = cross2(p[1] - p[0], q - p[0]);
  *area = cross2(p[1] - p[0], p[2] - p[0]);
}

bool inside_tri(const double e[3], double area) {
  if (area > 0) return e[0] >= 0 && e[1] >= 0 && e[2] >= 0;
  return e[0] <= 0 && e[1] <= 0 && e[2] <= 0;
}

// Signed distance from q to the triangle boundary: positive inside. Also the
// closest segment (edge index) and the clamped parameter on it. Works in
// pixel-relative coordinates so the result is translation-invariant bit for
// bit (integer-pixel shifts reproduce exactly).
double signed_boundary_distance(const Vec2 p[3], const Vec2& q, int* edge, double* tpar) {
  const Vec2 r[3] = {p[0] - q, p[1] - q, p[2] - q};
  double best = std::numeric_limits<double>::infinity();
  int bi = 0;
  double bt = 0;
  for (int k = 0; k < 3; ++k) {
    const Vec2 a = r[k], b = r[(k + 1) % 3];
    const Vec2 u = b - a;
    const double L2 = u.squaredNorm();
    double t = L2 > 0 ? -a.dot(u) / L2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 c = a + t * u;
    const double d = c.norm();
    if (d < best) {
      best = d;
      bi = k;
      bt = t;
    }
  }
  double e[3], area;
  edge_functions(p, q, e, &area);
  *edge = bi;
  *tpar = bt;
  return inside_tri(e, area) ? best : -best;
}

// d(signed distance)/d(segment endpoints) for the closest feature.
void boundary_distance_grad(const Vec2& a, const Vec2& b, const Vec2& q, double t,
                            double sign, Vec2* da, Vec2* db) {
  if (t <= 0.0) {
    const Vec2 d = a - q;
    const double n = d.norm();
    *da = n > 1e-18 ? Vec2(sign * d / n) : Vec2(0, 0);
    *db = Vec2(0, 0);
    return;
  }
  if (t >= 1.0) {
    const Vec2 d = b - q;
    const double n = d.norm();
    *db = n > 1e-18 ? Vec2(sign * d / n) : Vec2(0, 0);
    *da = Vec2(0, 0);
    return;
  }
  const Vec2 u = b - a, w = q - a;
  const double L = u.norm();
  if (L < 1e-18) {
    *da = *db = Vec2(0, 0);
    return;
  }
  const double s = cross2(u, w);
  const double ss = s >= 0 ? 1.0 : -1.0;
  // d = |s| / L
  const Vec2 ds_da(u.y() - w.y(), w.x() - u.x());
  const Vec2 ds_db(w.y(), -w.x());
  const Vec2 dL_da = -u / L;
  const Vec2 dL_db = u / L;
  const double d = std::abs(s) / L;
  *da = sign * (ss * ds_da / L - d * dL_da / L);
  *db = sign * (ss * ds_db / L - d * dL_db / L);
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Truncated sigmoid rescaled to reach exactly 0/1 at the cutoff, so the mask
// is C0 in the vertex positions (no jump at the truncation ring).
double soft_coverage(double d, double sigma, double cutoff) {
  if (d <= -cutoff * sigma) return 0.0;
  if (d >= cutoff * sigma) return 1.0;
  const double s_c = sigmoid(-cutoff);
  return (sigmoid(d / sigma) - s_c) / (1.0 - 2.0 * s_c);
}

double soft_coverage_ddist(double d, double sigma, double cutoff) {
  if (d <= -cutoff * sigma || d >= cutoff * sigma) return 0.0;
  const double s_c = sigmoid(-cutoff);
  const double p = sigmoid(d / sigma);
  return p * (1.0 - p) / (sigma * (1.0 - 2.0 * s_c));
}

struct Prep {
  std::vector<ScreenVert> verts;
  std::vector<FaceEntry> faces;        // usable faces only
  std::vector<std::vector<int>> tile_hard;  // indices into `faces`
  std::vector<std::vector<int>> tile_soft;
  int tiles_x = 0, tiles_y = 0;
  int width = 0, height = 0;
};

// Facing of a face for depth/feature selection, from 3D geometry.
bool face_is_front(const Mesh& mesh, int f, const CameraModel* camera, const Vec3* pad_normal) {
  const MatX3i& F = mesh.faces();
  const Vec3 a = mesh.vertices.row(F(f, 0)), b = mesh.vertices.row(F(f, 1)),
             c = mesh.vertices.row(F(f, 2));
  const Vec3 n = (b - a).cross(c - a);
  if (pad_normal) return n.dot(*pad_normal) < 0;  // pad-facing underside
  if (camera->kind == CameraKind::kPerspective)
    return n.dot(a - camera->center()) < 0;
  return n.dot(camera->view_direction()) < 0;
}

void prepare(const Mesh& mesh, const std::vector<ScreenVert>& sv, int width, int height,
             const RasterizerOptions& opts,
             const std::function<bool(int)>& is_front, Prep* prep) {
  prep->verts = sv;
  prep->width = width;
  prep->height = height;
  const int tile = opts.tile;
  prep->tiles_x = (width + tile - 1) / tile;
  prep->tiles_y = (height + tile - 1) / tile;
  prep->tile_hard.assign(static_cast<size_t>(prep->tiles_x) * prep->tiles_y, {});
  prep->tile_soft.assign(static_cast<size_t>(prep->tiles_x) * prep->tiles_y, {});
  const MatX3i& F = mesh.faces();
  const double expand = opts.cutoff * opts.sigma + 1.0;
  for (int f = 0; f < F.rows(); ++f) {
    const ScreenVert& a = sv[F(f, 0)];
    const ScreenVert& b = sv[F(f, 1)];
    const ScreenVert& c = sv[F(f, 2)];
    if (!a.valid || !b.valid || !c.valid) continue;
    FaceEntry e;
    e.idx = f;
    e.p[0] = Vec2(a.u, a.v);
    e.p[1] = Vec2(b.u, b.v);
    e.p[2] = Vec2(c.u, c.v);
    e.z[0] = a.z;
    e.z[1] = b.z;
    e.z[2] = c.z;
    const double area = cross2(e.p[1] - e.p[0], e.p[2] - e.p[0]);
    if (std::abs(area) < 1e-14) continue;  // degenerate: contributes nothing
    const bool front = is_front(f);
    switch (opts.facing) {
      case RasterizerOptions::Facing::kFront: e.hard = front; break;
      case RasterizerOptions::Facing::kBack: e.hard = !front; break;
      case RasterizerOptions::Facing::kAll: e.hard = true; break;
    }
    e.xmin = std::min({e.p[0].x(), e.p[1].x(), e.p[2].x()});
    e.xmax = std::max({e.p[0].x(), e.p[1].x(), e.p[2].x()});
    e.ymin = std::min({e.p[0].y(), e.p[1].y(), e.p[2].y()});
    e.ymax = std::max({e.p[0].y(), e.p[1].y(), e.p[2].y()});
    const int fi = static_cast<int>(prep->faces.size());
    prep->faces.push_back(e);

    auto bin = [&](double x0, double x1, double y0, double y1,
                   std::vector<std::vector<int>>& tiles) {
      const int tx0 = std::clamp(static_cast<int>(std::floor(x0 / tile)), 0, prep->tiles_x - 1);
      const int tx1 = std::clamp(static_cast<int>(std::floor(x1 / tile)), 0, prep->tiles_x - 1);
      const int ty0 = std::clamp(static_cast<int>(std::floor(y0 / tile)), 0, prep->tiles_y - 1);
      const int ty1 = std::clamp(static_cast<int>(std::floor(y1 / tile)), 0, prep->tiles_y - 1);
      if (x1 < 0 || y1 < 0 || x0 >= width || y0 >= height) return;
      for (int ty = ty0; ty <= ty1; ++ty)
        for (int tx = tx0; tx <= tx1; ++tx) tiles[ty * prep->tiles_x + tx].push_back(fi);
    };
    if (e.hard) bin(e.xmin, e.xmax, e.ymin, e.ymax, prep->tile_hard);
    if (opts.soft_mask)
      bin(e.xmin - expand, e.xmax + expand, e.ymin - expand, e.ymax + expand,
          prep->tile_soft);
  }
}

static RenderOutput rasterize_core(const Mesh& mesh, const Prep& prep, const Texture* texture,
                                   const RasterizerOptions& opts) {
  const int W = prep.width, H = prep.height;
  const int C = texture ? texture->channels() : 0;
  RenderOutput out;
  out.mask = ImageD(W, H, 1, 0.0);
  out.depth = ImageD(W, H, 1, 0.0);
  out.feature = ImageD(W, H, std::max(C, 1), 0.0);
  out.face_id = ImageI(W, H, 1, -1);

  const MatX3i& F = mesh.faces();
  const MatX2& uvs = mesh.topology->uv;
  const int n_tiles = prep.tiles_x * prep.tiles_y;

  parallel_for(n_tiles, [&](int64_t t0, int64_t t1) {
    for (int64_t ti = t0; ti < t1; ++ti) {
      const int tx = static_cast<int>(ti) % prep.tiles_x;
      const int ty = static_cast<int>(ti) / prep.tiles_x;
      const int x0 = tx * opts.tile, x1 = std::min(W, x0 + opts.tile);
      const int y0 = ty * opts.tile, y1 = std::min(H, y0 + opts.tile);

      // hard pass: nearest face, ties to the lower face index
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const Vec2 q(x + 0.5, y + 0.5);
          double best_z = opts.farthest ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
          int best = -1;
          double bw[3] = {0, 0, 0};
          for (const int fi : prep.tile_hard[ti]) {
            const FaceEntry& e = prep.faces[fi];
            if (q.x() < e.xmin || q.x() > e.xmax || q.y() < e.ymin || q.y() > e.ymax)
              continue;
            double ef[3], area;
            edge_functions(e.p, q, ef, &area);
            if (!inside_tri(ef, area)) continue;
            const double w0 = ef[0] / area, w1 = ef[1] / area, w2 = ef[2] / area;
            const double z = w0 * e.z[0] + w1 * e.z[1] + w2 * e.z[2];
            if (opts.farthest ? z > best_z : z < best_z) {
              best_z = z;
              best = fi;
              bw[0] = w0;
              bw[1] = w1;
              bw[2] = w2;
            }
          }
          if (best >= 0) {
            const FaceEntry& e = prep.faces[best];
            out.depth.at(x, y) = best_z;
            out.face_id.at(x, y) = e.idx;
            if (texture) {
              double u = 0, v = 0;
              for (int k = 0; k < 3; ++k) {
                u += bw[k] * uvs(3 * e.idx + k, 0);
                v += bw[k] * uvs(3 * e.idx + k, 1);
              }
              for (int c = 0; c < C; ++c)
                out.feature.at(x, y, c) = texture->sample(u, v, c);
            }
          }
        }
      }

      // soft silhouette pass
      if (opts.soft_mask) {
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const Vec2 q(x + 0.5, y + 0.5);
            double prod = 1.0;
            for (const int fi : prep.tile_soft[ti]) {
              const FaceEntry& e = prep.faces[fi];
              int edge;
              double tp;
              const double d = signed_boundary_distance(e.p, q, &edge, &tp);
              const double p = soft_coverage(d, opts.sigma, opts.cutoff);
              if (p == 0.0) continue;
              prod *= (1.0 - p);
              if (prod == 0.0) break;
            }
            out.mask.at(x, y) = 1.0 - prod;
          }
        }
      } else {
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            out.mask.at(x, y) = out.face_id.at(x, y) >= 0 ? 1.0 : 0.0;
      }
    }
  });
  (void)F;
  return out;
}

namespace {

Prep prepare_camera(const Mesh& mesh, const CameraModel& camera,
                    const RasterizerOptions& opts) {
  try {
    camera.validate();
  } catch (const DataError& e) {
    throw std::invalid_argument(e.what());
  }
  const int V = mesh.num_vertices();
  std::vector<ScreenVert> sv(V);
  for (int i = 0; i < V; ++i) {
    const Projection pr = project(camera, Vec3(mesh.vertices.row(i)));
    sv[i].valid = camera.kind == CameraKind::kOrthographic || pr.depth > opts.near_clip;
    sv[i].u = pr.pixel.x();
    sv[i].v = pr.pixel.y();
    sv[i].z = pr.depth;
  }
  Prep prep;
  prepare(mesh, sv, camera.width, camera.height, opts,
          [&](int f) { return face_is_front(mesh, f, &camera, nullptr); }, &prep);
  return prep;
}

}  // namespace
}  // namespace

RenderOutput rasterize(const Mesh& mesh, const CameraModel& camera, const Texture* texture,
                       const RasterizerOptions& opts) {
  if (mesh.num_vertices() == 0 || mesh.faces().rows() == 0) {
    RenderOutput out;
    out.mask = ImageD(camera.width, camera.height, 1, 0.0);
    out.depth = ImageD(camera.width, camera.height, 1, 0.0);
    out.feature = ImageD(camera.width, camera.height, texture ? texture->channels() : 1, 0.0);
    out.face_id = ImageI(camera.width, camera.height, 1, -1);
    return out;
  }
  const Prep prep = prepare_camera(mesh, camera, opts);
  return rasterize_core(mesh, prep, texture, opts);
}

// ----------------------------------------------------------------------------
// Backward

namespace {

struct ScreenGrad {
  // dL/d(screen u, v, z) accumulated per vertex
  MatX3 g;  // V x 3
  ImageD d_texture;
};

void backward_core(const Mesh& mesh, const Prep& prep, const Texture* texture,
                   const RasterizerOptions& opts, const ImageD* d_mask,
                   const ImageD* d_depth, const ImageD* d_feature,
                   const RenderOutput* forward, ScreenGrad* sg) {
  const int W = prep.width, H = prep.height;
  const int V = mesh.num_vertices();
  const MatX3i& F = mesh.faces();
  const MatX2& uvs = mesh.topology->uv;
  const int C = texture ? texture->channels() : 0;

  sg->g = MatX3::Zero(V, 3);
  if (texture)
    sg->d_texture = ImageD(texture->values.width(), texture->values.height(),
                           texture->values.channels(), 0.0);

  // Hard channels (depth/feature/texture): single pass, sequential; the work
  // is proportional to covered pixels only.
  if (d_depth || d_feature) {
    RenderOutput recomputed;
    if (!forward) {
      RasterizerOptions hard_opts = opts;
      hard_opts.soft_mask = false;
      recomputed = rasterize_core(mesh, prep, nullptr, hard_opts);
    }
    const ImageI& face_ids = forward ? forward->face_id : recomputed.face_id;
    // map face index -> FaceEntry position
    std::vector<int> face_pos(F.rows(), -1);
    for (size_t i = 0; i < prep.faces.size(); ++i) face_pos[prep.faces[i].idx] = static_cast<int>(i);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int fidx = face_ids.at(x, y);
        if (fidx < 0) continue;
        const FaceEntry& e = prep.faces[face_pos[fidx]];
        const Vec2 q(x + 0.5, y + 0.5);
        double ef[3], area;
        edge_functions(e.p, q, ef, &area);
        const double w[3] = {ef[0] / area, ef[1] / area, ef[2] / area};

        // derivatives of edge functions w.r.t. screen vertex positions
        // e0 = cross(p2-p1, q-p1), cyclic; dA = sum of de_k
        Vec2 de[3][3];  // de[k][vertex]
        for (int k = 0; k < 3; ++k) {
          const int i1 = (k + 1) % 3, i2 = (k + 2) % 3;
          const Vec2 a = e.p[i2] - e.p[i1];  // u in cross(u, w)
          const Vec2 wv = q - e.p[i1];
          de[k][i1] = Vec2(-wv.y() + a.y(), wv.x() - a.x());
          de[k][i2] = Vec2(wv.y(), -wv.x());
          de[k][k] = Vec2(0, 0);
        }
        Vec2 dA[3];
        for (int m = 0; m < 3; ++m) dA[m] = de[0][m] + de[1][m] + de[2][m];

        // dw_k/dp_m = (de_k/dp_m - w_k dA/dp_m) / A
        auto dw = [&](int k, int m) { return Vec2((de[k][m] - w[k] * dA[m]) / area); };

        const double gd = d_depth ? d_depth->at(x, y) : 0.0;
        if (gd != 0.0) {
          for (int m = 0; m < 3; ++m) {
            const int vi = F(fidx, m);
            Vec2 guv = Vec2::Zero();
            for (int k = 0; k < 3; ++k) guv += e.z[k] * dw(k, m);
            sg->g(vi, 0) += gd * guv.x();
            sg->g(vi, 1) += gd * guv.y();
            sg->g(vi, 2) += gd * w[m];
          }
        }
        if (d_feature && texture) {
          double u = 0, v = 0;
          for (int k = 0; k < 3; ++k) {
            u += w[k] * uvs(3 * fidx + k, 0);
            v += w[k] * uvs(3 * fidx + k, 1);
          }
          // bilinear sample internals at (u * tw, v * th)
          const int tw = texture->values.width(), th = texture->values.height();
          const double fx = u * tw - 0.5, fy = v * th - 0.5;
          int x0 = static_cast<int>(std::floor(fx)), y0i = static_cast<int>(std::floor(fy));
          const double ax = fx - x0, ay = fy - y0i;
          const auto cl = [](int vv, int hi) { return vv < 0 ? 0 : (vv >= hi ? hi - 1 : vv); };
          const int x1 = cl(x0 + 1, tw), y1 = cl(y0i + 1, th);
          x0 = cl(x0, tw);
          y0i = cl(y0i, th);
          for (int c = 0; c < C; ++c) {
            const double gf = d_feature->at(x, y, c);
            if (gf == 0.0) continue;
            // texel gradients
            sg->d_texture.at(x0, y0i, c) += gf * (1 - ax) * (1 - ay);
            sg->d_texture.at(x1, y0i, c) += gf * ax * (1 - ay);
            sg->d_texture.at(x0, y1, c) += gf * (1 - ax) * ay;
            sg->d_texture.at(x1, y1, c) += gf * ax * ay;
            // uv gradients through the bilinear weights (piecewise linear)
            const double t00 = texture->values.at(x0, y0i, c), t10 = texture->values.at(x1, y0i, c);
            const double t01 = texture->values.at(x0, y1, c), t11 = texture->values.at(x1, y1, c);
            const double dfdu = ((1 - ay) * (t10 - t00) + ay * (t11 - t01)) * tw;
            const double dfdv = ((1 - ax) * (t01 - t00) + ax * (t11 - t10)) * th;
            for (int m = 0; m < 3; ++m) {
              const int vi = F(fidx, m);
              Vec2 du_m = Vec2::Zero(), dv_m = Vec2::Zero();
              for (int k = 0; k < 3; ++k) {
                const Vec2 dwm = dw(k, m);
                du_m += uvs(3 * fidx + k, 0) * dwm;
                dv_m += uvs(3 * fidx + k, 1) * dwm;
              }
              const Vec2 gpix = gf * (dfdu * du_m + dfdv * dv_m);
              sg->g(vi, 0) += gpix.x();
              sg->g(vi, 1) += gpix.y();
            }
          }
        }
      }
    }
  }

  // Soft mask: tile-parallel with per-tile gradient buffers merged in order.
  if (d_mask && opts.soft_mask) {
    const int n_tiles = prep.tiles_x * prep.tiles_y;
    std::vector<MatX3> tile_g(n_tiles);
    parallel_for(n_tiles, [&](int64_t t0, int64_t t1) {
      std::vector<std::pair<int, double>> contrib;  // (face slot, p)
      for (int64_t ti = t0; ti < t1; ++ti) {
        if (prep.tile_soft[ti].empty()) continue;
        MatX3& G = tile_g[ti];
        G = MatX3::Zero(V, 3);
        const int tx = static_cast<int>(ti) % prep.tiles_x;
        const int ty = static_cast<int>(ti) / prep.tiles_x;
        const int x0 = tx * opts.tile, x1 = std::min(W, x0 + opts.tile);
        const int y0 = ty * opts.tile, y1 = std::min(H, y0 + opts.tile);
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const double gm = d_mask->at(x, y);
            if (gm == 0.0) continue;
            const Vec2 q(x + 0.5, y + 0.5);
            contrib.clear();
            int zeros = 0;
            double prod_nz = 1.0;  // product over non-zero (1 - p)
            for (const int fi : prep.tile_soft[ti]) {
              const FaceEntry& e = prep.faces[fi];
              int edge;
              double tp;
              const double d = signed_boundary_distance(e.p, q, &edge, &tp);
              const double p = soft_coverage(d, opts.sigma, opts.cutoff);
              if (p == 0.0) continue;
              if (p == 1.0)
                ++zeros;
              else
                prod_nz *= (1.0 - p);
              contrib.emplace_back(fi, d);
            }
            if (zeros >= 2) continue;  // all exclusion products vanish
            // dL/dp_f = gm * prod_{g != f} (1 - p_g)
            for (const auto& [fi, d] : contrib) {
              const FaceEntry& e = prep.faces[fi];
              const double p = soft_coverage(d, opts.sigma, opts.cutoff);
              const double om = 1.0 - p;
              double excl;
              if (zeros == 1) {
                if (om != 0.0) continue;  // some other face saturates
                excl = prod_nz;
              } else {
                if (om == 0.0) continue;
                excl = prod_nz / om;
              }
              const double dp_dd = soft_coverage_ddist(d, opts.sigma, opts.cutoff);
              const double gd = gm * excl * dp_dd;
              if (gd == 0.0) continue;
              int edge;
              double tp;
              signed_boundary_distance(e.p, q, &edge, &tp);
              const double sign = d >= 0 ? 1.0 : -1.0;
              Vec2 da, db;
              boundary_distance_grad(e.p[edge], e.p[(edge + 1) % 3], q, tp, sign, &da, &db);
              const int va = F(e.idx, edge), vb = F(e.idx, (edge + 1) % 3);
              G(va, 0) += gd * da.x();
              G(va, 1) += gd * da.y();
              G(vb, 0) += gd * db.x();
              G(vb, 1) += gd * db.y();
            }
          }
        }
      }
    });
    for (int ti = 0; ti < n_tiles; ++ti)
      if (tile_g[ti].size() > 0) sg->g += tile_g[ti];
  }
}

}  // namespace

RenderGrad rasterize_backward(const Mesh& mesh, const CameraModel& camera,
                              const Texture* texture, const RasterizerOptions& opts,
                              const ImageD* d_mask, const ImageD* d_depth,
                              const ImageD* d_feature, const RenderOutput* forward) {
  RenderGrad out;
  out.d_vertices = MatX3::Zero(mesh.num_vertices(), 3);
  if (mesh.num_vertices() == 0 || mesh.faces().rows() == 0) return out;
  const Prep prep = prepare_camera(mesh, camera, opts);
  ScreenGrad sg;
  backward_core(mesh, prep, texture, opts, d_mask, d_depth, d_feature, forward, &sg);
  // chain screen-space gradients to world space
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if (!prep.verts[i].valid) continue;
    const Vec3 gs(sg.g(i, 0), sg.g(i, 1), sg.g(i, 2));
    if (gs.isZero(0)) continue;
    const Mat3 J = projection_jacobian(camera, Vec3(mesh.vertices.row(i)));
    out.d_vertices.row(i) = (J.transpose() * gs).transpose();
  }
  out.d_texture = std::move(sg.d_texture);
  return out;
}

// ----------------------------------------------------------------------------
// Depth culling

RenderOutput depth_cull(const RenderOutput& render, const ObstacleDepth& obstacles,
                        ImageU8* kept) {
  if (obstacles.depth.width() != render.width() ||
      obstacles.depth.height() != render.height())
    throw std::invalid_argument("depth_cull: raster size mismatch");
  RenderOutput out = render;
  if (kept) *kept = ImageU8(render.width(), render.height(), 1, 1);
  for (int y = 0; y < render.height(); ++y) {
    for (int x = 0; x < render.width(); ++x) {
      const double d_o = obstacles.depth.at(x, y);
      if (d_o > render.depth.at(x, y)) continue;  // M_dc: keep
      out.mask.at(x, y) = 0.0;
      out.depth.at(x, y) = 0.0;
      for (int c = 0; c < out.feature.channels(); ++c) out.feature.at(x, y, c) = 0.0;
      out.face_id.at(x, y) = -1;
      if (kept) kept->at(x, y) = 0;
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Pad geometry and virtual render

Obb PadGeometry::collision_box() const {
  Obb box;
  const Vec3 n = normal();
  box.center = center - 0.5 * thickness * n;
  box.axes.col(0) = u_dir;
  box.axes.col(1) = v_dir;
  box.axes.col(2) = n;
  box.half_extents = Vec3(extent.x() / 2, extent.y() / 2, thickness / 2);
  return box;
}

Obb PadGeometry::occluder_box(double recess) const {
  Obb box = collision_box();
  box.center -= recess * normal();
  return box;
}

Vec3 PadGeometry::to_pad_frame(const Vec3& world) const {
  const Vec3 corner = center - 0.5 * extent.x() * u_dir - 0.5 * extent.y() * v_dir;
  const Vec3 d = world - corner;
  return Vec3(d.dot(u_dir), d.dot(v_dir), d.dot(normal()));
}

namespace {

Prep prepare_pad(const Mesh& mesh, const PadGeometry& pad, const RasterizerOptions& opts) {
  const int V = mesh.num_vertices();
  const Vec3 n = pad.normal();
  std::vector<ScreenVert> sv(V);
  const double su = pad.cols / pad.extent.x(), svv = pad.rows / pad.extent.y();
  for (int i = 0; i < V; ++i) {
    const Vec3 pf = pad.to_pad_frame(Vec3(mesh.vertices.row(i)));
    sv[i].u = pf.x() * su;
    sv[i].v = pf.y() * svv;
    sv[i].z = pf.z();  // height above the pad plane
    sv[i].valid = true;
  }
  Prep prep;
  prepare(mesh, sv, pad.cols, pad.rows, opts,
          [&](int f) { return face_is_front(mesh, f, nullptr, &n); }, &prep);
  return prep;
}

RasterizerOptions pad_options() {
  RasterizerOptions opts;
  opts.soft_mask = false;
  opts.facing = RasterizerOptions::Facing::kFront;  // pad-facing per face_is_front
  opts.tile = 32;
  return opts;
}

}  // namespace

VirtualRender rasterize_under_pad(const Mesh& mesh, const PadGeometry& pad,
                                  const Texture* pressure_texture) {
  const RasterizerOptions opts = pad_options();
  VirtualRender vr;
  if (mesh.num_vertices() == 0 || mesh.faces().rows() == 0) {
    vr.pressure = ImageD(pad.cols, pad.rows, 1, 0.0);
    vr.depth = ImageD(pad.cols, pad.rows, 1, 0.0);
    vr.mask = ImageD(pad.cols, pad.rows, 1, 0.0);
    vr.face_id = ImageI(pad.cols, pad.rows, 1, -1);
    return vr;
  }
  const Prep prep = prepare_pad(mesh, pad, opts);
  RenderOutput r = rasterize_core(mesh, prep, pressure_texture, opts);
  vr.pressure = pressure_texture ? std::move(r.feature) : ImageD(pad.cols, pad.rows, 1, 0.0);
  vr.mask = std::move(r.mask);
  vr.face_id = std::move(r.face_id);
  vr.depth = ImageD(pad.cols, pad.rows, 1, 0.0);
  for (int y = 0; y < pad.rows; ++y)
    for (int x = 0; x < pad.cols; ++x)
      if (vr.face_id.at(x, y) >= 0)
        vr.depth.at(x, y) = pad.camera_plane_offset - r.depth.at(x, y);
  return vr;
}

VirtualGrad rasterize_under_pad_backward(const Mesh& mesh, const PadGeometry& pad,
                                         const Texture* pressure_texture,
                                         const ImageD* d_pressure, const ImageD* d_depth) {
  const RasterizerOptions opts = pad_options();
  VirtualGrad out;
  out.d_vertices = MatX3::Zero(mesh.num_vertices(), 3);
  if (mesh.num_vertices() == 0 || mesh.faces().rows() == 0) return out;
  const Prep prep = prepare_pad(mesh, pad, opts);
  // depth channel = Z_v2p - raw z: flip the upstream depth gradient
  ImageD d_depth_raw;
  if (d_depth) {
    d_depth_raw = *d_depth;
    for (auto& v : d_depth_raw.raw()) v = -v;
  }
  ScreenGrad sg;
  backward_core(mesh, prep, pressure_texture, opts, nullptr,
                d_depth ? &d_depth_raw : nullptr, d_pressure, nullptr, &sg);
  const Vec3 n = pad.normal();
  const double su = pad.cols / pad.extent.x(), svv = pad.rows / pad.extent.y();
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3 gs(sg.g(i, 0), sg.g(i, 1), sg.g(i, 2));
    if (gs.isZero(0)) continue;
    out.d_vertices.row(i) =
        (gs.x() * su * pad.u_dir + gs.y() * svv * pad.v_dir + gs.z() * n).transpose();
  }
  out.d_texture = std::move(sg.d_texture);
  return out;
}

// ----------------------------------------------------------------------------
// Obstacles

Mesh obb_mesh(const Obb& box) {
  Mesh m;
  MatX3 verts(8, 3);
  int vi = 0;
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2)
        verts.row(vi++) = (box.center + sx * box.half_extents.x() * box.axes.col(0) +
                           sy * box.half_extents.y() * box.axes.col(1) +
                           sz * box.half_extents.z() * box.axes.col(2))
                              .transpose();
  // vertex bits: (sx<<2)|(sy<<1)|sz with s in {0,1}
  static const int quads[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                                  {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
  MatX3i faces(12, 3);
  for (int f = 0; f < 6; ++f) {
    faces.row(2 * f) << quads[f][0], quads[f][1], quads[f][2];
    faces.row(2 * f + 1) << quads[f][0], quads[f][2], quads[f][3];
  }
  MatX2 uv = MatX2::Zero(36, 2);
  m.topology = MeshTopology::build(faces, uv);
  m.vertices = verts;
  m.recompute_normals();
  // ensure outward orientation
  double vol = 0;
  for (int f = 0; f < faces.rows(); ++f) {
    const Vec3 a = verts.row(faces(f, 0)), b = verts.row(faces(f, 1)), c = verts.row(faces(f, 2));
    vol += a.dot(b.cross(c)) / 6.0;
  }
  if (vol < 0) {
    MatX3i flipped = faces;
    for (int f = 0; f < faces.rows(); ++f) std::swap(flipped(f, 1), flipped(f, 2));
    m.topology = MeshTopology::build(flipped, uv);
    m.recompute_normals();
  }
  return m;
}

ObstacleDepth render_obstacles(const std::vector<Obb>& boxes, const CameraModel& camera) {
  ObstacleDepth od;
  od.depth = ImageD(camera.width, camera.height, 1, ObstacleDepth::kEmpty);
  RasterizerOptions opts;
  opts.soft_mask = false;
  opts.facing = RasterizerOptions::Facing::kAll;
  for (const auto& box : boxes) {
    const Mesh m = obb_mesh(box);
    const RenderOutput r = rasterize(m, camera, nullptr, opts);
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x)
        if (r.face_id.at(x, y) >= 0 && r.depth.at(x, y) < od.depth.at(x, y))
          od.depth.at(x, y) = r.depth.at(x, y);
  }
  return od;
}

}  // namespace handpress
