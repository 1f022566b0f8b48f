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

// Procedural test hand: a box palm with five square-section fingers extruded
// from wall sockets. Dimensions in millimeters during construction, converted
// to meters at the end. The mesh is a single closed 2-manifold.

#include <array>
#include <map>
#include <queue>
#include <set>
#include <tuple>

#include "handpress/hand_model.hpp"

namespace handpress {
namespace {

constexpr int kNx = 11, kNy = 10, kNz = 2;       // palm grid cells
constexpr double kPalmW = 80.0, kPalmL = 90.0, kPalmT = 20.0;
constexpr int kRings = 11;                        // finger segments
constexpr double kTaperTip = 0.62;

struct Builder {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2, 3>> face_uv;
  std::map<std::tuple<int, int, int>, int> grid;

  int grid_vertex(int ix, int iy, int iz) {
    auto key = std::make_tuple(ix, iy, iz);
    auto it = grid.find(key);
    if (it != grid.end()) return it->second;
    const Vec3 p(-kPalmW / 2 + kPalmW * ix / kNx, -kPalmL / 2 + kPalmL * iy / kNy,
                 -kPalmT / 2 + kPalmT * iz / kNz);
    verts.push_back(p);
    grid[key] = static_cast<int>(verts.size()) - 1;
    return grid[key];
  }

  int add_vertex(const Vec3& p) {
    verts.push_back(p);
    return static_cast<int>(verts.size()) - 1;
  }

  void tri(int a, int b, int c, const Vec2& ua, const Vec2& ub, const Vec2& uc) {
    faces.push_back({a, b, c});
    face_uv.push_back({ua, ub, uc});
  }

  void quad(int a, int b, int c, int d, const Vec2& ua, const Vec2& ub, const Vec2& uc,
            const Vec2& ud) {
    tri(a, b, c, ua, ub, uc);
    tri(a, c, d, ua, uc, ud);
  }
};

// UV islands, packed manually into [0,1]^2 with gutters.
struct IslandRect {
  double x0, y0, w, h;
  Vec2 map(double u, double v) const { return Vec2(x0 + u * w, y0 + v * h); }
};

const IslandRect kTop{0.02, 0.02, 0.28, 0.26};
const IslandRect kBottom{0.34, 0.02, 0.28, 0.26};
const IslandRect kWall[4] = {{0.66, 0.02, 0.32, 0.055},
                             {0.66, 0.095, 0.32, 0.055},
                             {0.66, 0.17, 0.32, 0.055},
                             {0.66, 0.245, 0.32, 0.055}};
IslandRect finger_tube(int f) { return {0.02 + 0.20 * f, 0.34, 0.16, 0.52}; }
IslandRect finger_tip(int f) { return {0.02 + 0.20 * f, 0.90, 0.08, 0.08}; }

struct Socket {
  std::array<int, 8> loop;      // boundary vertex indices, cyclic
  std::array<Vec3, 8> base_pos; // positions of the loop
  Vec3 center;
  Vec3 axis;
  double length;
};

struct FingerSpec {
  int wall;        // 0 = distal y+ wall, 1 = +x wall (thumb)
  int cell0;       // first cell along the wall direction
  double length;   // mm
  Vec3 axis;
};

const std::array<FingerSpec, 5> kFingers = {{
    {1, 4, 55.0, Vec3(0.819152, 0.573576, 0.0)},  // thumb, +x wall
    {0, 9, 65.0, Vec3(0, 1, 0)},                  // index
    {0, 6, 72.0, Vec3(0, 1, 0)},                  // middle
    {0, 3, 66.0, Vec3(0, 1, 0)},                  // ring
    {0, 0, 50.0, Vec3(0, 1, 0)},                  // pinky
}};

bool distal_socket(int ix, int iz) {
  for (const auto& f : kFingers)
    if (f.wall == 0 && ix >= f.cell0 && ix < f.cell0 + 2) return true;
  (void)iz;
  return false;
}

bool thumb_socket(int iy, int iz) {
  for (const auto& f : kFingers)
    if (f.wall == 1 && iy >= f.cell0 && iy < f.cell0 + 2) return true;
  (void)iz;
  return false;
}

// Consistent orientation: flood-fill winding agreement, then flip everything
// if the signed volume comes out negative.
void orient_closed_mesh(std::vector<std::array<int, 3>>* faces,
                        std::vector<std::array<Vec2, 3>>* face_uv,
                        const std::vector<Vec3>& verts) {
  const int F = static_cast<int>(faces->size());
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (int f = 0; f < F; ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = (*faces)[f][k], b = (*faces)[f][(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_faces[{a, b}].push_back(f);
    }
  }
  for (const auto& [e, fs] : edge_faces) {
    if (fs.size() != 2)
      throw DataError("synthetic hand: edge with " + std::to_string(fs.size()) +
                      " incident faces; mesh not closed");
  }
  auto has_directed = [&](int f, int a, int b) {
    for (int k = 0; k < 3; ++k)
      if ((*faces)[f][k] == a && (*faces)[f][(k + 1) % 3] == b) return true;
    return false;
  };
  std::vector<int8_t> visited(F, 0);
  std::queue<int> q;
  q.push(0);
  visited[0] = 1;
  while (!q.empty()) {
    const int f = q.front();
    q.pop();
    for (int k = 0; k < 3; ++k) {
      int a = (*faces)[f][k], b = (*faces)[f][(k + 1) % 3];
      int ea = std::min(a, b), eb = std::max(a, b);
      for (int g : edge_faces[{ea, eb}]) {
        if (g == f || visited[g]) continue;
        // neighbor must traverse the shared edge in the opposite direction
        if (has_directed(g, a, b)) {
          std::swap((*faces)[g][1], (*faces)[g][2]);
          std::swap((*face_uv)[g][1], (*face_uv)[g][2]);
        }
        visited[g] = 1;
        q.push(g);
      }
    }
  }
  double vol = 0;
  for (const auto& f : *faces) {
    const Vec3 &a = verts[f[0]], &b = verts[f[1]], &c = verts[f[2]];
    vol += a.dot(b.cross(c)) / 6.0;
  }
  if (vol < 0) {
    for (size_t f = 0; f < faces->size(); ++f) {
      std::swap((*faces)[f][1], (*faces)[f][2]);
      std::swap((*face_uv)[f][1], (*face_uv)[f][2]);
    }
  }
}

}  // namespace

HandModel synthetic_hand() {
  Builder b;

  // Palm top (z = +T/2) and bottom (z = -T/2).
  for (int ix = 0; ix < kNx; ++ix) {
    for (int iy = 0; iy < kNy; ++iy) {
      auto uv = [&](int dx, int dy) {
        return kTop.map(double(ix + dx) / kNx, double(iy + dy) / kNy);
      };
      b.quad(b.grid_vertex(ix, iy, kNz), b.grid_vertex(ix + 1, iy, kNz),
             b.grid_vertex(ix + 1, iy + 1, kNz), b.grid_vertex(ix, iy + 1, kNz),
             uv(0, 0), uv(1, 0), uv(1, 1), uv(0, 1));
      auto uvb = [&](int dx, int dy) {
        return kBottom.map(double(ix + dx) / kNx, double(iy + dy) / kNy);
      };
      b.quad(b.grid_vertex(ix, iy, 0), b.grid_vertex(ix + 1, iy, 0),
             b.grid_vertex(ix + 1, iy + 1, 0), b.grid_vertex(ix, iy + 1, 0),
             uvb(0, 0), uvb(1, 0), uvb(1, 1), uvb(0, 1));
    }
  }
  // Proximal wall y=0 grid row (wrist side) and distal wall (finger side).
  for (int ix = 0; ix < kNx; ++ix) {
    for (int iz = 0; iz < kNz; ++iz) {
      auto uv0 = [&](int dx, int dz) {
        return kWall[0].map(double(ix + dx) / kNx, double(iz + dz) / kNz);
      };
      b.quad(b.grid_vertex(ix, 0, iz), b.grid_vertex(ix + 1, 0, iz),
             b.grid_vertex(ix + 1, 0, iz + 1), b.grid_vertex(ix, 0, iz + 1),
             uv0(0, 0), uv0(1, 0), uv0(1, 1), uv0(0, 1));
      if (!distal_socket(ix, iz)) {
        auto uv1 = [&](int dx, int dz) {
          return kWall[1].map(double(ix + dx) / kNx, double(iz + dz) / kNz);
        };
        b.quad(b.grid_vertex(ix, kNy, iz), b.grid_vertex(ix + 1, kNy, iz),
               b.grid_vertex(ix + 1, kNy, iz + 1), b.grid_vertex(ix, kNy, iz + 1),
               uv1(0, 0), uv1(1, 0), uv1(1, 1), uv1(0, 1));
      }
    }
  }
  // Side walls x=0 and x=+W.
  for (int iy = 0; iy < kNy; ++iy) {
    for (int iz = 0; iz < kNz; ++iz) {
      auto uv2 = [&](int dy, int dz) {
        return kWall[2].map(double(iy + dy) / kNy, double(iz + dz) / kNz);
      };
      b.quad(b.grid_vertex(0, iy, iz), b.grid_vertex(0, iy + 1, iz),
             b.grid_vertex(0, iy + 1, iz + 1), b.grid_vertex(0, iy, iz + 1),
             uv2(0, 0), uv2(1, 0), uv2(1, 1), uv2(0, 1));
      if (!thumb_socket(iy, iz)) {
        auto uv3 = [&](int dy, int dz) {
          return kWall[3].map(double(iy + dy) / kNy, double(iz + dz) / kNz);
        };
        b.quad(b.grid_vertex(kNx, iy, iz), b.grid_vertex(kNx, iy + 1, iz),
               b.grid_vertex(kNx, iy + 1, iz + 1), b.grid_vertex(kNx, iy, iz + 1),
               uv3(0, 0), uv3(1, 0), uv3(1, 1), uv3(0, 1));
      }
    }
  }

  // Finger extrusions. Socket boundary loops walk the 2x2 cell block edge.
  const std::array<std::pair<int, int>, 8> loop_steps = {
      {{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};
  std::vector<Socket> sockets;
  std::vector<std::vector<std::array<int, 8>>> finger_rings(5);
  std::vector<int> finger_apex(5);
  for (int f = 0; f < 5; ++f) {
    const FingerSpec& spec = kFingers[f];
    Socket s;
    s.axis = spec.axis;
    s.length = spec.length;
    for (int k = 0; k < 8; ++k) {
      const auto [da, db] = loop_steps[k];
      if (spec.wall == 0)
        s.loop[k] = b.grid_vertex(spec.cell0 + da, kNy, db);
      else
        s.loop[k] = b.grid_vertex(kNx, spec.cell0 + da, db);
      s.base_pos[k] = b.verts[s.loop[k]];
    }
    s.center = Vec3::Zero();
    for (const auto& p : s.base_pos) s.center += p;
    s.center /= 8.0;
    sockets.push_back(s);

    const IslandRect tube = finger_tube(f);
    std::array<int, 8> prev = s.loop;
    finger_rings[f].push_back(prev);
    for (int k = 1; k <= kRings; ++k) {
      const double t = double(k) / kRings;
      const double taper = 1.0 + (kTaperTip - 1.0) * t;
      std::array<int, 8> ring;
      for (int c = 0; c < 8; ++c) {
        const Vec3 radial = s.base_pos[c] - s.center;
        ring[c] = b.add_vertex(s.center + s.axis * (s.length * t) + radial * taper);
      }
      for (int c = 0; c < 8; ++c) {
        const int cn = (c + 1) % 8;
        auto uv = [&](double cc, double kk) { return tube.map(cc / 8.0, kk / kRings); };
        b.quad(prev[c], prev[cn], ring[cn], ring[c], uv(c, k - 1), uv(c + 1, k - 1),
               uv(c + 1, k), uv(c, k));
      }
      finger_rings[f].push_back(ring);
      prev = ring;
    }
    const int apex =
        b.add_vertex(s.center + s.axis * (s.length + 4.0));
    finger_apex[f] = apex;
    const IslandRect tipr = finger_tip(f);
    for (int c = 0; c < 8; ++c) {
      const int cn = (c + 1) % 8;
      const double a0 = 2 * M_PI * c / 8, a1 = 2 * M_PI * cn / 8;
      b.tri(prev[c], prev[cn], apex,
            tipr.map(0.5 + 0.5 * std::cos(a0), 0.5 + 0.5 * std::sin(a0)),
            tipr.map(0.5 + 0.5 * std::cos(a1), 0.5 + 0.5 * std::sin(a1)),
            tipr.map(0.5, 0.5));
    }
  }

  orient_closed_mesh(&b.faces, &b.face_uv, b.verts);

  const int V = static_cast<int>(b.verts.size());
  const int F = static_cast<int>(b.faces.size());
  const int J = 16;

  HandModel m;
  m.template_vertices.resize(V, 3);
  for (int i = 0; i < V; ++i) m.template_vertices.row(i) = b.verts[i].transpose() / 1000.0;
  MatX3i faces(F, 3);
  MatX2 uv(3 * F, 2);
  for (int f = 0; f < F; ++f) {
    for (int k = 0; k < 3; ++k) {
      faces(f, k) = b.faces[f][k];
      uv.row(3 * f + k) = b.face_uv[f][k].transpose();
    }
  }
  m.topology = MeshTopology::build(faces, uv);

  // Skeleton: wrist + MCP/PIP/DIP per finger, ordered thumb..pinky.
  m.joints_template.resize(J, 3);
  m.parents.assign(J, -1);
  m.joints_template.row(0) = Vec3(0, -kPalmL / 2 + 6.0, 0).transpose() / 1000.0;
  std::array<std::array<int, 3>, 5> finger_joint_ids;
  int jid = 1;
  for (int f = 0; f < 5; ++f) {
    const Socket& s = sockets[f];
    const std::array<double, 3> frac = {0.0, 0.45, 0.75};
    for (int a = 0; a < 3; ++a) {
      m.joints_template.row(jid) = (s.center + s.axis * (s.length * frac[a])).transpose() / 1000.0;
      m.parents[jid] = (a == 0) ? 0 : jid - 1;
      finger_joint_ids[f][a] = jid;
      ++jid;
    }
  }

  // Skinning weights.
  m.weights = MatX::Zero(V, J);
  std::vector<int> owner(V, -1);  // finger id or -1 for palm
  std::vector<double> along(V, 0.0);
  for (int f = 0; f < 5; ++f) {
    const Socket& s = sockets[f];
    for (size_t k = 0; k < finger_rings[f].size(); ++k) {
      for (int c = 0; c < 8; ++c) {
        const int vi = finger_rings[f][k][c];
        owner[vi] = f;
        along[vi] = s.length * double(k) / kRings;
      }
    }
    owner[finger_apex[f]] = f;
    along[finger_apex[f]] = s.length + 4.0;
  }
  for (int i = 0; i < V; ++i) {
    if (owner[i] < 0) {
      m.weights(i, 0) = 1.0;
      continue;
    }
    const int f = owner[i];
    const auto& ids = finger_joint_ids[f];
    const double L = kFingers[f].length;
    const double sP = 0.45 * L, sD = 0.75 * L, blend = 0.12 * L;
    const double sv = along[i];
    double w_mcp = 0, w_pip = 0, w_dip = 0, w_wrist = 0;
    if (sv <= 1e-9) {
      w_wrist = 0.5;
      w_mcp = 0.5;  // socket ring stitches palm to finger
    } else if (sv < sP - blend) {
      w_mcp = 1;
    } else if (sv < sP + blend) {
      const double t = (sv - (sP - blend)) / (2 * blend);
      w_mcp = 1 - t;
      w_pip = t;
    } else if (sv < sD - blend) {
      w_pip = 1;
    } else if (sv < sD + blend) {
      const double t = (sv - (sD - blend)) / (2 * blend);
      w_pip = 1 - t;
      w_dip = t;
    } else {
      w_dip = 1;
    }
    m.weights(i, 0) = w_wrist;
    m.weights(i, ids[0]) = w_mcp;
    m.weights(i, ids[1]) = w_pip;
    m.weights(i, ids[2]) = w_dip;
  }

  // Pose basis: 3 root rotations + 7 synergies. Entries are axis-angle
  // contributions (radians per unit coefficient).
  const int P = 10;
  m.pose_basis = MatX::Zero(3 * J, P);
  for (int a = 0; a < 3; ++a) m.pose_basis(a, a) = 1.0;
  auto set_rot = [&](int col, int joint, const Vec3& axis_angle) {
    m.pose_basis.block<3, 1>(3 * joint, col) += axis_angle;
  };
  const Vec3 flex_x(-1, 0, 0);
  const Vec3 th_axis = kFingers[0].axis;
  const Vec3 th_flex = Vec3(th_axis.y(), -th_axis.x(), 0).normalized() * -1.0;
  for (int f = 1; f < 5; ++f) {
    const auto& ids = finger_joint_ids[f];
    set_rot(3, ids[0], 0.5 * flex_x);
    set_rot(3, ids[1], 0.7 * flex_x);
    set_rot(3, ids[2], 0.4 * flex_x);
    set_rot(5, ids[1], 0.8 * flex_x);
    set_rot(5, ids[2], 0.6 * flex_x);
  }
  set_rot(3, finger_joint_ids[0][0], 0.3 * th_flex);
  const std::array<double, 5> spread = {0.3, 0.35, 0.1, -0.15, -0.4};
  for (int f = 0; f < 5; ++f) set_rot(4, finger_joint_ids[f][0], Vec3(0, 0, spread[f]));
  set_rot(6, finger_joint_ids[0][0], Vec3(0, 0, -0.4) + 0.4 * th_flex);
  set_rot(6, finger_joint_ids[0][1], 0.3 * th_flex);
  for (int a = 0; a < 3; ++a) {
    const std::array<double, 3> amt = {0.6, 0.8, 0.5};
    set_rot(7, finger_joint_ids[1][a], amt[a] * flex_x);
    set_rot(8, finger_joint_ids[2][a], amt[a] * flex_x);
    set_rot(8, finger_joint_ids[3][a], 0.7 * amt[a] * flex_x);
    set_rot(9, finger_joint_ids[4][a], amt[a] * flex_x);
  }

  // Shape basis: scale, finger length, palm width, thickness.
  const int S = 4;
  m.shape_basis = MatX::Zero(3 * V, S);
  const Vec3 wrist = m.joints_template.row(0);
  for (int i = 0; i < V; ++i) {
    const Vec3 v = m.template_vertices.row(i);
    const Vec3 d_scale = 0.08 * (v - wrist);
    for (int a = 0; a < 3; ++a) m.shape_basis(3 * i + a, 0) = d_scale[a];
    if (owner[i] >= 0) {
      const Vec3 d_len = 0.18 * (along[i] / 1000.0) * kFingers[owner[i]].axis;
      for (int a = 0; a < 3; ++a) m.shape_basis(3 * i + a, 1) = d_len[a];
    }
    m.shape_basis(3 * i + 0, 2) = 0.10 * v.x();
    m.shape_basis(3 * i + 2, 3) = 0.25 * v.z();
  }

  // Landmark regressor: wrist, then MCP/PIP/DIP/tip per finger (21 rows).
  const int L = 21;
  m.joint_regressor = MatX::Zero(L, V);
  {
    // wrist: mean of proximal wall vertices
    std::vector<int> wall;
    for (const auto& [key, vi] : b.grid)
      if (std::get<1>(key) == 0) wall.push_back(vi);
    for (int vi : wall) m.joint_regressor(0, vi) = 1.0 / wall.size();
  }
  int row = 1;
  for (int f = 0; f < 5; ++f) {
    const std::array<double, 3> frac = {0.0, 0.45, 0.75};
    for (int a = 0; a < 3; ++a) {
      // nearest ring to the joint position
      const int k = static_cast<int>(std::lround(frac[a] * kRings));
      for (int c = 0; c < 8; ++c) m.joint_regressor(row, finger_rings[f][k][c]) = 1.0 / 8.0;
      ++row;
    }
    m.joint_regressor(row, finger_apex[f]) = 1.0;
    ++row;
  }

  m.validate();
  return m;
}

}  // namespace handpress
