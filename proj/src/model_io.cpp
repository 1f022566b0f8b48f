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
#include <fstream>

#include <json.hpp>

#include "handpress/hand_model.hpp"

namespace handpress {

using nlohmann::json;

namespace {

constexpr int kModelVersion = 1;

json matrix_to_json(const MatX& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = data;
  return j;
}

MatX matrix_from_json(const json& j, const char* what) {
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw DataError(std::string("model file: matrix ") + what + " missing rows/cols/data");
  const int rows = j["rows"], cols = j["cols"];
  const auto& data = j["data"];
  if (static_cast<int>(data.size()) != rows * cols)
    throw DataError(std::string("model file: matrix ") + what + " data length mismatch");
  MatX m(rows, cols);
  int i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = data[i++];
  return m;
}

}  // namespace

void save_hand_model(const HandModel& model, const std::string& path) {
  json j;
  j["format"] = "handpress-model";
  j["version"] = kModelVersion;
  const int V = model.num_vertices(), J = model.num_joints();
  const int F = model.topology->num_faces();
  j["num_vertices"] = V;
  j["num_faces"] = F;
  j["num_joints"] = J;
  std::vector<double> verts(3 * V);
  for (int i = 0; i < V; ++i)
    for (int a = 0; a < 3; ++a) verts[3 * i + a] = model.template_vertices(i, a);
  j["vertices"] = verts;
  std::vector<int> faces(3 * F);
  std::vector<double> uv(6 * F);
  for (int f = 0; f < F; ++f) {
    for (int k = 0; k < 3; ++k) {
      faces[3 * f + k] = model.topology->faces(f, k);
      uv[2 * (3 * f + k)] = model.topology->uv(3 * f + k, 0);
      uv[2 * (3 * f + k) + 1] = model.topology->uv(3 * f + k, 1);
    }
  }
  j["faces"] = faces;
  j["uv"] = uv;
  std::vector<double> joints(3 * J);
  for (int i = 0; i < J; ++i)
    for (int a = 0; a < 3; ++a) joints[3 * i + a] = model.joints_template(i, a);
  j["joints"] = joints;
  j["parents"] = model.parents;
  json triplets = json::array();
  for (int i = 0; i < V; ++i)
    for (int jj = 0; jj < J; ++jj)
      if (model.weights(i, jj) != 0.0)
        triplets.push_back({i, jj, model.weights(i, jj)});
  j["weights"] = triplets;
  j["pose_basis"] = matrix_to_json(model.pose_basis);
  j["shape_basis"] = matrix_to_json(model.shape_basis);
  j["joint_regressor"] = matrix_to_json(model.joint_regressor);

  std::ofstream os(path);
  if (!os) throw DataError("save_hand_model: cannot open " + path);
  os << j.dump();
}

HandModel load_hand_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_hand_model: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_hand_model: parse error in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "handpress-model")
    throw DataError("load_hand_model: not a handpress model file: " + path);
  if (j.value("version", -1) != kModelVersion)
    throw DataError("load_hand_model: unsupported version " +
                    std::to_string(j.value("version", -1)) + " in " + path);

  HandModel m;
  const int V = j.at("num_vertices"), F = j.at("num_faces"), J = j.at("num_joints");
  const auto& verts = j.at("vertices");
  if (static_cast<int>(verts.size()) != 3 * V)
    throw DataError("load_hand_model: field 'vertices' length mismatch");
  m.template_vertices.resize(V, 3);
  for (int i = 0; i < V; ++i)
    for (int a = 0; a < 3; ++a) m.template_vertices(i, a) = verts[3 * i + a];
  const auto& faces = j.at("faces");
  const auto& uv = j.at("uv");
  if (static_cast<int>(faces.size()) != 3 * F)
    throw DataError("load_hand_model: field 'faces' length mismatch");
  if (static_cast<int>(uv.size()) != 6 * F)
    throw DataError("load_hand_model: field 'uv' length mismatch");
  MatX3i fm(F, 3);
  MatX2 uvm(3 * F, 2);
  for (int f = 0; f < F; ++f) {
    for (int k = 0; k < 3; ++k) {
      fm(f, k) = faces[3 * f + k];
      uvm(3 * f + k, 0) = uv[2 * (3 * f + k)];
      uvm(3 * f + k, 1) = uv[2 * (3 * f + k) + 1];
    }
  }
  m.topology = MeshTopology::build(fm, uvm);
  const auto& joints = j.at("joints");
  if (static_cast<int>(joints.size()) != 3 * J)
    throw DataError("load_hand_model: field 'joints' length mismatch");
  m.joints_template.resize(J, 3);
  for (int i = 0; i < J; ++i)
    for (int a = 0; a < 3; ++a) m.joints_template(i, a) = joints[3 * i + a];
  m.parents = j.at("parents").get<std::vector<int>>();
  m.weights = MatX::Zero(V, J);
  for (const auto& t : j.at("weights")) {
    const int vi = t.at(0), ji = t.at(1);
    if (vi < 0 || vi >= V || ji < 0 || ji >= J)
      throw DataError("load_hand_model: weight triplet index out of range");
    m.weights(vi, ji) = t.at(2);
  }
  m.pose_basis = matrix_from_json(j.at("pose_basis"), "pose_basis");
  m.shape_basis = matrix_from_json(j.at("shape_basis"), "shape_basis");
  m.joint_regressor = matrix_from_json(j.at("joint_regressor"), "joint_regressor");
  m.validate();
  return m;
}

}  // namespace handpress
