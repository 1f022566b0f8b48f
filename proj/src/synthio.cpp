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
#include "handpress/synthio.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "handpress/hand_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace handpress {

namespace {

constexpr int kSequenceVersion = 1;

std::string frame_dir_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", idx);
  return buf;
}

json vec_to_json(const VecX& v) {
  std::vector<double> data(v.data(), v.data() + v.size());
  return json(data);
}

VecX vec_from_json(const json& j) {
  VecX v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i];
  return v;
}

CameraModel look_at_camera(const Vec3& position, const Vec3& target, double fx,
                           int size, const std::string& id) {
  CameraModel cam;
  cam.id = id;
  cam.fx = cam.fy = fx;
  cam.cx = cam.cy = size / 2.0;
  cam.width = cam.height = size;
  Vec3 f = (target - position).normalized();
  Vec3 r = f.cross(Vec3::UnitZ());
  if (r.norm() < 1e-9) r = Vec3::UnitX();
  r.normalize();
  const Vec3 d = f.cross(r);
  cam.rotation.row(0) = r.transpose();
  cam.rotation.row(1) = d.transpose();
  cam.rotation.row(2) = f.transpose();
  cam.translation = -cam.rotation * position;
  return cam;
}

}  // namespace

ScenarioConfig ScenarioConfig::defaults() {
  ScenarioConfig c;
  c.pad.center = Vec3::Zero();
  c.theta0 = VecX::Zero(10);
  c.theta0[3] = 0.1;   // slight overall curl
  c.theta0[7] = 0.55;  // index curls down toward the pad
  c.dtheta = VecX::Zero(10);
  c.dtheta[3] = 0.06;
  c.translation_drift = Vec3(0.004, 0.002, 0.0);
  c.beta = VecX::Zero(4);
  ContactScript touch;
  c.contacts.push_back(touch);
  c.init.theta_range = 0.2;
  c.init.root_range_m = 0.02;
  return c;
}

SyntheticScene generate_scene(const ScenarioConfig& config) {
  SyntheticScene scene;
  scene.pad = config.pad;
  scene.model = synthetic_hand();
  const HandModel& model = scene.model;
  if (config.theta0.size() != model.num_pose_coeffs() ||
      config.beta.size() != model.num_shape_coeffs())
    throw std::invalid_argument("generate_scene: coefficient dimensions mismatch");

  // camera ring
  const Vec3 look_target = config.pad.center + 0.04 * config.pad.normal();
  for (int i = 0; i < config.num_cameras; ++i) {
    const double az = 2 * M_PI * i / config.num_cameras;
    const double el = (25.0 + 30.0 * (i % 3) / 2.0) * M_PI / 180.0;
    const Vec3 pos = look_target + config.rig_radius_m * Vec3(std::cos(el) * std::cos(az),
                                                              std::cos(el) * std::sin(az),
                                                              std::sin(el));
    scene.cameras.push_back(look_at_camera(pos, look_target, 1.15 * config.image_size,
                                           config.image_size, "cam" + std::to_string(i)));
  }

  // ground-truth appearance texture: smooth multi-frequency pattern
  scene.appearance = Texture(128, 128, 3);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const double u = (x + 0.5) / 128, v = (y + 0.5) / 128;
      scene.appearance.values.at(x, y, 0) = 0.5 + 0.4 * std::sin(2 * M_PI * 3 * u) * std::sin(2 * M_PI * 2 * v);
      scene.appearance.values.at(x, y, 1) = 0.5 + 0.35 * std::sin(2 * M_PI * 2 * u + 1.0);
      scene.appearance.values.at(x, y, 2) = 0.25 + 0.5 * u * v;
    }
  }

  // place the hand: fingertip of the first scripted contact rests on the pad
  // at the pad center for frame 0
  Vec3 base_translation = Vec3::Zero();
  {
    const Mesh rest = skin(model, config.theta0, config.beta, Vec3::Zero());
    const MatX3 lm = regress_joints(model, rest);
    const int tip = config.contacts.empty() ? 8 : config.contacts.front().fingertip_landmark;
    const Vec3 tip_pos = lm.row(tip);
    base_translation = config.pad.center - tip_pos;
    // keep the tip exactly on the surface plane
    const Vec3 n = config.pad.normal();
    base_translation -= n * (n.dot(base_translation + tip_pos - config.pad.center));
  }

  // obstacles: the recessed pad occluder body, per camera
  const std::vector<Obb> obstacles = {config.pad.occluder_box()};
  for (const auto& cam : scene.cameras)
    scene.obstacles.push_back(render_obstacles(obstacles, cam));

  const double denom = config.num_frames > 1 ? config.num_frames - 1.0 : 1.0;
  for (int f = 0; f < config.num_frames; ++f) {
    const double t = f / denom;
    HandState state;
    state.theta = config.theta0 + t * config.dtheta;
    state.beta = config.beta;
    state.translation = base_translation + t * config.translation_drift;
    state.d_vert = VecX::Zero(model.num_vertices());
    scene.gt_states.push_back(state);
  }

  RasterizerOptions hard;
  hard.soft_mask = false;

  for (int f = 0; f < config.num_frames; ++f) {
    auto rng = make_rng(config.seed, 1000 + f);
    const Mesh mesh = skin(model, scene.gt_states[f]);
    ObservationFrame obs;
    obs.timestamp = f / config.fps;

    for (size_t ci = 0; ci < scene.cameras.size(); ++ci) {
      RenderOutput r = rasterize(mesh, scene.cameras[ci], &scene.appearance, hard);
      r = depth_cull(r, scene.obstacles[ci]);
      const int W = r.width(), H = r.height();
      ImageF mask(W, H, 1, 0.f), depth(W, H, 1, 0.f), app(W, H, 3, 0.f);
      std::normal_distribution<double> px_noise(0.0, config.noise.pixel_sigma);
      std::normal_distribution<double> d_noise(0.0, config.noise.depth_sigma_m);
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          if (r.face_id.at(x, y) < 0) continue;
          mask.at(x, y) = 1.f;
          double dz = r.depth.at(x, y);
          if (config.noise.depth_sigma_m > 0) dz = std::max(0.0, dz + d_noise(rng));
          depth.at(x, y) = static_cast<float>(dz);
          for (int c = 0; c < 3; ++c) {
            double v = r.feature.at(x, y, c);
            if (config.noise.pixel_sigma > 0) v += px_noise(rng);
            app.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      obs.mask.push_back(std::move(mask));
      obs.depth.push_back(std::move(depth));
      obs.appearance.push_back(std::move(app));
    }

    // pressure frame from the scripted contacts
    PressureFrame pf;
    pf.grid = ImageF(config.pad.cols, config.pad.rows, 1, 0.f);
    pf.origin = config.pad.center - 0.5 * config.pad.extent.x() * config.pad.u_dir -
                0.5 * config.pad.extent.y() * config.pad.v_dir;
    pf.u_dir = config.pad.u_dir;
    pf.v_dir = config.pad.v_dir;
    pf.extent = config.pad.extent;
    pf.timestamp = obs.timestamp;
    const MatX3 lm = regress_joints(model, mesh);
    for (const auto& contact : config.contacts) {
      const Vec3 tip = lm.row(contact.fingertip_landmark);
      const Vec3 pc = config.pad.to_pad_frame(tip);
      if (pc.z() > contact.contact_height_m) continue;
      const double cw = config.pad.extent.x() / config.pad.cols;
      const double ch = config.pad.extent.y() / config.pad.rows;
      for (int row = 0; row < config.pad.rows; ++row) {
        for (int col = 0; col < config.pad.cols; ++col) {
          const double du = (col + 0.5) * cw - pc.x();
          const double dv = (row + 0.5) * ch - pc.y();
          if (du * du + dv * dv <= contact.radius_m * contact.radius_m)
            pf.grid.at(col, row) = static_cast<float>(contact.peak_pa);
        }
      }
    }
    obs.pressure = std::move(pf);
    scene.frames.push_back(std::move(obs));

    // init estimates (perturbed ground truth)
    InitEstimate init;
    std::uniform_real_distribution<double> theta_u(-config.init.theta_range,
                                                   config.init.theta_range);
    std::uniform_real_distribution<double> root_u(-config.init.root_range_m,
                                                  config.init.root_range_m);
    init.theta = scene.gt_states[f].theta;
    for (int k = 0; k < init.theta.size(); ++k) init.theta[k] += theta_u(rng);
    const Vec3 root = lm.row(0);
    const Vec3 root_noisy = root + Vec3(root_u(rng), root_u(rng), root_u(rng));
    std::normal_distribution<double> px_sigma(0.0, config.init.root_px_sigma);
    for (const auto& cam : scene.cameras) {
      Vec2 px = project(cam, root_noisy).pixel;
      if (config.init.root_px_sigma > 0) px += Vec2(px_sigma(rng), px_sigma(rng));
      init.root_px[cam.id] = px;
    }
    scene.init_estimates.push_back(std::move(init));
  }
  return scene;
}

// ----------------------------------------------------------------------------
// Scenario I/O

void save_scenario(const ScenarioConfig& c, const std::string& path) {
  json j;
  j["version"] = kSequenceVersion;
  j["seed"] = c.seed;
  j["num_frames"] = c.num_frames;
  j["num_cameras"] = c.num_cameras;
  j["image_size"] = c.image_size;
  j["rig_radius_m"] = c.rig_radius_m;
  j["fps"] = c.fps;
  j["theta0"] = vec_to_json(c.theta0);
  j["dtheta"] = vec_to_json(c.dtheta);
  j["translation_drift"] = {c.translation_drift.x(), c.translation_drift.y(),
                            c.translation_drift.z()};
  j["beta"] = vec_to_json(c.beta);
  json contacts = json::array();
  for (const auto& ct : c.contacts)
    contacts.push_back({{"fingertip_landmark", ct.fingertip_landmark},
                        {"radius_m", ct.radius_m},
                        {"peak_pa", ct.peak_pa},
                        {"contact_height_m", ct.contact_height_m}});
  j["contacts"] = contacts;
  j["noise"] = {{"pixel_sigma", c.noise.pixel_sigma},
                {"depth_sigma_m", c.noise.depth_sigma_m}};
  j["init"] = {{"theta_range", c.init.theta_range},
               {"root_range_m", c.init.root_range_m},
               {"root_px_sigma", c.init.root_px_sigma}};
  std::ofstream os(path);
  if (!os) throw DataError("save_scenario: cannot open " + path);
  os << j.dump(2);
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_scenario: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_scenario: parse error in " + path + ": " + e.what());
  }
  if (j.value("version", -1) != kSequenceVersion)
    throw DataError("load_scenario: unsupported version in " + path);
  ScenarioConfig c = ScenarioConfig::defaults();
  c.seed = j.value("seed", c.seed);
  c.num_frames = j.value("num_frames", c.num_frames);
  c.num_cameras = j.value("num_cameras", c.num_cameras);
  c.image_size = j.value("image_size", c.image_size);
  c.rig_radius_m = j.value("rig_radius_m", c.rig_radius_m);
  c.fps = j.value("fps", c.fps);
  if (j.contains("theta0")) c.theta0 = vec_from_json(j["theta0"]);
  if (j.contains("dtheta")) c.dtheta = vec_from_json(j["dtheta"]);
  if (j.contains("translation_drift")) {
    const auto& td = j["translation_drift"];
    c.translation_drift = Vec3(td[0], td[1], td[2]);
  }
  if (j.contains("beta")) c.beta = vec_from_json(j["beta"]);
  if (j.contains("contacts")) {
    c.contacts.clear();
    for (const auto& ct : j["contacts"]) {
      ContactScript s;
      s.fingertip_landmark = ct.value("fingertip_landmark", s.fingertip_landmark);
      s.radius_m = ct.value("radius_m", s.radius_m);
      s.peak_pa = ct.value("peak_pa", s.peak_pa);
      s.contact_height_m = ct.value("contact_height_m", s.contact_height_m);
      c.contacts.push_back(s);
    }
  }
  if (j.contains("noise")) {
    c.noise.pixel_sigma = j["noise"].value("pixel_sigma", 0.0);
    c.noise.depth_sigma_m = j["noise"].value("depth_sigma_m", 0.0);
  }
  if (j.contains("init")) {
    c.init.theta_range = j["init"].value("theta_range", 0.0);
    c.init.root_range_m = j["init"].value("root_range_m", 0.0);
    c.init.root_px_sigma = j["init"].value("root_px_sigma", 0.0);
  }
  return c;
}

void save_pad(const PadGeometry& pad, const std::string& path) {
  json j;
  j["version"] = kSequenceVersion;
  j["center"] = {pad.center.x(), pad.center.y(), pad.center.z()};
  j["u_dir"] = {pad.u_dir.x(), pad.u_dir.y(), pad.u_dir.z()};
  j["v_dir"] = {pad.v_dir.x(), pad.v_dir.y(), pad.v_dir.z()};
  j["extent"] = {pad.extent.x(), pad.extent.y()};
  j["cols"] = pad.cols;
  j["rows"] = pad.rows;
  j["thickness"] = pad.thickness;
  j["camera_plane_offset"] = pad.camera_plane_offset;
  std::ofstream os(path);
  if (!os) throw DataError("save_pad: cannot open " + path);
  os << j.dump(2);
}

PadGeometry load_pad(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_pad: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_pad: parse error in " + path + ": " + e.what());
  }
  PadGeometry pad;
  const auto& c = j.at("center");
  pad.center = Vec3(c[0], c[1], c[2]);
  const auto& u = j.at("u_dir");
  pad.u_dir = Vec3(u[0], u[1], u[2]);
  const auto& v = j.at("v_dir");
  pad.v_dir = Vec3(v[0], v[1], v[2]);
  const auto& e = j.at("extent");
  pad.extent = Vec2(e[0], e[1]);
  pad.cols = j.at("cols");
  pad.rows = j.at("rows");
  pad.thickness = j.at("thickness");
  pad.camera_plane_offset = j.at("camera_plane_offset");
  return pad;
}

// ----------------------------------------------------------------------------
// Sequence I/O

void save_sequence(const SyntheticScene& scene, const ScenarioConfig& config,
                   const std::string& dir) {
  fs::create_directories(dir);
  save_cameras(scene.cameras, dir + "/cameras.json");
  save_pad(scene.pad, dir + "/pad.json");
  save_hand_model(scene.model, dir + "/model.json");
  save_scenario(config, dir + "/scenario.json");

  for (size_t f = 0; f < scene.frames.size(); ++f) {
    const std::string fdir = dir + "/frames/" + frame_dir_name(static_cast<int>(f));
    fs::create_directories(fdir);
    const ObservationFrame& obs = scene.frames[f];
    for (size_t ci = 0; ci < scene.cameras.size(); ++ci) {
      const ImageF& app = obs.appearance[ci];
      ImageU8 rgba(app.width(), app.height(), 4, 0);
      for (int y = 0; y < app.height(); ++y) {
        for (int x = 0; x < app.width(); ++x) {
          for (int c = 0; c < 3; ++c)
            rgba.at(x, y, c) =
                static_cast<uint8_t>(std::lround(255.0 * app.at(x, y, c)));
          rgba.at(x, y, 3) = obs.mask[ci].at(x, y) > 0.5f ? 255 : 0;
        }
      }
      write_png(fdir + "/" + scene.cameras[ci].id + ".png", rgba);
      write_raw(fdir + "/" + scene.cameras[ci].id + "_depth.raw", obs.depth[ci]);
    }
    write_raw(fdir + "/pressure.raw", obs.pressure.grid);

    // provider estimates
    const InitEstimate& init = scene.init_estimates[f];
    json ji;
    ji["version"] = kSequenceVersion;
    ji["theta"] = vec_to_json(init.theta);
    json roots;
    for (const auto& [id, px] : init.root_px) roots[id] = {px.x(), px.y()};
    ji["root_px"] = roots;
    std::ofstream os(fdir + "/init.json");
    os << ji.dump(2);
  }

  // ground truth in the annotation record format
  std::vector<AnnotationRecord> gt;
  for (size_t f = 0; f < scene.gt_states.size(); ++f) {
    AnnotationRecord rec;
    rec.frame = static_cast<int>(f);
    rec.theta = scene.gt_states[f].theta;
    rec.beta = scene.gt_states[f].beta;
    rec.translation = scene.gt_states[f].translation;
    rec.d_vert = scene.gt_states[f].d_vert;
    bool contact = false;
    for (const float v : scene.frames[f].pressure.grid.raw())
      if (v > kContactThresholdPa) contact = true;
    rec.contact = contact;
    if (contact) {
      const Mesh mesh = skin(scene.model, scene.gt_states[f]);
      UVPressureMap uv =
          bake_pad_pressure_to_uv(mesh, scene.pad, scene.frames[f].pressure.grid);
      rec.pressure_uv = std::move(uv);
    }
    gt.push_back(std::move(rec));
  }
  save_annotations(gt, dir + "/gt");
}

namespace {

json record_to_json(const AnnotationRecord& rec, const std::string& uv_name) {
  json j;
  j["version"] = kSequenceVersion;
  j["frame"] = rec.frame;
  j["theta"] = vec_to_json(rec.theta);
  j["beta"] = vec_to_json(rec.beta);
  j["translation"] = {rec.translation.x(), rec.translation.y(), rec.translation.z()};
  j["d_vert"] = vec_to_json(rec.d_vert);
  j["contact"] = rec.contact;
  json losses;
  for (const auto& [id, ml] : rec.camera_losses)
    losses[id] = {{"mask", ml.first}, {"depth", ml.second}};
  j["losses"] = losses;
  if (rec.pressure_uv)
    j["uv_pressure"] = uv_name;
  else
    j["uv_pressure"] = nullptr;
  return j;
}

AnnotationRecord record_from_json(const json& j, const std::string& dir) {
  if (j.value("version", -1) != kSequenceVersion)
    throw DataError("annotation record: unsupported version");
  AnnotationRecord rec;
  rec.frame = j.at("frame");
  rec.theta = vec_from_json(j.at("theta"));
  rec.beta = vec_from_json(j.at("beta"));
  const auto& t = j.at("translation");
  rec.translation = Vec3(t[0], t[1], t[2]);
  rec.d_vert = vec_from_json(j.at("d_vert"));
  rec.contact = j.at("contact");
  for (const auto& [id, ml] : j.at("losses").items())
    rec.camera_losses[id] = {ml.at("mask"), ml.at("depth")};
  if (!j.at("uv_pressure").is_null()) {
    UVPressureMap uv;
    uv.values = read_raw(dir + "/" + j.at("uv_pressure").get<std::string>());
    rec.pressure_uv = std::move(uv);
  }
  return rec;
}

}  // namespace

void save_annotations(const std::vector<AnnotationRecord>& records, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& rec : records) {
    const std::string base = frame_dir_name(rec.frame);
    std::string uv_name;
    if (rec.pressure_uv) {
      uv_name = base + "_uv.raw";
      write_raw(dir + "/" + uv_name, rec.pressure_uv->values);
    }
    std::ofstream os(dir + "/" + base + ".json");
    if (!os) throw DataError("save_annotations: cannot open " + dir);
    os << record_to_json(rec, uv_name).dump();
  }
}

std::vector<AnnotationRecord> load_annotations(const std::string& dir) {
  std::vector<AnnotationRecord> out;
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::ifstream is(p);
    json j;
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw DataError("load_annotations: parse error in " + p.string() + ": " + e.what());
    }
    out.push_back(record_from_json(j, dir));
  }
  return out;
}

LoadedSequence load_sequence(const std::string& dir) {
  if (!fs::exists(dir + "/cameras.json"))
    throw DataError("load_sequence: " + dir + " is not a sequence directory");
  LoadedSequence seq;
  seq.cameras = load_cameras(dir + "/cameras.json");
  seq.pad = load_pad(dir + "/pad.json");
  seq.model = load_hand_model(dir + "/model.json");
  const ScenarioConfig config = load_scenario(dir + "/scenario.json");

  for (int f = 0;; ++f) {
    const std::string fdir = dir + "/frames/" + frame_dir_name(f);
    if (!fs::exists(fdir)) break;
    ObservationFrame obs;
    obs.timestamp = f / config.fps;
    for (const auto& cam : seq.cameras) {
      const ImageU8 rgba = read_png(fdir + "/" + cam.id + ".png");
      if (rgba.channels() != 4)
        throw DataError("load_sequence: expected RGBA in " + fdir + "/" + cam.id + ".png");
      ImageF app(rgba.width(), rgba.height(), 3, 0.f), mask(rgba.width(), rgba.height(), 1, 0.f);
      for (int y = 0; y < rgba.height(); ++y) {
        for (int x = 0; x < rgba.width(); ++x) {
          const bool inside = rgba.at(x, y, 3) >= 128;
          mask.at(x, y) = inside ? 1.f : 0.f;
          if (inside)
            for (int c = 0; c < 3; ++c) app.at(x, y, c) = rgba.at(x, y, c) / 255.f;
        }
      }
      obs.appearance.push_back(std::move(app));
      obs.mask.push_back(std::move(mask));
      obs.depth.push_back(read_raw(fdir + "/" + cam.id + "_depth.raw"));
    }
    PressureFrame pf;
    pf.grid = read_raw(fdir + "/pressure.raw");
    pf.origin = seq.pad.center - 0.5 * seq.pad.extent.x() * seq.pad.u_dir -
                0.5 * seq.pad.extent.y() * seq.pad.v_dir;
    pf.u_dir = seq.pad.u_dir;
    pf.v_dir = seq.pad.v_dir;
    pf.extent = seq.pad.extent;
    pf.timestamp = obs.timestamp;
    obs.pressure = std::move(pf);
    seq.frames.push_back(std::move(obs));

    InitEstimate init;
    const std::string init_path = fdir + "/init.json";
    if (fs::exists(init_path)) {
      std::ifstream is(init_path);
      json j;
      try {
        j = json::parse(is);
      } catch (const json::parse_error& e) {
        throw DataError("load_sequence: parse error in " + init_path + ": " + e.what());
      }
      init.theta = vec_from_json(j.at("theta"));
      for (const auto& [id, px] : j.at("root_px").items())
        init.root_px[id] = Vec2(px[0], px[1]);
    }
    seq.init_estimates.push_back(std::move(init));
  }
  seq.gt = load_annotations(dir + "/gt");
  return seq;
}

}  // namespace handpress
