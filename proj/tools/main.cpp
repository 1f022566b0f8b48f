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
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "handpress/annotator.hpp"
#include "handpress/marker.hpp"
#include "handpress/sync.hpp"
#include "handpress/synthio.hpp"

namespace fs = std::filesystem;
using namespace handpress;
using nlohmann::json;

namespace {

int cmd_synth(const std::string& out_dir, const std::string& config_path, uint64_t seed,
              int frames, int cameras, int size) {
  ScenarioConfig config =
      config_path.empty() ? ScenarioConfig::defaults() : load_scenario(config_path);
  if (seed != 0) config.seed = seed;
  if (frames > 0) config.num_frames = frames;
  if (cameras > 0) config.num_cameras = cameras;
  if (size > 0) config.image_size = size;
  const SyntheticScene scene = generate_scene(config);
  save_sequence(scene, config, out_dir);
  std::cerr << "wrote " << scene.frames.size() << " frames, " << scene.cameras.size()
            << " cameras to " << out_dir << "\n";
  return 0;
}

int cmd_annotate(const std::string& seq_dir, std::string out_dir,
                 const std::string& config_path, const std::string& beta_path,
                 int batch, int iters_pose, int iters_shape) {
  const LoadedSequence seq = load_sequence(seq_dir);
  OptimizerConfig config =
      config_path.empty() ? OptimizerConfig() : load_optimizer_config(config_path);
  if (batch > 0) config.batch_size = batch;
  if (iters_pose > 0) config.iters_pose = iters_pose;
  if (iters_shape > 0) config.iters_shape = iters_shape;
  VecX beta = VecX::Zero(seq.model.num_shape_coeffs());
  if (!beta_path.empty()) {
    std::ifstream is(beta_path);
    if (!is) throw DataError("annotate: cannot open " + beta_path);
    json j = json::parse(is);
    const auto& arr = j.at("beta");
    beta.resize(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) beta[static_cast<int>(i)] = arr[i];
  }
  if (out_dir.empty()) out_dir = seq_dir + "/annotations";
  std::vector<LossLogRow> log;
  const auto records = annotate_sequence(seq, config, beta, &log);
  save_annotations(records, out_dir);
  write_loss_csv(seq_dir + "/losses.csv", log);
  std::cerr << "annotated " << records.size() << " frames -> " << out_dir << "\n";
  return 0;
}

int cmd_calibrate(const std::string& seq_dir, const std::string& out_path,
                  const std::string& config_path) {
  const LoadedSequence seq = load_sequence(seq_dir);
  OptimizerConfig config =
      config_path.empty() ? OptimizerConfig() : load_optimizer_config(config_path);
  StageDiagnostics diag;
  const VecX beta = calibrate_beta(seq, config, &diag);
  json j;
  j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["final_loss"] = diag.final_loss;
  std::ofstream os(out_path);
  if (!os) throw DataError("calibrate-beta: cannot open " + out_path);
  os << j.dump(2);
  std::cerr << "calibrated beta (" << beta.size() << " coefficients), final loss "
            << diag.final_loss << "\n";
  return 0;
}

HandState state_from_json(const json& j, const HandModel& model) {
  HandState s = HandState::rest(model);
  if (j.contains("theta")) {
    const auto& a = j["theta"];
    s.theta.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) s.theta[static_cast<int>(i)] = a[i];
  }
  if (j.contains("beta")) {
    const auto& a = j["beta"];
    s.beta.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) s.beta[static_cast<int>(i)] = a[i];
  }
  if (j.contains("translation")) {
    const auto& a = j["translation"];
    s.translation = Vec3(a[0], a[1], a[2]);
  }
  if (j.contains("d_vert") && !j["d_vert"].empty()) {
    const auto& a = j["d_vert"];
    s.d_vert.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) s.d_vert[static_cast<int>(i)] = a[i];
  }
  return s;
}

int cmd_render(const std::string& model_path, const std::string& cameras_path,
               const std::string& state_path, const std::string& out_dir,
               const std::string& pad_path) {
  const HandModel model = load_hand_model(model_path);
  const auto cameras = load_cameras(cameras_path);
  std::ifstream is(state_path);
  if (!is) throw DataError("render: cannot open " + state_path);
  const HandState state = state_from_json(json::parse(is), model);
  Mesh mesh = skin(model, state);
  if (state.d_vert.size() == mesh.vertices.rows() && !state.d_vert.isZero(0))
    mesh = displace(mesh, state.d_vert);
  fs::create_directories(out_dir);
  RasterizerOptions opts;
  for (const auto& cam : cameras) {
    const RenderOutput r = rasterize(mesh, cam, nullptr, opts);
    ImageU8 mask8(r.width(), r.height(), 1, 0);
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x)
        mask8.at(x, y) = static_cast<uint8_t>(std::lround(255 * std::clamp(r.mask.at(x, y), 0.0, 1.0)));
    write_png(out_dir + "/" + cam.id + "_mask.png", mask8);
    write_raw(out_dir + "/" + cam.id + "_depth.raw", r.depth.cast<float>());
  }
  if (!pad_path.empty()) {
    const PadGeometry pad = load_pad(pad_path);
    const VirtualRender vr = rasterize_under_pad(mesh, pad, nullptr);
    write_raw(out_dir + "/pad_depth.raw", vr.depth.cast<float>());
  }
  std::cerr << "rendered " << cameras.size() << " views -> " << out_dir << "\n";
  return 0;
}

int cmd_bake_uv(const std::string& seq_dir, int frame, const std::string& annotations,
                const std::string& out_path, int resolution, const std::string& preview) {
  const LoadedSequence seq = load_sequence(seq_dir);
  if (frame < 0 || frame >= static_cast<int>(seq.frames.size()))
    throw DataError("bake-uv: frame out of range");
  const std::string ann_dir = annotations.empty() ? seq_dir + "/gt" : annotations;
  const auto records = load_annotations(ann_dir);
  const AnnotationRecord* rec = nullptr;
  for (const auto& r : records)
    if (r.frame == frame) rec = &r;
  if (!rec) throw DataError("bake-uv: no annotation record for frame " + std::to_string(frame));
  HandState state = HandState::rest(seq.model);
  state.theta = rec->theta;
  state.beta = rec->beta;
  state.translation = rec->translation;
  Mesh mesh = skin(seq.model, state);
  if (rec->d_vert.size() == mesh.vertices.rows() && !rec->d_vert.isZero(0))
    mesh = displace(mesh, rec->d_vert);
  const UVPressureMap uv =
      bake_pad_pressure_to_uv(mesh, seq.pad, seq.frames[frame].pressure.grid, resolution);
  write_raw(out_path, uv.values);
  if (!preview.empty()) write_png(preview, pressure_preview(uv.values));
  std::cerr << "baked pressure UV map -> " << out_path << "\n";
  return 0;
}

std::vector<ImageF> load_grid_series(const std::string& path) {
  std::vector<ImageF> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".raw") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(read_raw(f.string()));
    if (out.empty()) throw DataError("evaluate: no .raw grids in " + path);
  } else {
    out.push_back(read_raw(path));
  }
  return out;
}

int cmd_evaluate(const std::string& est_path, const std::string& gt_path,
                 const std::string& csv_path) {
  const auto est = load_grid_series(est_path);
  const auto gt = load_grid_series(gt_path);
  if (est.size() != gt.size())
    throw DataError("evaluate: frame count mismatch between estimates and ground truth");
  std::vector<MetricsRow> rows;
  double mean_ciou = 0, mean_viou = 0, mean_mae = 0;
  for (size_t i = 0; i < est.size(); ++i) {
    MetricsRow row;
    row.frame = static_cast<int>(i);
    row.contact_iou = metric_contact_iou(est[i], gt[i]).value;
    row.vol_iou = metric_volumetric_iou(est[i], gt[i]).value;
    row.mae_pa = metric_mae(est[i], gt[i]);
    const auto any = [](const ImageF& g) {
      for (float v : g.raw())
        if (v > kContactThresholdPa) return true;
      return false;
    };
    row.contact_est = any(est[i]);
    row.contact_gt = any(gt[i]);
    rows.push_back(row);
    mean_ciou += row.contact_iou;
    mean_viou += row.vol_iou;
    mean_mae += row.mae_pa;
  }
  const double n = static_cast<double>(est.size());
  std::cout << "frames: " << est.size() << "\n";
  std::cout << "contact_iou: " << mean_ciou / n << "\n";
  std::cout << "vol_iou: " << mean_viou / n << "\n";
  std::cout << "mae_pa: " << mean_mae / n << "\n";
  if (est.size() > 1)
    std::cout << "temporal_accuracy: " << metric_temporal_accuracy(est, gt) << "\n";
  if (!csv_path.empty()) write_metrics_csv(csv_path, rows);
  return 0;
}

int cmd_track_markers(const std::string& ir_dir, const std::string& layout_path,
                      const std::string& intrinsics_path, const std::string& out_path,
                      double threshold) {
  const MarkerLayout layout =
      layout_path.empty() ? canonical_marker_layout() : load_marker_layout(layout_path);
  const auto cams = load_cameras(intrinsics_path);
  if (cams.empty()) throw DataError("track-markers: no cameras in " + intrinsics_path);
  std::vector<ImageF> frames;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ir_dir)) {
    const auto ext = e.path().extension();
    if (ext == ".raw" || ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (f.extension() == ".raw") {
      frames.push_back(read_raw(f.string()));
    } else {
      const ImageU8 png = read_png(f.string());
      ImageF img(png.width(), png.height(), 1, 0.f);
      for (int y = 0; y < png.height(); ++y)
        for (int x = 0; x < png.width(); ++x) img.at(x, y) = png.at(x, y, 0);
      frames.push_back(std::move(img));
    }
  }
  if (frames.empty()) throw DataError("track-markers: no frames in " + ir_dir);
  TrackingConfig config;
  config.intensity_threshold = threshold;
  const PoseTimeline tl = track_camera(frames, layout, cams[0], config);
  json arr = json::array();
  for (size_t i = 0; i < tl.poses.size(); ++i) {
    json jp;
    jp["frame"] = i;
    jp["timestamp"] = tl.timestamps[i];
    jp["interpolated"] = static_cast<bool>(tl.interpolated[i]);
    jp["reprojection_px"] = tl.reprojection_px[i];
    const auto& p = *tl.poses[i];
    jp["rotation_wxyz"] = {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()};
    jp["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
    arr.push_back(jp);
  }
  std::ofstream os(out_path);
  if (!os) throw DataError("track-markers: cannot open " + out_path);
  os << arr.dump(2);
  std::cerr << "tracked " << frames.size() << " frames -> " << out_path << "\n";
  return 0;
}

int cmd_sync_check(const std::string& dir, int simulate, int devices, uint64_t seed,
                   int midstream) {
  std::vector<DeviceStream> streams;
  if (simulate > 0) {
    SimRigConfig config;
    config.devices = devices;
    config.midstream_loss_devices = midstream;
    int failures = 0;
    for (int k = 0; k < simulate; ++k) {
      const SimulatedRig rig = simulate_rig(config, seed + k);
      const SyncReport report = synchronize(rig.streams);
      const bool expect_ok = !rig.midstream_loss_injected;
      if (report.counts_verified != expect_ok) ++failures;
    }
    std::cout << "simulated rigs: " << simulate << "\n";
    std::cout << "verification mismatches: " << failures << "\n";
    return 0;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) streams.push_back(load_stream_csv(f.string()));
  if (streams.empty()) throw DataError("sync-check: no stream CSVs in " + dir);
  const SyncReport report = synchronize(streams);
  for (const auto& d : report.devices) {
    std::cout << d.device_id << ": anchor=" << d.anchor_index
              << " frames_between=" << d.frames_between << (d.degraded ? " (degraded)" : "")
              << "\n";
  }
  std::cout << "counts_verified: " << (report.counts_verified ? "yes" : "no") << "\n";
  for (const auto& id : report.mismatched_devices)
    std::cout << "mismatched: " << id << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handpress: multi-view hand mesh annotation with surface pressure"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "worker thread count (0 = all cores)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence");
  std::string synth_out, synth_config;
  uint64_t synth_seed = 0;
  int synth_frames = 0, synth_cameras = 0, synth_size = 0;
  synth->add_option("--out", synth_out, "output sequence directory")->required();
  synth->add_option("--config", synth_config, "scenario JSON");
  synth->add_option("--seed", synth_seed, "override scenario seed");
  synth->add_option("--frames", synth_frames, "override frame count");
  synth->add_option("--cameras", synth_cameras, "override camera count");
  synth->add_option("--size", synth_size, "override image size");

  auto* annotate = app.add_subcommand("annotate", "run the two-stage annotation");
  std::string ann_seq, ann_out, ann_config, ann_beta;
  int ann_batch = 0, ann_iters_pose = 0, ann_iters_shape = 0;
  annotate->add_option("sequence", ann_seq, "sequence directory")->required();
  annotate->add_option("--out", ann_out, "annotation output directory");
  annotate->add_option("--config", ann_config, "optimizer config JSON");
  annotate->add_option("--beta", ann_beta, "calibrated beta JSON");
  annotate->add_option("--batch", ann_batch, "batch size override");
  annotate->add_option("--iters-pose", ann_iters_pose, "pose iterations override");
  annotate->add_option("--iters-shape", ann_iters_shape, "shape iterations override");

  auto* calib = app.add_subcommand("calibrate-beta", "estimate shape coefficients");
  std::string cal_seq, cal_out, cal_config;
  calib->add_option("sequence", cal_seq, "calibration sequence directory")->required();
  calib->add_option("--out", cal_out, "output beta JSON")->required();
  calib->add_option("--config", cal_config, "optimizer config JSON");

  auto* bake = app.add_subcommand("bake-uv", "bake pad pressure into the hand UV atlas");
  std::string bake_seq, bake_ann, bake_out, bake_preview;
  int bake_frame = 0, bake_res = 256;
  bake->add_option("sequence", bake_seq, "sequence directory")->required();
  bake->add_option("frame", bake_frame, "frame index")->required();
  bake->add_option("--annotations", bake_ann, "annotation directory (default: gt)");
  bake->add_option("--out", bake_out, "output raw grid")->required();
  bake->add_option("--resolution", bake_res, "UV resolution");
  bake->add_option("--png", bake_preview, "heat map preview PNG");

  auto* evaluate = app.add_subcommand("evaluate", "pressure metrics between two grids");
  std::string ev_est, ev_gt, ev_csv;
  evaluate->add_option("estimate", ev_est, "raw grid or directory")->required();
  evaluate->add_option("groundtruth", ev_gt, "raw grid or directory")->required();
  evaluate->add_option("--csv", ev_csv, "per-frame metrics CSV");

  auto* track = app.add_subcommand("track-markers", "camera pose from IR marker frames");
  std::string tr_dir, tr_layout, tr_intr, tr_out;
  double tr_threshold = 128.0;
  track->add_option("frames", tr_dir, "directory of IR frames (.raw/.png)")->required();
  track->add_option("--layout", tr_layout, "marker layout JSON (default: built-in)");
  track->add_option("--intrinsics", tr_intr, "camera calibration JSON")->required();
  track->add_option("--out", tr_out, "pose timeline JSON")->required();
  track->add_option("--threshold", tr_threshold, "IR intensity threshold");

  auto* sync = app.add_subcommand("sync-check", "verify multi-device synchronization");
  std::string sync_dir;
  int sync_sim = 0, sync_devices = 8, sync_midstream = 0;
  uint64_t sync_seed = 1;
  sync->add_option("streams", sync_dir, "directory of device stream CSVs");
  sync->add_option("--simulate", sync_sim, "run N simulated rigs instead");
  sync->add_option("--devices", sync_devices, "simulated device count");
  sync->add_option("--seed", sync_seed, "simulation seed");
  sync->add_option("--midstream-loss", sync_midstream, "devices with mid-stream loss");

  auto* render = app.add_subcommand("render", "render a hand state to images");
  std::string r_model, r_cams, r_state, r_out, r_pad;
  render->add_option("--model", r_model, "hand model JSON")->required();
  render->add_option("--cameras", r_cams, "camera calibration JSON")->required();
  render->add_option("--state", r_state, "hand state JSON")->required();
  render->add_option("--out", r_out, "output directory")->required();
  render->add_option("--pad", r_pad, "pad geometry JSON for the virtual view");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  set_thread_count(threads);
  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_config, synth_seed, synth_frames, synth_cameras,
                       synth_size);
    if (annotate->parsed())
      return cmd_annotate(ann_seq, ann_out, ann_config, ann_beta, ann_batch, ann_iters_pose,
                          ann_iters_shape);
    if (calib->parsed()) return cmd_calibrate(cal_seq, cal_out, cal_config);
    if (bake->parsed())
      return cmd_bake_uv(bake_seq, bake_frame, bake_ann, bake_out, bake_res, bake_preview);
    if (evaluate->parsed()) return cmd_evaluate(ev_est, ev_gt, ev_csv);
    if (track->parsed())
      return cmd_track_markers(tr_dir, tr_layout, tr_intr, tr_out, tr_threshold);
    if (sync->parsed())
      return cmd_sync_check(sync_dir, sync_sim, sync_devices, sync_seed, sync_midstream);
    if (render->parsed()) return cmd_render(r_model, r_cams, r_state, r_out, r_pad);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
