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
#include "handpress/annotator.hpp"

#include <fstream>

#include <json.hpp>

namespace handpress {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("OptimizerConfig: batch_size >= 1");
  // temporal loss is silently skipped for batches shorter than 3 frames
  const double lrs[] = {lr_theta, lr_translation, lr_beta, lr_dvert, lr_texture, lr_pressure};
  for (double lr : lrs)
    if (!(lr > 0)) throw std::invalid_argument("OptimizerConfig: learning rates positive");
  if (!(sigma0 > 0) || !(sigma_decay > 0) || epochs < 1)
    throw std::invalid_argument("OptimizerConfig: invalid annealing schedule");
  weights.validate();
}

OptimizerConfig load_optimizer_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_optimizer_config: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError("load_optimizer_config: parse error: " + std::string(e.what()));
  }
  OptimizerConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iters_pose = j.value("iters_pose", c.iters_pose);
  c.iters_shape = j.value("iters_shape", c.iters_shape);
  c.iters_calibration = j.value("iters_calibration", c.iters_calibration);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_theta = j.value("lr_theta", c.lr_theta);
  c.lr_translation = j.value("lr_translation", c.lr_translation);
  c.lr_beta = j.value("lr_beta", c.lr_beta);
  c.lr_dvert = j.value("lr_dvert", c.lr_dvert);
  c.lr_texture = j.value("lr_texture", c.lr_texture);
  c.lr_pressure = j.value("lr_pressure", c.lr_pressure);
  c.sigma0 = j.value("sigma0", c.sigma0);
  c.sigma_decay = j.value("sigma_decay", c.sigma_decay);
  c.lr_epoch_decay = j.value("lr_epoch_decay", c.lr_epoch_decay);
  c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
  c.convergence_rel_tol = j.value("convergence_rel_tol", c.convergence_rel_tol);
  c.patience = j.value("patience", c.patience);
  c.temporal_in_pose_stage = j.value("temporal_in_pose_stage", c.temporal_in_pose_stage);
  c.analytic_gradients = j.value("analytic_gradients", c.analytic_gradients);
  c.appearance_texture_size = j.value("appearance_texture_size", c.appearance_texture_size);
  c.pressure_texture_size = j.value("pressure_texture_size", c.pressure_texture_size);
  c.left_hand = j.value("left_hand", c.left_hand);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.lambda_mask = w.value("lambda_mask", c.weights.lambda_mask);
    c.weights.lambda_appearance = w.value("lambda_appearance", c.weights.lambda_appearance);
    c.weights.lambda_depth = w.value("lambda_depth", c.weights.lambda_depth);
    c.weights.intersection = w.value("intersection", c.weights.intersection);
    c.weights.arap = w.value("arap", c.weights.arap);
    c.weights.laplacian = w.value("laplacian", c.weights.laplacian);
    c.weights.normal_consistency = w.value("normal_consistency", c.weights.normal_consistency);
    c.weights.offset = w.value("offset", c.weights.offset);
    c.weights.temporal = w.value("temporal", c.weights.temporal);
    c.weights.virtual_pressure = w.value("virtual_pressure", c.weights.virtual_pressure);
    c.weights.virtual_contact = w.value("virtual_contact", c.weights.virtual_contact);
    c.weights.beta_l2 = w.value("beta_l2", c.weights.beta_l2);
  }
  c.validate();
  return c;
}

void save_optimizer_config(const OptimizerConfig& c, const std::string& path) {
  json j;
  j["batch_size"] = c.batch_size;
  j["iters_pose"] = c.iters_pose;
  j["iters_shape"] = c.iters_shape;
  j["iters_calibration"] = c.iters_calibration;
  j["epochs"] = c.epochs;
  j["lr_theta"] = c.lr_theta;
  j["lr_translation"] = c.lr_translation;
  j["lr_beta"] = c.lr_beta;
  j["lr_dvert"] = c.lr_dvert;
  j["lr_texture"] = c.lr_texture;
  j["lr_pressure"] = c.lr_pressure;
  j["sigma0"] = c.sigma0;
  j["sigma_decay"] = c.sigma_decay;
  j["lr_epoch_decay"] = c.lr_epoch_decay;
  j["warmup_iters"] = c.warmup_iters;
  j["convergence_rel_tol"] = c.convergence_rel_tol;
  j["patience"] = c.patience;
  j["temporal_in_pose_stage"] = c.temporal_in_pose_stage;
  j["analytic_gradients"] = c.analytic_gradients;
  j["appearance_texture_size"] = c.appearance_texture_size;
  j["pressure_texture_size"] = c.pressure_texture_size;
  j["left_hand"] = c.left_hand;
  j["seed"] = c.seed;
  j["weights"] = {{"lambda_mask", c.weights.lambda_mask},
                  {"lambda_appearance", c.weights.lambda_appearance},
                  {"lambda_depth", c.weights.lambda_depth},
                  {"intersection", c.weights.intersection},
                  {"arap", c.weights.arap},
                  {"laplacian", c.weights.laplacian},
                  {"normal_consistency", c.weights.normal_consistency},
                  {"offset", c.weights.offset},
                  {"temporal", c.weights.temporal},
                  {"virtual_pressure", c.weights.virtual_pressure},
                  {"virtual_contact", c.weights.virtual_contact},
                  {"beta_l2", c.weights.beta_l2}};
  std::ofstream os(path);
  if (!os) throw DataError("save_optimizer_config: cannot open " + path);
  os << j.dump(2);
}

void write_loss_csv(const std::string& path, const std::vector<LossLogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw DataError("write_loss_csv: cannot open " + path);
  os << "epoch,term,value\n";
  for (const auto& r : rows) os << r.epoch << "," << r.term << "," << format_double(r.value) << "\n";
}

// ----------------------------------------------------------------------------
// Optimizer internals

namespace {

class Adam {
 public:
  void step(VecX* params, const VecX& grad, double lr) {
    if (m_.size() != params->size()) {
      m_ = VecX::Zero(params->size());
      v_ = VecX::Zero(params->size());
      t_ = 0;
    }
    ++t_;
    m_ = 0.9 * m_ + 0.1 * grad;
    v_ = 0.999 * v_ + 0.001 * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(0.9, t_);
    const double bc2 = 1.0 - std::pow(0.999, t_);
    for (int i = 0; i < params->size(); ++i) {
      const double mh = m_[i] / bc1, vh = v_[i] / bc2;
      (*params)[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }

 private:
  VecX m_, v_;
  int64_t t_ = 0;
};

// RenderOutput gradient chain for one camera: losses on the culled render,
// upstream gradients gated by the cull mask, then the rasterizer adjoint.
struct CameraLossResult {
  double mask = 0, appearance = 0, depth = 0;
  bool degenerate = false;
};

CameraLossResult camera_losses_and_grads(const Mesh& mesh, const CameraModel& camera,
                                         const Texture& texture, const ObstacleDepth& obstacle,
                                         const ImageF& gt_app, const ImageF& gt_depth,
                                         const ImageF& gt_mask, const LossWeights& w,
                                         double sigma, MatX3* d_vertices, ImageD* d_texture) {
  RasterizerOptions opts;
  opts.sigma = sigma;
  const RenderOutput raw = rasterize(mesh, camera, &texture, opts);
  ImageU8 kept;
  const RenderOutput render = depth_cull(raw, obstacle, &kept);

  CameraLossResult out;
  ImageD d_mask, d_feature, d_depth;
  const LossValue lm = mask_iou_loss_backward(render.mask, gt_mask, &d_mask);
  const LossValue la = appearance_loss_backward(render.feature, render.face_id, gt_app,
                                                gt_mask, &d_feature);
  const LossValue ld = depth_vol_iou_loss_backward(render.depth, gt_depth, &d_depth);
  out.mask = lm.value;
  out.appearance = la.value;
  out.depth = ld.value;
  out.degenerate = lm.degenerate || la.degenerate || ld.degenerate;

  for (int y = 0; y < render.mask.height(); ++y) {
    for (int x = 0; x < render.mask.width(); ++x) {
      const double gate = kept.at(x, y) ? 1.0 : 0.0;
      d_mask.at(x, y) *= w.lambda_mask * gate;
      d_depth.at(x, y) *= w.lambda_depth * gate;
      for (int c = 0; c < d_feature.channels(); ++c)
        d_feature.at(x, y, c) *= w.lambda_appearance * gate;
    }
  }
  const RenderGrad rg = rasterize_backward(mesh, camera, &texture, opts, &d_mask, &d_depth,
                                           &d_feature, &raw);
  *d_vertices += rg.d_vertices;
  if (!rg.d_texture.raw().empty()) {
    for (size_t i = 0; i < d_texture->raw().size(); ++i)
      d_texture->raw()[i] += rg.d_texture.raw()[i];
  }
  return out;
}

// dL/d(theta, beta, translation) from dL/dV.
void chain_to_params(const HandModel& model, const HandState& state, const MatX3& d_vertices,
                     bool analytic, const SkinJacobian* jac, VecX* d_theta, VecX* d_beta,
                     Vec3* d_translation) {
  const int P = model.num_pose_coeffs(), S = model.num_shape_coeffs();
  *d_theta = VecX::Zero(P);
  if (d_beta) *d_beta = VecX::Zero(S);
  *d_translation = d_vertices.colwise().sum().transpose();
  if (analytic) {
    for (int k = 0; k < P; ++k)
      (*d_theta)[k] = (d_vertices.cwiseProduct(jac->d_theta[k])).sum();
    if (d_beta)
      for (int s = 0; s < S; ++s)
        (*d_beta)[s] = (d_vertices.cwiseProduct(jac->d_beta[s])).sum();
    return;
  }
  // finite-difference fallback on the (cheap) skinning function
  const double h = 1e-6;
  for (int k = 0; k < P; ++k) {
    HandState sp = state, sm = state;
    sp.theta[k] += h;
    sm.theta[k] -= h;
    const Mesh mp = skin(model, sp), mm = skin(model, sm);
    (*d_theta)[k] = (d_vertices.cwiseProduct((mp.vertices - mm.vertices) / (2 * h))).sum();
  }
  if (d_beta) {
    for (int s = 0; s < S; ++s) {
      HandState sp = state, sm = state;
      sp.beta[s] += h;
      sm.beta[s] -= h;
      const Mesh mp = skin(model, sp), mm = skin(model, sm);
      (*d_beta)[s] = (d_vertices.cwiseProduct((mp.vertices - mm.vertices) / (2 * h))).sum();
    }
  }
}

struct PoseEval {
  double total = 0;
  std::vector<VecX> d_theta;
  std::vector<Vec3> d_translation;
  VecX d_beta;  // shared, calibration only
  ImageD d_texture;
  std::vector<std::vector<std::pair<double, double>>> cam_losses;  // (mask, depth)
  std::string nonfinite_where;
};

PoseEval eval_pose_batch(const LoadedSequence& seq, int frame_begin, int frame_end,
                         const HandModel& model, const std::vector<HandState>& states,
                         const Texture& texture, double sigma, const OptimizerConfig& config,
                         const std::vector<ObstacleDepth>& obstacles, bool with_beta) {
  const int B = frame_end - frame_begin;
  PoseEval ev;
  ev.d_theta.resize(B);
  ev.d_translation.assign(B, Vec3::Zero());
  ev.d_texture = ImageD(texture.values.width(), texture.values.height(),
                        texture.values.channels(), 0.0);
  ev.d_beta = VecX::Zero(model.num_shape_coeffs());
  ev.cam_losses.resize(B);
  const std::vector<Obb> colliders = {seq.pad.collision_box()};

  std::vector<MatX3> joints(B);
  std::vector<MatX3> d_joints;
  std::vector<MatX3> dLdV(B);
  std::vector<SkinJacobian> jacs(B);
  std::vector<Mesh> meshes(B);

  for (int b = 0; b < B; ++b) {
    const int f = frame_begin + b;
    meshes[b] = skin_with_jacobian(model, states[b],
                                   config.analytic_gradients ? &jacs[b] : nullptr);
    dLdV[b] = MatX3::Zero(model.num_vertices(), 3);
    const ObservationFrame& obs = seq.frames[f];
    for (size_t ci = 0; ci < seq.cameras.size(); ++ci) {
      const CameraLossResult cl = camera_losses_and_grads(
          meshes[b], seq.cameras[ci], texture, obstacles[ci], obs.appearance[ci],
          obs.depth[ci], obs.mask[ci], config.weights, sigma, &dLdV[b], &ev.d_texture);
      if (!std::isfinite(cl.mask) || !std::isfinite(cl.appearance) || !std::isfinite(cl.depth)) {
        ev.nonfinite_where = "frame " + std::to_string(f) + " camera " + seq.cameras[ci].id;
        return ev;
      }
      ev.total += config.weights.lambda_mask * cl.mask +
                  config.weights.lambda_appearance * cl.appearance +
                  config.weights.lambda_depth * cl.depth;
      ev.cam_losses[b].emplace_back(cl.mask, cl.depth);
    }
    if (config.weights.intersection > 0) {
      MatX3 d_insec;
      const double li = intersection_loss_backward(meshes[b], colliders, &d_insec);
      ev.total += config.weights.intersection * li;
      dLdV[b] += config.weights.intersection * d_insec;
    }
    joints[b] = regress_joints(model, meshes[b]);
  }

  if (config.temporal_in_pose_stage && config.weights.temporal > 0 && B >= 3) {
    const double lt = temporal_loss_backward(joints, &d_joints);
    ev.total += config.weights.temporal * lt;
    for (int b = 0; b < B; ++b)
      dLdV[b] += config.weights.temporal * (model.joint_regressor.transpose() * d_joints[b]);
  }

  for (int b = 0; b < B; ++b) {
    VecX d_beta_b;
    chain_to_params(model, states[b], dLdV[b], config.analytic_gradients, &jacs[b],
                    &ev.d_theta[b], with_beta ? &d_beta_b : nullptr, &ev.d_translation[b]);
    if (with_beta) ev.d_beta += d_beta_b;
  }
  if (with_beta) {
    const VecX& beta = states[0].beta;  // shared across frames
    ev.total += config.weights.beta_l2 * beta.squaredNorm();
    ev.d_beta += config.weights.beta_l2 * 2.0 * beta;
  }
  if (!std::isfinite(ev.total)) ev.nonfinite_where = "batch total";
  return ev;
}

double warmup_scale(int global_iter, int warmup) {
  return warmup > 0 && global_iter < warmup ? double(global_iter + 1) / warmup : 1.0;
}

}  // namespace

// ----------------------------------------------------------------------------
// Public operations

HandState initialize(const HandModel& model, const std::vector<CameraModel>& cameras,
                     const InitEstimate& estimate, const VecX& beta) {
  if (estimate.theta.size() != model.num_pose_coeffs())
    throw InitializationError("initialize: pose estimate dimension mismatch");
  std::vector<CameraModel> cams;
  std::vector<Vec2> obs;
  for (const auto& cam : cameras) {
    const auto it = estimate.root_px.find(cam.id);
    if (it == estimate.root_px.end()) continue;
    cams.push_back(cam);
    obs.push_back(it->second);
  }
  if (cams.size() < 2)
    throw InitializationError("initialize: need root estimates from at least two cameras, got " +
                              std::to_string(cams.size()));
  const TriangulationResult tri = triangulate(cams, obs);
  HandState s;
  s.theta = estimate.theta;
  s.beta = beta;
  s.d_vert = VecX::Zero(model.num_vertices());
  const Mesh mesh0 = skin(model, s.theta, s.beta, Vec3::Zero());
  const Vec3 root0 = regress_joints(model, mesh0).row(0);
  s.translation = tri.point - root0;
  return s;
}

PoseStageResult optimize_pose(const LoadedSequence& seq, int frame_begin, int frame_end,
                              const std::vector<HandState>& init_states, Texture appearance,
                              const OptimizerConfig& config) {
  config.validate();
  const HandModel& model = seq.model;
  const int B = frame_end - frame_begin;
  if (B < 1 || frame_begin < 0 || frame_end > static_cast<int>(seq.frames.size()))
    throw std::invalid_argument("optimize_pose: bad frame range");
  if (static_cast<int>(init_states.size()) != B)
    throw std::invalid_argument("optimize_pose: state count mismatch");

  std::vector<ObstacleDepth> obstacles;
  const std::vector<Obb> boxes = {seq.pad.occluder_box()};
  for (const auto& cam : seq.cameras) obstacles.push_back(render_obstacles(boxes, cam));

  PoseStageResult result;
  result.states = init_states;
  result.appearance = std::move(appearance);

  std::vector<Adam> adam_theta(B), adam_trans(B);
  Adam adam_tex;
  const int iters_per_epoch = std::max(1, config.iters_pose / config.epochs);
  int global_iter = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double sigma = config.sigma0 * std::pow(config.sigma_decay, epoch);
    const double lr_scale = std::pow(config.lr_epoch_decay, epoch);
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<HandState> best_states = result.states;
    Texture best_tex = result.appearance;
    std::vector<std::vector<std::pair<double, double>>> best_cam_losses;
    int since_improvement = 0;

    for (int it = 0; it < iters_per_epoch; ++it, ++global_iter) {
      PoseEval ev = eval_pose_batch(seq, frame_begin, frame_end, model, result.states,
                                    result.appearance, sigma, config, obstacles, false);
      if (!ev.nonfinite_where.empty())
        throw NumericalError("optimize_pose: non-finite loss at " + ev.nonfinite_where);
      if (epoch == 0 && it == 0) result.diagnostics.initial_loss = ev.total;
      if (!std::isfinite(best_loss) ||
          ev.total < best_loss - std::abs(best_loss) * config.convergence_rel_tol) {
        best_loss = ev.total;
        best_states = result.states;
        best_tex = result.appearance;
        best_cam_losses = ev.cam_losses;
        since_improvement = 0;
      } else {
        ++since_improvement;
      }
      if (since_improvement >= config.patience) break;

      const double wu = warmup_scale(global_iter, config.warmup_iters);
      for (int b = 0; b < B; ++b) {
        adam_theta[b].step(&result.states[b].theta, ev.d_theta[b],
                           config.lr_theta * lr_scale * wu);
        VecX t = result.states[b].translation;
        adam_trans[b].step(&t, VecX(ev.d_translation[b]),
                           config.lr_translation * lr_scale * wu);
        result.states[b].translation = t;
      }
      VecX tex = Eigen::Map<const VecX>(result.appearance.values.data(),
                                        result.appearance.values.size());
      VecX gtex = Eigen::Map<const VecX>(ev.d_texture.data(), ev.d_texture.size());
      adam_tex.step(&tex, gtex, config.lr_texture * lr_scale * wu);
      Eigen::Map<VecX>(result.appearance.values.data(), tex.size()) = tex;
    }
    result.states = best_states;
    result.appearance = best_tex;
    result.final_losses = best_cam_losses;
    result.diagnostics.epoch_losses.push_back(best_loss);
    result.diagnostics.final_loss = best_loss;
  }
  result.diagnostics.iterations = global_iter;
  if (result.final_losses.empty()) {
    // single-iteration epochs may never re-evaluate; fill from a fresh eval
    PoseEval ev = eval_pose_batch(seq, frame_begin, frame_end, model, result.states,
                                  result.appearance,
                                  config.sigma0 * std::pow(config.sigma_decay, config.epochs - 1),
                                  config, obstacles, false);
    result.final_losses = ev.cam_losses;
  }
  return result;
}

VecX calibrate_beta(const LoadedSequence& seq, const OptimizerConfig& config,
                    StageDiagnostics* diagnostics) {
  config.validate();
  if (seq.frames.empty())
    throw std::invalid_argument("calibrate_beta: empty calibration sequence");
  const HandModel& model = seq.model;
  const int B = static_cast<int>(seq.frames.size());

  std::vector<ObstacleDepth> obstacles;
  const std::vector<Obb> boxes = {seq.pad.occluder_box()};
  for (const auto& cam : seq.cameras) obstacles.push_back(render_obstacles(boxes, cam));

  std::vector<HandState> states;
  const VecX beta0 = VecX::Zero(model.num_shape_coeffs());
  for (int f = 0; f < B; ++f) {
    if (seq.init_estimates[f].theta.size() == 0)
      throw InitializationError("calibrate_beta: missing init estimate for frame " +
                                std::to_string(f));
    states.push_back(initialize(model, seq.cameras, seq.init_estimates[f], beta0));
  }

  Texture appearance(config.appearance_texture_size, config.appearance_texture_size, 3, 0.5);
  std::vector<Adam> adam_theta(B), adam_trans(B);
  Adam adam_tex, adam_beta;
  VecX beta = beta0;

  const int iters_per_epoch = std::max(1, config.iters_calibration / config.epochs);
  int global_iter = 0;
  StageDiagnostics diag;
  std::vector<double> trace;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double sigma = config.sigma0 * std::pow(config.sigma_decay, epoch);
    const double lr_scale = std::pow(config.lr_epoch_decay, epoch);
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<HandState> best_states = states;
    VecX best_beta = beta;
    Texture best_tex = appearance;
    int since_improvement = 0, diverging = 0;

    for (int it = 0; it < iters_per_epoch; ++it, ++global_iter) {
      for (auto& s : states) s.beta = beta;
      PoseEval ev = eval_pose_batch(seq, 0, B, model, states, appearance, sigma, config,
                                    obstacles, true);
      if (!ev.nonfinite_where.empty())
        throw CalibrationError("calibrate_beta: non-finite loss at " + ev.nonfinite_where);
      trace.push_back(ev.total);
      if (epoch == 0 && it == 0) diag.initial_loss = ev.total;
      if (!std::isfinite(best_loss) ||
          ev.total < best_loss - std::abs(best_loss) * config.convergence_rel_tol) {
        best_loss = ev.total;
        best_states = states;
        best_beta = beta;
        best_tex = appearance;
        since_improvement = 0;
      } else {
        ++since_improvement;
      }
      diverging = std::isfinite(best_loss) && best_loss > 0 && ev.total > 10.0 * best_loss
                      ? diverging + 1
                      : 0;
      if (diverging >= config.patience) {
        std::string msg = "calibrate_beta: diverging; last losses:";
        for (size_t k = trace.size() >= 5 ? trace.size() - 5 : 0; k < trace.size(); ++k)
          msg += " " + format_double(trace[k]);
        throw CalibrationError(msg);
      }
      if (since_improvement >= config.patience) break;

      const double wu = warmup_scale(global_iter, config.warmup_iters);
      for (int b = 0; b < B; ++b) {
        adam_theta[b].step(&states[b].theta, ev.d_theta[b], config.lr_theta * lr_scale * wu);
        VecX t = states[b].translation;
        adam_trans[b].step(&t, VecX(ev.d_translation[b]),
                           config.lr_translation * lr_scale * wu);
        states[b].translation = t;
      }
      adam_beta.step(&beta, ev.d_beta, config.lr_beta * lr_scale * wu);
      VecX tex = Eigen::Map<const VecX>(appearance.values.data(), appearance.values.size());
      VecX gtex = Eigen::Map<const VecX>(ev.d_texture.data(), ev.d_texture.size());
      adam_tex.step(&tex, gtex, config.lr_texture * lr_scale * wu);
      Eigen::Map<VecX>(appearance.values.data(), tex.size()) = tex;
    }
    states = best_states;
    beta = best_beta;
    appearance = best_tex;
    diag.epoch_losses.push_back(best_loss);
    diag.final_loss = best_loss;
  }
  diag.iterations = global_iter;
  if (diagnostics) *diagnostics = diag;
  return beta;
}

// ----------------------------------------------------------------------------
// Stage 2

namespace {

struct ShapeEval {
  double total = 0;
  std::vector<VecX> d_dvert;
  std::vector<ImageD> d_pressure_tex;
  ImageD d_texture;
  std::vector<std::vector<std::pair<double, double>>> cam_losses;
  std::string nonfinite_where;
};

ShapeEval eval_shape_batch(const LoadedSequence& seq, int frame_begin, int frame_end,
                           const HandModel& model, const std::vector<Mesh>& ref_meshes,
                           const std::vector<VecX>& d_verts,
                           const std::vector<Texture>& pressure_tex, const Texture& appearance,
                           double sigma, const OptimizerConfig& config,
                           const std::vector<ObstacleDepth>& obstacles) {
  const int B = frame_end - frame_begin;
  ShapeEval ev;
  ev.d_dvert.resize(B);
  ev.d_pressure_tex.resize(B);
  ev.d_texture = ImageD(appearance.values.width(), appearance.values.height(),
                        appearance.values.channels(), 0.0);
  ev.cam_losses.resize(B);
  const std::vector<Obb> colliders = {seq.pad.collision_box()};
  const LossWeights& w = config.weights;

  for (int b = 0; b < B; ++b) {
    const int f = frame_begin + b;
    const ObservationFrame& obs = seq.frames[f];
    const Mesh& ref = ref_meshes[b];
    const Mesh star = displace(ref, d_verts[b]);
    MatX3 dLdV = MatX3::Zero(model.num_vertices(), 3);

    for (size_t ci = 0; ci < seq.cameras.size(); ++ci) {
      const CameraLossResult cl = camera_losses_and_grads(
          star, seq.cameras[ci], appearance, obstacles[ci], obs.appearance[ci],
          obs.depth[ci], obs.mask[ci], w, sigma, &dLdV, &ev.d_texture);
      if (!std::isfinite(cl.mask + cl.appearance + cl.depth)) {
        ev.nonfinite_where = "frame " + std::to_string(f) + " camera " + seq.cameras[ci].id;
        return ev;
      }
      ev.total += w.lambda_mask * cl.mask + w.lambda_appearance * cl.appearance +
                  w.lambda_depth * cl.depth;
      ev.cam_losses[b].emplace_back(cl.mask, cl.depth);
    }

    // geometry objective
    if (w.intersection > 0) {
      MatX3 g;
      ev.total += w.intersection * intersection_loss_backward(star, colliders, &g);
      dLdV += w.intersection * g;
    }
    if (w.arap > 0) {
      MatX3 g;
      ev.total += w.arap * arap_loss_backward(star, ref, &g);
      dLdV += w.arap * g;
    }
    if (w.laplacian > 0) {
      MatX3 g;
      ev.total += w.laplacian * laplacian_loss_backward(star, &g);
      dLdV += w.laplacian * g;
    }
    if (w.normal_consistency > 0) {
      MatX3 g;
      ev.total += w.normal_consistency * normal_consistency_loss_backward(star, &g);
      dLdV += w.normal_consistency * g;
    }
    VecX d_off;
    ev.total += w.offset * offset_loss_backward(d_verts[b], &d_off);

    // virtual render objective
    const VirtualRender vr = rasterize_under_pad(star, seq.pad, &pressure_tex[b]);
    ImageD d_vp, d_vd;
    const VirtualRenderLoss vl = virtual_render_loss_backward(
        vr, obs.pressure, seq.pad, w.virtual_pressure, w.virtual_contact, &d_vp, &d_vd);
    ev.total += w.virtual_pressure * vl.pressure_mse + w.virtual_contact * vl.contact_l1;
    const VirtualGrad vg =
        rasterize_under_pad_backward(star, seq.pad, &pressure_tex[b], &d_vp, &d_vd);
    dLdV += vg.d_vertices;
    ev.d_pressure_tex[b] = vg.d_texture;
    if (ev.d_pressure_tex[b].raw().empty())
      ev.d_pressure_tex[b] = ImageD(pressure_tex[b].values.width(),
                                    pressure_tex[b].values.height(), 1, 0.0);

    // chain to d_vert through the fixed reference normals
    ev.d_dvert[b] = VecX::Zero(model.num_vertices());
    for (int i = 0; i < model.num_vertices(); ++i)
      ev.d_dvert[b][i] = dLdV.row(i).dot(ref.normals.row(i)) + w.offset * d_off[i];
  }
  if (!std::isfinite(ev.total)) ev.nonfinite_where = "batch total";
  return ev;
}

}  // namespace

ShapeStageResult refine_shape(const LoadedSequence& seq, int frame_begin, int frame_end,
                              const std::vector<HandState>& pose_states, Texture appearance,
                              const OptimizerConfig& config) {
  config.validate();
  const HandModel& model = seq.model;
  const int B = frame_end - frame_begin;
  if (static_cast<int>(pose_states.size()) != B)
    throw std::invalid_argument("refine_shape: state count mismatch");

  std::vector<ObstacleDepth> obstacles;
  const std::vector<Obb> boxes = {seq.pad.occluder_box()};
  for (const auto& cam : seq.cameras) obstacles.push_back(render_obstacles(boxes, cam));

  // reference meshes from the last pose epoch; their normals stay fixed
  std::vector<Mesh> ref_meshes;
  for (const auto& s : pose_states) ref_meshes.push_back(skin(model, s));

  ShapeStageResult result;
  result.states = pose_states;  // theta/translation frozen bitwise
  result.appearance = std::move(appearance);
  std::vector<VecX> d_verts(B, VecX::Zero(model.num_vertices()));
  for (int b = 0; b < B; ++b)
    result.pressure_textures.emplace_back(config.pressure_texture_size,
                                          config.pressure_texture_size, 1, 0.0);

  std::vector<Adam> adam_d(B), adam_p(B);
  Adam adam_tex;
  const int iters_per_epoch = std::max(1, config.iters_shape / config.epochs);
  int global_iter = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double sigma = config.sigma0 * std::pow(config.sigma_decay, epoch);
    const double lr_scale = std::pow(config.lr_epoch_decay, epoch);
    double best_loss = std::numeric_limits<double>::infinity();
    auto best_d = d_verts;
    auto best_p = result.pressure_textures;
    Texture best_tex = result.appearance;
    std::vector<std::vector<std::pair<double, double>>> best_cam_losses;
    int since_improvement = 0;

    for (int it = 0; it < iters_per_epoch; ++it, ++global_iter) {
      ShapeEval ev = eval_shape_batch(seq, frame_begin, frame_end, model, ref_meshes, d_verts,
                                      result.pressure_textures, result.appearance, sigma,
                                      config, obstacles);
      if (!ev.nonfinite_where.empty())
        throw NumericalError("refine_shape: non-finite loss at " + ev.nonfinite_where);
      if (epoch == 0 && it == 0) result.diagnostics.initial_loss = ev.total;
      if (!std::isfinite(best_loss) ||
          ev.total < best_loss - std::abs(best_loss) * config.convergence_rel_tol) {
        best_loss = ev.total;
        best_d = d_verts;
        best_p = result.pressure_textures;
        best_tex = result.appearance;
        best_cam_losses = ev.cam_losses;
        since_improvement = 0;
      } else {
        ++since_improvement;
      }
      if (since_improvement >= config.patience) break;

      const double wu = warmup_scale(global_iter, config.warmup_iters);
      for (int b = 0; b < B; ++b) {
        adam_d[b].step(&d_verts[b], ev.d_dvert[b], config.lr_dvert * lr_scale * wu);
        Texture& pt = result.pressure_textures[b];
        VecX p = Eigen::Map<const VecX>(pt.values.data(), pt.values.size());
        VecX gp = Eigen::Map<const VecX>(ev.d_pressure_tex[b].data(),
                                         ev.d_pressure_tex[b].size());
        adam_p[b].step(&p, gp, config.lr_pressure * lr_scale * wu);
        p = p.cwiseMax(0.0);  // pressure textures are non-negative
        Eigen::Map<VecX>(pt.values.data(), p.size()) = p;
      }
      VecX tex = Eigen::Map<const VecX>(result.appearance.values.data(),
                                        result.appearance.values.size());
      VecX gtex = Eigen::Map<const VecX>(ev.d_texture.data(), ev.d_texture.size());
      adam_tex.step(&tex, gtex, config.lr_texture * lr_scale * wu);
      Eigen::Map<VecX>(result.appearance.values.data(), tex.size()) = tex;
    }
    d_verts = best_d;
    result.pressure_textures = best_p;
    result.appearance = best_tex;
    result.final_losses = best_cam_losses;
    result.diagnostics.epoch_losses.push_back(best_loss);
    result.diagnostics.final_loss = best_loss;
  }
  result.diagnostics.iterations = global_iter;
  for (int b = 0; b < B; ++b) result.states[b].d_vert = d_verts[b];
  return result;
}

// ----------------------------------------------------------------------------
// Pipeline

std::vector<AnnotationRecord> annotate_sequence(const LoadedSequence& seq_in,
                                                const OptimizerConfig& config,
                                                const VecX& beta,
                                                std::vector<LossLogRow>* loss_log) {
  config.validate();
  const LoadedSequence* seq = &seq_in;
  LoadedSequence mirrored;
  if (config.left_hand) {
    mirrored = seq_in;
    mirrored.model = seq_in.model.mirrored_x(true);
    seq = &mirrored;
  }
  if (beta.size() != seq->model.num_shape_coeffs())
    throw std::invalid_argument("annotate_sequence: beta dimension mismatch");
  const int N = static_cast<int>(seq->frames.size());
  if (N == 0) throw std::invalid_argument("annotate_sequence: empty sequence");

  std::vector<AnnotationRecord> records;
  std::optional<HandState> carry;
  int epoch_counter = 0;

  for (int b0 = 0; b0 < N; b0 += config.batch_size) {
    const int b1 = std::min(N, b0 + config.batch_size);
    const int batch_index = b0 / config.batch_size;
    try {
      std::vector<HandState> states;
      for (int f = b0; f < b1; ++f) {
        if (seq->init_estimates[f].theta.size() == 0)
          throw InitializationError("pose provider failed for frame " + std::to_string(f));
        states.push_back(initialize(seq->model, seq->cameras, seq->init_estimates[f], beta));
      }
      if (carry) {
        states[0].theta = carry->theta;
        states[0].translation = carry->translation;
      }

      Texture appearance(config.appearance_texture_size, config.appearance_texture_size, 3, 0.5);
      PoseStageResult pose = optimize_pose(*seq, b0, b1, states, std::move(appearance), config);
      ShapeStageResult shape =
          refine_shape(*seq, b0, b1, pose.states, std::move(pose.appearance), config);

      // beta immutability: frozen bitwise across the pipeline
      for (auto& s : shape.states) s.beta = beta;

      for (int f = b0; f < b1; ++f) {
        const int b = f - b0;
        AnnotationRecord rec;
        rec.frame = f;
        rec.theta = shape.states[b].theta;
        rec.beta = beta;
        rec.translation = shape.states[b].translation;
        rec.d_vert = shape.states[b].d_vert;
        bool contact = false;
        for (const float v : seq->frames[f].pressure.grid.raw())
          if (v > kContactThresholdPa) contact = true;
        rec.contact = contact;
        if (!shape.final_losses.empty())
          for (size_t ci = 0; ci < seq->cameras.size(); ++ci)
            rec.camera_losses[seq->cameras[ci].id] = shape.final_losses[b][ci];
        UVPressureMap uv;
        uv.values = shape.pressure_textures[b].values.cast<float>();
        rec.pressure_uv = std::move(uv);
        records.push_back(std::move(rec));
      }
      carry = pose.states.back();

      if (loss_log) {
        for (size_t e = 0; e < pose.diagnostics.epoch_losses.size(); ++e)
          loss_log->push_back({epoch_counter + static_cast<int>(e), "pose.total",
                               pose.diagnostics.epoch_losses[e]});
        for (size_t e = 0; e < shape.diagnostics.epoch_losses.size(); ++e)
          loss_log->push_back({epoch_counter + static_cast<int>(e), "shape.total",
                               shape.diagnostics.epoch_losses[e]});
        epoch_counter += static_cast<int>(std::max(pose.diagnostics.epoch_losses.size(),
                                                   shape.diagnostics.epoch_losses.size()));
      }
    } catch (const std::exception& e) {
      throw NumericalError("annotate_sequence: batch " + std::to_string(batch_index) + ": " +
                           e.what());
    }
  }
  return records;
}

}  // namespace handpress
