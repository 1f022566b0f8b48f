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
#ifndef HANDPRESS_ANNOTATOR_HPP_
#define HANDPRESS_ANNOTATOR_HPP_

#include <optional>
#include <string>
#include <vector>

#include "handpress/objectives.hpp"
#include "handpress/synthio.hpp"

namespace handpress {

struct InitializationError : DataError {
  using DataError::DataError;
};
struct CalibrationError : NumericalError {
  using NumericalError::NumericalError;
};

struct OptimizerConfig {
  int batch_size = 8;
  int iters_pose = 300;
  int iters_shape = 200;
  int iters_calibration = 500;
  int epochs = 5;  // sigma annealing and learning-rate decay steps

  double lr_theta = 0.02;
  double lr_translation = 0.002;
  double lr_beta = 0.02;
  double lr_dvert = 3e-4;
  double lr_texture = 0.08;
  double lr_pressure = 120.0;  // Pa per step

  double sigma0 = 1.0;          // soft-mask width, pixels
  double sigma_decay = 0.7;     // per epoch
  double lr_epoch_decay = 0.6;
  int warmup_iters = 30;
  double convergence_rel_tol = 1e-6;
  int patience = 12;

  bool temporal_in_pose_stage = true;
  bool analytic_gradients = true;  // false: finite-difference fallback
  int appearance_texture_size = 64;
  int pressure_texture_size = 256;
  bool left_hand = false;

  LossWeights weights;
  uint64_t seed = 12345;

  void validate() const;
};

OptimizerConfig load_optimizer_config(const std::string& path);
void save_optimizer_config(const OptimizerConfig& config, const std::string& path);

struct StageDiagnostics {
  double initial_loss = 0;
  double final_loss = 0;
  int iterations = 0;
  std::vector<double> epoch_losses;  // best loss per epoch
};

struct LossLogRow {
  int epoch = 0;
  std::string term;
  double value = 0;
};

void write_loss_csv(const std::string& path, const std::vector<LossLogRow>& rows);

/// Root translation by triangulating per-camera root estimates, pose from the
/// designated single-camera estimate. Throws InitializationError with fewer
/// than two root observations.
HandState initialize(const HandModel& model, const std::vector<CameraModel>& cameras,
                     const InitEstimate& estimate, const VecX& beta);

/// Joint optimization of per-frame pose/translation and a shared beta with
/// l2 regularization over a calibration sequence. Returns the frozen beta.
VecX calibrate_beta(const LoadedSequence& seq, const OptimizerConfig& config,
                    StageDiagnostics* diagnostics = nullptr);

/// Stage 1: minimizes render + intersection (+ temporal) losses over
/// {theta_t, t_t} for all frames jointly, with a batch-shared appearance
/// texture. Depth culling is applied before every loss evaluation.
struct PoseStageResult {
  std::vector<HandState> states;
  Texture appearance;  // batch-shared, optimized
  StageDiagnostics diagnostics;
  // per frame per camera (mask IoU, depth volumetric IoU) at the final state
  std::vector<std::vector<std::pair<double, double>>> final_losses;
};

PoseStageResult optimize_pose(const LoadedSequence& seq, int frame_begin, int frame_end,
                              const std::vector<HandState>& init_states,
                              Texture appearance, const OptimizerConfig& config);

/// Stage 2: pose and translation stay fixed (bitwise); optimizes per-vertex
/// normal offsets and the per-frame pressure UV texture against render,
/// geometry, and virtual-render objectives.
struct ShapeStageResult {
  std::vector<HandState> states;  // d_vert filled in
  std::vector<Texture> pressure_textures;
  Texture appearance;
  StageDiagnostics diagnostics;
  std::vector<std::vector<std::pair<double, double>>> final_losses;
};

ShapeStageResult refine_shape(const LoadedSequence& seq, int frame_begin, int frame_end,
                              const std::vector<HandState>& pose_states,
                              Texture appearance, const OptimizerConfig& config);

/// Full pipeline: batches of consecutive frames, stage 1 then stage 2 per
/// batch; the first frame of batch k+1 starts from the last state of batch k.
std::vector<AnnotationRecord> annotate_sequence(const LoadedSequence& seq,
                                                const OptimizerConfig& config,
                                                const VecX& beta,
                                                std::vector<LossLogRow>* loss_log = nullptr);

}  // namespace handpress

#endif  // HANDPRESS_ANNOTATOR_HPP_
