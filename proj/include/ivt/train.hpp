// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Training driver and full-pipeline evaluation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ivt/errors.hpp"
#include "ivt/loss.hpp"
#include "ivt/metrics.hpp"
#include "ivt/model.hpp"
#include "ivt/synth.hpp"

namespace ivt::train {

struct TrainConfig {
  std::size_t steps = 500;
  double lr = 5e-4;
  /// Fractions of `steps` after which the learning rate drops 10×.
  std::vector<double> milestones{0.6, 0.8};
  std::uint64_t seed = 42;
  double clip_norm = 5.0;  // 0 disables clipping
  double alpha = 10.0;
  /// Gather along the ground-truth 2D offsets instead of the predicted ones.
  bool teacher_forcing = true;

  void validate() const;
  double lr_at(std::size_t step) const;
};

/// Adaptive-moment gradient descent (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(const ParamStore& store, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// Applies one update using the gradients currently held by the parameters
  /// (absent gradients count as zero), scaled by grad_scale.
  void step(ParamStore& store, double lr, double grad_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// L2 norm of all parameter gradients.
double gradient_norm(const ParamStore& store);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double l1_3d = 0.0, l1_2d = 0.0, l2_hm = 0.0, total = 0.0;
};

/// Raised when the loss or the gradients stop being finite.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t step, std::string checkpoint);
  std::size_t step() const { return step_; }
  /// Last parameters that produced a finite loss ("" when not saved).
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::size_t step_;
  std::string checkpoint_;
};

/// Targets of a scene in the loss's layout.
loss::Maps scene_targets(const synth::Scene& scene);
loss::CenterMask scene_mask(const synth::Scene& scene);

/// One forward pass and the loss; gradients are not computed.
loss::LossTerms evaluate_loss(const model::Model& model, const synth::Scene& scene,
                              const TrainConfig& cfg);

struct TrainOptions {
  /// Directory for last-good checkpoints on abort; empty disables saving.
  std::filesystem::path out_dir;
  /// Called after every step.
  std::function<void(const StepLog&)> on_step;
};

/// Trains in place and returns the per-step history. Step s logs the loss of
/// the parameters before its update.
std::vector<StepLog> train(model::Model& model, const synth::Scene& scene, const TrainConfig& cfg,
                           const TrainOptions& options = {});

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const StepLog& row);

struct EvalConfig {
  double threshold = 0.3;
  std::size_t max_people = 8;
  /// Gather along ground-truth 2D offsets (matches teacher-forced training).
  bool teacher_forcing = false;
  /// Decode the ground-truth targets instead of the predictions.
  bool oracle_splice = false;
  metrics::EvalOptions metrics;
};

struct Evaluation {
  metrics::EvalReport report;
  std::vector<std::vector<pose::Pose3D>> decoded;
};

Evaluation evaluate(const model::Model& model, const synth::Scene& scene, const EvalConfig& cfg);

}  // namespace ivt::train
