// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Pose error metrics and multi-person evaluation.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "ivt/pose.hpp"

namespace ivt::metrics {

using pose::Pose3D;

/// Mean per-joint Euclidean distance; with root_align both poses are first
/// translated so their roots coincide. Throws ContractError on J mismatch.
double mpjpe(const Pose3D& pred, const Pose3D& gt, bool root_align);

enum class Alignment { similarity, rigid };

struct AlignedError {
  double error = 0.0;
  /// Alignment was skipped (fewer than 3 joints, collinear ground truth or a
  /// collapsed prediction); error is then the root-aligned MPJPE.
  bool degenerate = false;
};

/// MPJPE after the least-squares similarity (or rigid) transform of pred onto
/// gt. Reflections are excluded.
AlignedError pa_mpjpe(const Pose3D& pred, const Pose3D& gt,
                      Alignment alignment = Alignment::similarity);

/// Mean |z_pred - z_gt| after root alignment.
double depth_error(const Pose3D& pred, const Pose3D& gt);

/// Greedy matching by ascending root distance (ties: gt index, then pred
/// index). Returns (pred, gt) pairs.
std::vector<std::pair<std::size_t, std::size_t>> greedy_match(const std::vector<Pose3D>& pred,
                                                              const std::vector<Pose3D>& gt);

struct EvalOptions {
  bool root_align = true;
  Alignment alignment = Alignment::similarity;
};

struct FrameReport {
  std::size_t frame = 0;
  std::size_t matched = 0;
  std::size_t misses = 0;  // ground truths left unmatched
  std::size_t degenerate = 0;
  std::optional<double> mpjpe, pa_mpjpe, depth_error;
};

struct EvalReport {
  std::vector<FrameReport> frames;
  std::size_t matched = 0;
  std::size_t misses = 0;
  /// Means over all matched pairs; absent when nothing matched.
  std::optional<double> mpjpe, pa_mpjpe, depth_error;
};

EvalReport match_and_evaluate(const std::vector<std::vector<Pose3D>>& pred,
                              const std::vector<std::vector<Pose3D>>& gt,
                              const EvalOptions& options = {});

/// "frame,persons_matched,mpjpe,pa_mpjpe,depth_error"; absent values are empty fields.
void write_report_csv(std::ostream& os, const EvalReport& report);

bool operator==(const FrameReport& a, const FrameReport& b);
bool operator==(const EvalReport& a, const EvalReport& b);

}  // namespace ivt::metrics
