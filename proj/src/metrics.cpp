// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <tuple>

#include "ivt/errors.hpp"

namespace ivt::metrics {

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

void check_joints(const Pose3D& pred, const Pose3D& gt) {
  if (pred.size() != gt.size())
    throw ContractError("pose joint counts differ: " + std::to_string(pred.size()) + " vs " +
                        std::to_string(gt.size()));
  if (gt.size() == 0) throw ContractError("poses have no joints");
}

Points to_points(const Pose3D& p) {
  Points m(static_cast<Eigen::Index>(p.size()), 3);
  for (std::size_t j = 0; j < p.size(); ++j)
    for (int d = 0; d < 3; ++d) m(static_cast<Eigen::Index>(j), d) = p.joints[j][d];
  return m;
}

double mean_distance(const Points& a, const Points& b) {
  return (a - b).rowwise().norm().mean();
}

double root_distance(const Pose3D& a, const Pose3D& b) {
  double s = 0.0;
  for (int d = 0; d < 3; ++d) s += (a.root()[d] - b.root()[d]) * (a.root()[d] - b.root()[d]);
  return std::sqrt(s);
}

std::optional<double> mean_of(double sum, std::size_t n) {
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

double mpjpe(const Pose3D& pred, const Pose3D& gt, bool root_align) {
  check_joints(pred, gt);
  double total = 0.0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) {
      double diff = pred.joints[j][d] - gt.joints[j][d];
      if (root_align) diff -= pred.root()[d] - gt.root()[d];
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(gt.size());
}

AlignedError pa_mpjpe(const Pose3D& pred, const Pose3D& gt, Alignment alignment) {
  check_joints(pred, gt);
  if (gt.size() < 3) return {mpjpe(pred, gt, true), true};
  const Points x = to_points(pred), y = to_points(gt);
  const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
  const Points x0 = x.rowwise() - mx, y0 = y.rowwise() - my;

  const Eigen::JacobiSVD<Eigen::MatrixXd> shape_svd(y0);
  const auto sv = shape_svd.singularValues();
  const double xnorm2 = x0.squaredNorm();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0) || !(xnorm2 > 1e-24))
    return {mpjpe(pred, gt, true), true};

  // Rotation maximizing trace(R·H) with H = x0ᵀ·y0, reflections excluded.
  const Eigen::Matrix3d h = x0.transpose() * y0;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Vector3d d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  const Eigen::Matrix3d r = v * d.asDiagonal() * u.transpose();
  const double s =
      alignment == Alignment::similarity ? svd.singularValues().dot(d) / xnorm2 : 1.0;
  const Points aligned = ((s * (r * x0.transpose())).transpose()).rowwise() + my;
  return {mean_distance(aligned, y), false};
}

double depth_error(const Pose3D& pred, const Pose3D& gt) {
  check_joints(pred, gt);
  const double shift = pred.root()[2] - gt.root()[2];
  double total = 0.0;
  for (std::size_t j = 0; j < gt.size(); ++j)
    total += std::abs(pred.joints[j][2] - gt.joints[j][2] - shift);
  return total / static_cast<double>(gt.size());
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_match(const std::vector<Pose3D>& pred,
                                                              const std::vector<Pose3D>& gt) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t p = 0; p < pred.size(); ++p)
      pairs.emplace_back(root_distance(pred[p], gt[g]), g, p);
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> used_gt(gt.size(), false), used_pred(pred.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [dist, g, p] : pairs) {
    if (used_gt[g] || used_pred[p]) continue;
    used_gt[g] = used_pred[p] = true;
    out.emplace_back(p, g);
  }
  return out;
}

EvalReport match_and_evaluate(const std::vector<std::vector<Pose3D>>& pred,
                              const std::vector<std::vector<Pose3D>>& gt,
                              const EvalOptions& options) {
  if (pred.size() != gt.size())
    throw ContractError("prediction covers " + std::to_string(pred.size()) +
                        " frames, ground truth " + std::to_string(gt.size()));
  EvalReport report;
  double sum_mpjpe = 0.0, sum_pa = 0.0, sum_depth = 0.0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    FrameReport fr;
    fr.frame = f;
    double m = 0.0, pa = 0.0, dz = 0.0;
    for (const auto& [p, g] : greedy_match(pred[f], gt[f])) {
      m += mpjpe(pred[f][p], gt[f][g], options.root_align);
      const auto a = pa_mpjpe(pred[f][p], gt[f][g], options.alignment);
      pa += a.error;
      fr.degenerate += a.degenerate ? 1 : 0;
      dz += depth_error(pred[f][p], gt[f][g]);
      ++fr.matched;
    }
    fr.misses = gt[f].size() - fr.matched;
    fr.mpjpe = mean_of(m, fr.matched);
    fr.pa_mpjpe = mean_of(pa, fr.matched);
    fr.depth_error = mean_of(dz, fr.matched);
    sum_mpjpe += m;
    sum_pa += pa;
    sum_depth += dz;
    report.matched += fr.matched;
    report.misses += fr.misses;
    report.frames.push_back(fr);
  }
  report.mpjpe = mean_of(sum_mpjpe, report.matched);
  report.pa_mpjpe = mean_of(sum_pa, report.matched);
  report.depth_error = mean_of(sum_depth, report.matched);
  return report;
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  const auto field = [](const std::optional<double>& v) {
    return v ? pose::format_double(*v) : std::string();
  };
  os << "frame,persons_matched,mpjpe,pa_mpjpe,depth_error\n";
  for (const auto& f : report.frames)
    os << f.frame << ',' << f.matched << ',' << field(f.mpjpe) << ',' << field(f.pa_mpjpe) << ','
       << field(f.depth_error) << '\n';
}

bool operator==(const FrameReport& a, const FrameReport& b) {
  return a.frame == b.frame && a.matched == b.matched && a.misses == b.misses &&
         a.degenerate == b.degenerate && a.mpjpe == b.mpjpe && a.pa_mpjpe == b.pa_mpjpe &&
         a.depth_error == b.depth_error;
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  return a.frames == b.frames && a.matched == b.matched && a.misses == b.misses &&
         a.mpjpe == b.mpjpe && a.pa_mpjpe == b.pa_mpjpe && a.depth_error == b.depth_error;
}

}  // namespace ivt::metrics
