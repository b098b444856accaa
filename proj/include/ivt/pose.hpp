// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Center-heatmap pose codec. A person is anchored at the pixel under its root
// joint (index 0); the 3D offset map stores, at that pixel, the vector from
// the pixel to every joint. x and y are in feature cells, z is the absolute
// depth (the center pixel itself sits at depth 0).

#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ivt::pose {

inline constexpr std::size_t kRootJoint = 0;

struct Pose3D {
  std::vector<std::array<double, 3>> joints;
  double score = 1.0;

  std::size_t size() const { return joints.size(); }
  const std::array<double, 3>& root() const { return joints.at(kRootJoint); }
};

/// Per-frame supervision, all row-major.
struct Targets {
  std::size_t joints = 0, height = 0, width = 0;
  std::vector<double> heatmap;    // H×W
  std::vector<double> offsets3d;  // 3J×H×W, triple (3j..3j+2) = (dx, dy, dz)
  std::vector<double> offsets2d;  // 2J×H×W, pair (2j, 2j+1) = (dx, dy)
  /// Center pixels (y·W + x) holding offsets, in ascending order.
  std::vector<std::size_t> centers;
};

/// Pixel under the root joint (nearest integer coordinates).
std::size_t center_pixel(const Pose3D& pose, std::size_t height, std::size_t width);

/// Throws ContractError naming the pose index when a center falls outside the
/// map. When two people share a center pixel the one whose root lies nearer
/// to it owns the offsets (ties: lower index).
Targets encode_targets(const std::vector<Pose3D>& poses, std::size_t joints, std::size_t height,
                       std::size_t width, double sigma);

/// Keeps pixels equal to the maximum of their window×window neighbourhood
/// (clipped at the border), zeroes the rest.
std::vector<double> keypoint_nms(std::span<const double> heatmap, std::size_t height,
                                 std::size_t width, std::size_t window);

/// NMS (window 3), threshold, sort by confidence (ties: pixel index), keep
/// the first max_people, and read the 3D offsets at each surviving pixel.
std::vector<Pose3D> decode_poses(std::span<const double> heatmap,
                                 std::span<const double> offsets3d, std::size_t joints,
                                 std::size_t height, std::size_t width, double threshold,
                                 std::size_t max_people);

// ---- text format ------------------------------------------------------------
// One person per line: "frame person score j0x j0y j0z j1x ...", shortest
// round-trip decimal form, independent of the C locale.

struct PoseRecord {
  std::size_t frame = 0;
  std::size_t person = 0;
  Pose3D pose;
};

std::string format_pose_line(std::size_t frame, std::size_t person, const Pose3D& pose);
/// Throws FormatError on malformed input; `joints` = 0 accepts any count.
PoseRecord parse_pose_line(const std::string& line, std::size_t joints = 0);
void write_pose_lines(std::ostream& os, std::size_t frame, const std::vector<Pose3D>& poses);

/// Shortest round-trip representation of v.
std::string format_double(double v);
/// Throws FormatError unless the whole token is a number.
double parse_double(const std::string& token);

}  // namespace ivt::pose
