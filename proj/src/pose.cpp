// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/pose.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "ivt/errors.hpp"

namespace ivt::pose {

namespace {

long nearest(double v) {
  if (!std::isfinite(v)) return std::numeric_limits<long>::min();
  return std::lround(std::clamp(v, -1e9, 1e9));
}

}  // namespace

std::size_t center_pixel(const Pose3D& pose, std::size_t height, std::size_t width) {
  const long x = nearest(pose.root()[0]), y = nearest(pose.root()[1]);
  if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height))
    throw ContractError("person center outside the map");
  return static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
}

Targets encode_targets(const std::vector<Pose3D>& poses, std::size_t joints, std::size_t height,
                       std::size_t width, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
  const std::size_t hw = height * width;
  Targets t;
  t.joints = joints;
  t.height = height;
  t.width = width;
  t.heatmap.assign(hw, 0.0);
  t.offsets3d.assign(3 * joints * hw, 0.0);
  t.offsets2d.assign(2 * joints * hw, 0.0);

  std::vector<std::size_t> center(poses.size());
  for (std::size_t p = 0; p < poses.size(); ++p) {
    if (poses[p].size() != joints)
      throw ContractError("pose " + std::to_string(p) + " has " +
                          std::to_string(poses[p].size()) + " joints, expected " +
                          std::to_string(joints));
    try {
      center[p] = center_pixel(poses[p], height, width);
    } catch (const ContractError&) {
      throw ContractError("pose " + std::to_string(p) + " has its center outside the " +
                          std::to_string(height) + "x" + std::to_string(width) + " map");
    }
  }

  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& pose : poses) {
    const double cx = pose.root()[0], cy = pose.root()[1];
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        double& h = t.heatmap[y * width + x];
        h = std::max(h, std::exp(-(dx * dx + dy * dy) * inv));
      }
  }

  // Owner of each center pixel: nearest root, then lowest index.
  std::vector<std::size_t> owner;
  for (std::size_t p = 0; p < poses.size(); ++p) {
    const auto dist = [&](std::size_t q) {
      const double px = static_cast<double>(center[q] % width);
      const double py = static_cast<double>(center[q] / width);
      const double dx = poses[q].root()[0] - px, dy = poses[q].root()[1] - py;
      return dx * dx + dy * dy;
    };
    bool owns = true;
    for (std::size_t q = 0; q < poses.size() && owns; ++q)
      if (q != p && center[q] == center[p])
        owns = dist(p) < dist(q) || (dist(p) == dist(q) && p < q);
    if (owns) owner.push_back(p);
  }
  for (std::size_t p : owner) {
    const std::size_t c = center[p];
    const double px = static_cast<double>(c % width), py = static_cast<double>(c / width);
    for (std::size_t j = 0; j < joints; ++j) {
      const auto& jt = poses[p].joints[j];
      t.offsets3d[(3 * j) * hw + c] = jt[0] - px;
      t.offsets3d[(3 * j + 1) * hw + c] = jt[1] - py;
      t.offsets3d[(3 * j + 2) * hw + c] = jt[2];
      t.offsets2d[(2 * j) * hw + c] = jt[0] - px;
      t.offsets2d[(2 * j + 1) * hw + c] = jt[1] - py;
    }
    t.centers.push_back(c);
  }
  std::sort(t.centers.begin(), t.centers.end());
  return t;
}

std::vector<double> keypoint_nms(std::span<const double> heatmap, std::size_t height,
                                 std::size_t width, std::size_t window) {
  if (window == 0 || window % 2 == 0)
    throw ConfigError("NMS window must be odd, got " + std::to_string(window));
  if (heatmap.size() != height * width)
    throw DimensionError("heatmap holds " + std::to_string(heatmap.size()) + " values, expected " +
                         std::to_string(height * width));
  const long r = static_cast<long>(window / 2);
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  std::vector<double> out(heatmap.size(), 0.0);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const double v = heatmap[static_cast<std::size_t>(y * w + x)];
      bool keep = true;
      for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r) && keep; ++yy)
        for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx)
          if (heatmap[static_cast<std::size_t>(yy * w + xx)] > v) {
            keep = false;
            break;
          }
      if (keep) out[static_cast<std::size_t>(y * w + x)] = v;
    }
  return out;
}

std::vector<Pose3D> decode_poses(std::span<const double> heatmap,
                                 std::span<const double> offsets3d, std::size_t joints,
                                 std::size_t height, std::size_t width, double threshold,
                                 std::size_t max_people) {
  const std::size_t hw = height * width;
  if (offsets3d.size() != 3 * joints * hw)
    throw DimensionError("3D offset map holds " + std::to_string(offsets3d.size()) +
                         " values, expected " + std::to_string(3 * joints * hw));
  if (max_people == 0) throw ContractError("max_people must be at least 1");
  if (std::isnan(threshold)) throw ContractError("decode threshold is NaN");
  const auto peaks = keypoint_nms(heatmap, height, width, 3);
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < hw; ++i)
    if (peaks[i] >= threshold && peaks[i] > 0.0) picked.push_back(i);
  std::stable_sort(picked.begin(), picked.end(),
                   [&](std::size_t a, std::size_t b) { return peaks[a] > peaks[b]; });
  if (picked.size() > max_people) picked.resize(max_people);

  std::vector<Pose3D> out;
  for (std::size_t c : picked) {
    const double px = static_cast<double>(c % width), py = static_cast<double>(c / width);
    Pose3D p;
    p.score = peaks[c];
    p.joints.resize(joints);
    for (std::size_t j = 0; j < joints; ++j)
      p.joints[j] = {px + offsets3d[(3 * j) * hw + c], py + offsets3d[(3 * j + 1) * hw + c],
                     offsets3d[(3 * j + 2) * hw + c]};
    out.push_back(std::move(p));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& token) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  const auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw FormatError("not a number: '" + token + "'");
  return v;
}

std::string format_pose_line(std::size_t frame, std::size_t person, const Pose3D& pose) {
  std::string line = std::to_string(frame) + ' ' + std::to_string(person) + ' ' +
                     format_double(pose.score);
  for (const auto& j : pose.joints)
    for (double v : j) line += ' ' + format_double(v);
  return line;
}

PoseRecord parse_pose_line(const std::string& line, std::size_t joints) {
  std::istringstream is(line);
  std::vector<std::string> tokens;
  for (std::string tok; is >> tok;) tokens.push_back(tok);
  if (tokens.size() < 3 || (tokens.size() - 3) % 3 != 0)
    throw FormatError("pose line needs frame, person, score and joint triples: '" + line + "'");
  const std::size_t count = (tokens.size() - 3) / 3;
  if (joints != 0 && count != joints)
    throw FormatError("pose line has " + std::to_string(count) + " joints, expected " +
                      std::to_string(joints));
  const auto index = [&](const std::string& tok) {
    std::size_t v = 0;
    const char* end = tok.data() + tok.size();
    const auto res = std::from_chars(tok.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end)
      throw FormatError("not an index: '" + tok + "'");
    return v;
  };
  PoseRecord r;
  r.frame = index(tokens[0]);
  r.person = index(tokens[1]);
  r.pose.score = parse_double(tokens[2]);
  r.pose.joints.resize(count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t d = 0; d < 3; ++d) r.pose.joints[j][d] = parse_double(tokens[3 + 3 * j + d]);
  return r;
}

void write_pose_lines(std::ostream& os, std::size_t frame, const std::vector<Pose3D>& poses) {
  for (std::size_t p = 0; p < poses.size(); ++p) os << format_pose_line(frame, p, poses[p]) << '\n';
}

}  // namespace ivt::pose
