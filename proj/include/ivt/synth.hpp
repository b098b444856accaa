// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic scenes: rigid 15-joint stick figures translating by
// whole feature cells per frame, rendered as truncated Gaussian blobs. The
// generator also emits exact poses, flow and supervision targets.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "ivt/pose.hpp"
#include "ivt/tensor.hpp"
#include "ivt/video.hpp"

namespace ivt::synth {

inline constexpr std::size_t kMaxJoints = 15;

struct SceneSpec {
  std::uint64_t seed = 42;
  std::size_t persons = 1;
  std::size_t joints = 15;
  std::size_t frames = 5;
  std::size_t height = 16, width = 16;  // feature grid, in cells
  std::size_t channels = 16;
  double amplitude = 2.0;  // peak root displacement in cells
  double depth_min = 4.0, depth_max = 8.0;
  double depth_motion = 0.0;  // amplitude of the root's depth oscillation
  double sigma = 2.0;         // heatmap target width
  double blob_sigma = 0.6;
  double blob_radius = 2.0;

  /// Throws ConfigError on an invalid spec.
  void validate() const;
};

struct Scene {
  SceneSpec spec;
  Tensor features;                            // [T × C × H × W]
  std::vector<std::vector<pose::Pose3D>> poses;  // per frame
  std::vector<pose::Targets> targets;         // per frame
  video::FlowField flow;
  /// Per frame and pixel, the person whose blobs dominate it (or none).
  std::vector<std::vector<std::optional<std::size_t>>> owner;
};

/// Throws ConfigError if the spec is invalid or a skeleton would leave the grid.
Scene generate(const SceneSpec& spec);

/// Renders C×H×W for the given poses. With `only_joint` only that joint is drawn.
std::vector<double> render(const SceneSpec& spec, const std::vector<pose::Pose3D>& poses,
                           std::optional<std::size_t> only_joint = std::nullopt);

/// Joint offsets of the rest skeleton relative to the root, (x, y, z).
const std::vector<std::array<double, 3>>& skeleton_template();

/// Source of per-frame feature maps for the model.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  /// [T × C × H × W]
  virtual Tensor features(const Scene& scene) const = 0;
};

/// Hands out the rendered scene maps.
class RenderedFeatures final : public FeatureProvider {
 public:
  Tensor features(const Scene& scene) const override { return scene.features; }
};

/// Per-frame targets stacked over the clip, [T × ch × H × W].
Tensor stack_heatmaps(const Scene& scene);
Tensor stack_offsets3d(const Scene& scene);
Tensor stack_offsets2d(const Scene& scene);

// ---- manifest ---------------------------------------------------------------
// "key = value" lines for every spec field followed by one "pose ..." line per
// person and frame. Import regenerates the scene and checks the poses.

void write_manifest(std::ostream& os, const Scene& scene);
/// Throws FormatError on malformed input or pose mismatch.
Scene read_manifest(std::istream& is);
void save_manifest(const std::filesystem::path& path, const Scene& scene);
Scene load_manifest(const std::filesystem::path& path);

}  // namespace ivt::synth
