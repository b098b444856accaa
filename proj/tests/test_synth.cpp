// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ivt/errors.hpp"
#include "ivt/synth.hpp"
#include "test_util.hpp"

using namespace ivt;
using namespace ivt::synth;
using testing::bitwise_equal;

namespace {

SceneSpec small_spec() {
  SceneSpec s;
  s.channels = 4;
  s.frames = 4;
  return s;
}

}  // namespace

TEST_CASE("empty scene") {
  auto spec = small_spec();
  spec.persons = 0;
  const auto scene = generate(spec);
  for (double v : scene.features.data()) CHECK(v == 0.0);
  for (const auto& f : scene.poses) CHECK(f.empty());
  for (const auto& p : scene.flow.pairs)
    for (double v : p) CHECK(v == 0.0);
}

TEST_CASE("static scene has identical frames and zero flow") {
  auto spec = small_spec();
  spec.amplitude = 0.0;
  const auto scene = generate(spec);
  const std::size_t chw = spec.channels * spec.height * spec.width;
  const auto f = scene.features.data();
  CHECK(scene.features.shape() == Shape{4, 4, 16, 16});
  for (std::size_t t = 1; t < spec.frames; ++t)
    CHECK(std::equal(f.begin(), f.begin() + static_cast<long>(chw),
                     f.begin() + static_cast<long>(t * chw)));
  for (const auto& p : scene.flow.pairs)
    for (double v : p) CHECK(v == 0.0);
}

TEST_CASE("generation is deterministic per seed") {
  auto spec = small_spec();
  spec.persons = 3;
  const auto a = generate(spec), b = generate(spec);
  CHECK(bitwise_equal(a.features.data(), b.features.data()));
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t p = 0; p < 3; ++p) CHECK(a.poses[t][p].joints == b.poses[t][p].joints);
  spec.seed = 43;
  CHECK_FALSE(bitwise_equal(a.features.data(), generate(spec).features.data()));
}

TEST_CASE("blob maxima sit on the joints") {
  auto spec = small_spec();
  spec.persons = 2;
  const auto scene = generate(spec);
  const std::size_t hw = spec.height * spec.width;
  for (const auto& p : scene.poses[1])
    for (std::size_t j = 0; j < spec.joints; ++j) {
      const auto map = render(spec, {p}, j);
      // The depth channel is positive wherever the blob is.
      const auto depth = std::span<const double>(map).subspan((spec.channels - 1) * hw, hw);
      const auto best = static_cast<std::size_t>(
          std::max_element(depth.begin(), depth.end()) - depth.begin());
      CHECK(std::fabs(static_cast<double>(best % spec.width) - p.joints[j][0]) <= 0.5);
      CHECK(std::fabs(static_cast<double>(best / spec.width) - p.joints[j][1]) <= 0.5);
    }
}

TEST_CASE("flow warps one frame onto the next") {
  auto spec = small_spec();
  spec.frames = 6;
  spec.amplitude = 2.0;
  const auto scene = generate(spec);
  const std::size_t h = spec.height, w = spec.width, hw = h * w;
  const auto f = scene.features.data();
  std::size_t checked = 0;
  for (std::size_t t = 0; t + 1 < spec.frames; ++t)
    for (std::size_t i = 0; i < hw; ++i) {
      if (!scene.owner[t][i]) continue;
      const long x = static_cast<long>(i % w) + std::lround(scene.flow.pairs[t][i]);
      const long y = static_cast<long>(i / w) + std::lround(scene.flow.pairs[t][hw + i]);
      // Content carried past the border leaves the view.
      if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) continue;
      const std::size_t dst = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      for (std::size_t c = 0; c < spec.channels; ++c)
        CHECK(f[((t + 1) * spec.channels + c) * hw + dst] == f[(t * spec.channels + c) * hw + i]);
      ++checked;
    }
  CHECK(checked > 0);
}

TEST_CASE("targets and providers") {
  const auto scene = generate(small_spec());
  CHECK(stack_heatmaps(scene).shape() == Shape{4, 1, 16, 16});
  CHECK(stack_offsets3d(scene).shape() == Shape{4, 45, 16, 16});
  CHECK(stack_offsets2d(scene).shape() == Shape{4, 30, 16, 16});
  const RenderedFeatures provider;
  CHECK(bitwise_equal(provider.features(scene).data(), scene.features.data()));
  CHECK(skeleton_template().size() == kMaxJoints);
  // Root-relative template coordinates are multiples of a quarter cell.
  for (const auto& j : skeleton_template())
    for (double v : j) CHECK(v * 4 == std::round(v * 4));
}

TEST_CASE("spec validation") {
  auto spec = small_spec();
  spec.joints = 16;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = small_spec();
  spec.height = spec.width = 6;
  spec.amplitude = 3;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = small_spec();
  spec.depth_max = 1.0;
  CHECK_THROWS_AS(generate(spec), ConfigError);
}

TEST_CASE("scene manifest round trip") {
  auto spec = small_spec();
  spec.persons = 2;
  spec.amplitude = 1.5;
  const auto scene = generate(spec);
  std::stringstream ss;
  write_manifest(ss, scene);
  const auto back = read_manifest(ss);
  CHECK(bitwise_equal(back.features.data(), scene.features.data()));
  CHECK(back.spec.amplitude == 1.5);

  std::string text = ss.str();
  const auto pos = text.find("pose 2 1 ");
  REQUIRE(pos != std::string::npos);
  // Overwrite the first joint coordinate of that record.
  const auto start = text.find(' ', pos + 9) + 1;
  std::string tampered = text;
  tampered.replace(start, text.find(' ', start) - start, "123.5");
  std::istringstream bad(tampered);
  CHECK_THROWS_AS(read_manifest(bad), FormatError);
  std::istringstream junk("seed = 4\nwhat\n");
  CHECK_THROWS_AS(read_manifest(junk), FormatError);
  std::istringstream unknown(text + "colour = red\n");
  CHECK_THROWS_AS(read_manifest(unknown), FormatError);
}
