// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: an INI file with [scene], [model], [train] and [eval]
// sections. Every key is optional; unknown keys are errors.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ivt/errors.hpp"
#include "ivt/model.hpp"
#include "ivt/synth.hpp"
#include "ivt/train.hpp"

namespace ivt::config {

struct RunConfig {
  synth::SceneSpec scene;
  std::size_t input_size = 64;  // nominal input resolution
  std::size_t stride = 4;       // input pixels per feature cell
  model::ModelConfig model;
  std::uint64_t model_seed = 42;
  train::TrainConfig train;
  train::EvalConfig eval;

  RunConfig();
};

/// Parse error carrying the offending line (0 when unknown).
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Canonical INI text of every field; parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& cfg);

/// Copies the scene geometry (joints, channels, grid) into the model config.
model::ModelConfig model_for_scene(const RunConfig& cfg, const synth::SceneSpec& scene);

}  // namespace ivt::config
