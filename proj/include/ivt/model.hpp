// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end network: offset head → instance-guided tokenization per scale →
// stacked cross-scale layers → prediction heads. The heads re-tile the
// finest tokens into a (J·C)×H×W instance map and apply one 3×3 convolution
// producing the heatmap logit and the 3J offset channels at feature
// resolution.

#pragma once

#include <cstddef>
#include <cstdint>

#include "ivt/checkpoint.hpp"
#include "ivt/igt.hpp"
#include "ivt/loss.hpp"
#include "ivt/tensor.hpp"
#include "ivt/video.hpp"

namespace ivt::model {

struct ModelConfig {
  std::size_t joints = 15;
  std::size_t channels = 16;
  std::size_t height = 16, width = 16;
  video::ScaleSetConfig scales;
  std::size_t layers = 3;
  std::size_t tokenizer_heads = 2;
  std::size_t offset_hidden = 16;

  igt::InstanceGeometry geometry() const { return {joints, channels, height, width}; }
  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
};

struct HeadParams {
  Tensor weight;  // [(1 + 3J) × J·C × 3 × 3]
  Tensor bias;    // [1 + 3J]
};

/// heatmap [T×1×H×W] after the logistic, offsets3d [T×3J×H×W] and the
/// offset head's offsets2d [T×2J×H×W].
using Output = loss::Maps;

HeadParams make_heads(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                      Rng& rng);

/// tokens [T·N × J·C·K²] of block size K → (heatmap, offsets3d).
std::pair<Tensor, Tensor> prediction_heads(const Tensor& tokens, std::size_t frames,
                                           const igt::InstanceGeometry& g, std::size_t block,
                                           const HeadParams& heads);

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// features [T×C×H×W]. With `gather_offsets` the tokenizer gathers along
  /// those 2D offsets ([T×2J×H×W]) instead of the offset head's prediction;
  /// the prediction is still returned for supervision.
  Output forward(const Tensor& features, const video::FlowField& flow,
                 const Tensor* gather_offsets = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  igt::OffsetHeadParams offset_head_;
  video::StackParams stack_;
  HeadParams heads_;
};

}  // namespace ivt::model
