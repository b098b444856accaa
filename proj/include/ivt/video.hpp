// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// The video transformer core. A token sequence stores the T token maps of a
// clip frame-major: row t·N + i is block i of frame t.
//
// Single-scale layer:  out = X + ITA(align(ISA(X)))
// Cross-scale layer:   per scale s, project to a common width, attend over the
//                      union of all scales per frame (CISA), align and attend
//                      over time per scale (MITA), back-project, re-tile to the
//                      finest grid and sum. Each scale keeps its own residual
//                      stream, updated with the summed output re-tiled to
//                      that scale.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ivt/checkpoint.hpp"
#include "ivt/igt.hpp"
#include "ivt/nn.hpp"
#include "ivt/tensor.hpp"

namespace ivt::video {

/// Flow between adjacent frames. pairs[t] is the 2×H×W (dx, dy) field from
/// frame t to frame t+1, in feature cells.
struct FlowField {
  std::size_t height = 0, width = 0;
  std::vector<std::vector<double>> pairs;

  static FlowField zero(std::size_t frames, std::size_t height, std::size_t width);
};

struct TokenSequence {
  std::size_t frames = 0;
  Tensor tokens;  // [T·N × D]

  std::size_t per_frame() const { return frames == 0 ? 0 : tokens.dim(0) / frames; }
  std::size_t dim() const { return tokens.dim(1); }
};

// ---- spatial ------------------------------------------------------------------

struct SpatialParams {
  Tensor pos;  // [N × D], learned per-block embedding
  nn::BlockParams block;
  nn::AttentionConfig cfg;
};

SpatialParams make_spatial(ParamStore& store, const std::string& prefix, std::size_t blocks,
                           const nn::AttentionConfig& cfg, Rng& rng);

/// Adds the positional embedding, then one self-attention block per frame.
TokenSequence isa(const TokenSequence& seq, const SpatialParams& params);

// ---- alignment ------------------------------------------------------------------

/// Row permutation (with repeats) that moves every frame's tokens into the
/// last frame's grid: aligned row r reads input row sources[r].
///
/// A block of frame t < T-1 follows the block-mean flow of the block it
/// currently sits on, step by step to the last frame; the accumulated
/// displacement is rounded to whole blocks and clamped to the grid. When
/// several blocks land on one cell, the one with the largest displacement
/// wins (ties: larger source index). Cells nobody moves into keep their own
/// token.
std::vector<std::size_t> alignment_sources(const FlowField& flow, std::size_t frames,
                                           std::size_t block);

TokenSequence align_tokens(const TokenSequence& seq, const FlowField& flow, std::size_t block);

// ---- temporal -------------------------------------------------------------------

struct TemporalParams {
  nn::BlockParams block;
  nn::AttentionConfig cfg;
  /// Frame t attends to frames [0, t] only.
  bool causal = false;
};

TemporalParams make_temporal(ParamStore& store, const std::string& prefix,
                             const nn::AttentionConfig& cfg, Rng& rng, bool causal = false);

/// Token (t, i) queries block i of every frame with one cross-attention block.
TokenSequence ita(const TokenSequence& aligned, const TemporalParams& params);

/// Multiply-accumulates spent inside forward ita() calls since the last reset.
std::uint64_t temporal_mac_count();
void reset_temporal_mac_count();

// ---- single-scale layer ---------------------------------------------------------

struct LayerParams {
  SpatialParams spatial;
  TemporalParams temporal;
  std::size_t block = 0;  // block size the tokens were cut with
};

LayerParams make_layer(ParamStore& store, const std::string& prefix, std::size_t blocks,
                       std::size_t block, const nn::AttentionConfig& cfg, Rng& rng,
                       bool causal = false);

TokenSequence ivt_layer(const TokenSequence& seq, const FlowField& flow, const LayerParams& params);

// ---- cross-scale layer ----------------------------------------------------------

struct ScaleParams {
  std::size_t block = 0;
  std::size_t dim = 0;     // native token width J·C·K²
  std::size_t blocks = 0;  // tokens per frame
  Tensor pos;              // [N × dim]
  /// Absent (undefined weights) when the layer has a single scale: the
  /// union attention then runs at the native width.
  nn::Linear project, back_project;
  TemporalParams temporal;

  bool projected() const { return project.weight.defined(); }
};

struct CrossScaleParams {
  std::vector<ScaleParams> scales;  // finest first
  nn::BlockParams union_block;
  nn::AttentionConfig union_cfg;
};

struct ScaleSetConfig {
  std::vector<std::size_t> blocks{2, 4, 8};
  std::size_t d_common = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  bool causal = false;
};

CrossScaleParams make_cross_scale(ParamStore& store, const std::string& prefix,
                                  const ScaleSetConfig& cfg, const igt::InstanceGeometry& g,
                                  Rng& rng);

/// Projected (common-width) outputs of the union attention, one per scale.
std::vector<TokenSequence> cisa_common(const std::vector<TokenSequence>& scales,
                                       const CrossScaleParams& params);
/// cisa_common followed by back-projection to every scale's native width.
std::vector<TokenSequence> cisa(const std::vector<TokenSequence>& scales,
                                const CrossScaleParams& params);

/// Per-scale alignment and temporal attention on cisa_common outputs, then
/// back-projection, re-tiling to the finest grid and summation.
TokenSequence mita(const std::vector<TokenSequence>& common, const FlowField& flow,
                   const CrossScaleParams& params, const igt::InstanceGeometry& g);

/// Returns the updated per-scale residual streams.
std::vector<TokenSequence> cross_scale_layer(const std::vector<TokenSequence>& scales,
                                             const FlowField& flow,
                                             const CrossScaleParams& params,
                                             const igt::InstanceGeometry& g);

// ---- full stack -----------------------------------------------------------------

struct StackParams {
  std::vector<igt::TokenizerParams> tokenizers;  // one per scale
  std::vector<CrossScaleParams> layers;
  ScaleSetConfig scales;
};

StackParams make_stack(ParamStore& store, const std::string& prefix, const ScaleSetConfig& cfg,
                       std::size_t layers, const igt::InstanceGeometry& g,
                       std::size_t tokenizer_heads, Rng& rng);

/// features [T×C×H×W], offsets [T×2J×H×W] → finest-scale tokens of the last layer.
TokenSequence ivt_forward(const Tensor& features, const Tensor& offsets, const FlowField& flow,
                          const StackParams& params, const igt::InstanceGeometry& g);

}  // namespace ivt::video
