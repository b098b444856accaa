// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Instance-guided tokenization: tile a feature map into K×K blocks, gather
// for every anchor block the J blocks its 2D joint offsets point at, and fuse
// the gathered J×C_b rows with one self-attention block.
//
// Token layout: a token is J consecutive segments of length C_b = C·K·K;
// segment j is the block gathered for joint j, stored channel-major
// (c, ky, kx).

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivt/nn.hpp"
#include "ivt/tensor.hpp"

namespace ivt::igt {

struct BlockGrid {
  std::size_t channels = 0;
  std::size_t height = 0, width = 0;
  std::size_t block = 0;
  std::size_t rows = 0, cols = 0;

  /// Throws ConfigError unless block divides both height and width.
  static BlockGrid make(std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t block);
  std::size_t count() const { return rows * cols; }
  std::size_t block_dim() const { return channels * block * block; }
  /// Pixel that anchors the offset lookup of block i.
  std::size_t center_y(std::size_t i) const { return (i / cols) * block + block / 2; }
  std::size_t center_x(std::size_t i) const { return (i % cols) * block + block / 2; }
  /// Block containing pixel (y, x) after clamping the pixel into the map.
  std::size_t block_of(long y, long x) const;
};

/// Flat feature-map index feeding element e of block i (C×H×W layout).
std::size_t block_element_source(const BlockGrid& grid, std::size_t i, std::size_t e);

/// F[C×H×W] → [N × C·K·K], row-major grid order.
Tensor extract_blocks(const Tensor& features, std::size_t block);
/// Inverse of extract_blocks.
Tensor retile_blocks(const Tensor& blocks, const BlockGrid& grid);

struct OffsetHeadParams {
  Tensor w1, b1;  // [hidden × C × 3 × 3]
  Tensor w2, b2;  // [2J × hidden × 3 × 3]
};

OffsetHeadParams make_offset_head(ParamStore& store, const std::string& prefix,
                                  std::size_t channels, std::size_t hidden, std::size_t joints,
                                  Rng& rng);
/// conv3×3 → GELU → conv3×3. Accepts [C×H×W] or [T×C×H×W]; output has 2J channels.
Tensor predict_offsets(const Tensor& features, const OffsetHeadParams& head, std::size_t joints);

/// The J source blocks of anchor block i. `offsets` is one 2J×H×W map:
/// channel pair (2j, 2j+1) = (dx, dy) in feature cells.
std::vector<std::size_t> instance_sources(const BlockGrid& grid, std::span<const double> offsets,
                                          std::size_t joints, std::size_t i);

/// [J·C_b] concatenation of the J blocks selected for block i.
Tensor gather_instance(const Tensor& blocks, const BlockGrid& grid, const Tensor& offsets,
                       std::size_t joints, std::size_t i);

struct TokenizerParams {
  nn::BlockParams block;
  nn::AttentionConfig cfg;  // d_model = C_b
  std::size_t joints = 0;
};

TokenizerParams make_tokenizer(ParamStore& store, const std::string& prefix,
                               std::size_t block_dim, std::size_t joints, std::size_t heads,
                               Rng& rng, std::size_t ffn_mult = 4);

/// reshape → self-attention block over the J rows → flatten. Accepts one
/// [J·C_b] vector or a batch [n × J·C_b] (tokenized independently).
Tensor tokenize(const Tensor& gathered, const TokenizerParams& params);

/// Tokens of every block of one frame: [N × J·C_b].
Tensor igt_frame(const Tensor& features, const Tensor& offsets, std::size_t block,
                 const TokenizerParams& params);

/// Batched over frames: features [T×C×H×W], offsets [T×2J×H×W] (values only,
/// gathering is not differentiated w.r.t. offsets). Returns [T·N × J·C_b].
Tensor igt_frames(const Tensor& features, const Tensor& offsets, std::size_t block,
                  const TokenizerParams& params);

// ---- instance maps ------------------------------------------------------------
// A token map of block size K is a re-tiling of a (J·C)×H×W "instance map":
// channel j·C + c at pixel (y, x) is element (j, c, y % K, x % K) of token
// (y / K, x / K). Converting between maps and token grids is lossless.

struct InstanceGeometry {
  std::size_t joints = 0, channels = 0, height = 0, width = 0;
  std::size_t token_dim(std::size_t block) const { return joints * channels * block * block; }
};

/// tokens [T·N × J·C·K²] → [T × J·C × H × W].
Tensor tokens_to_map(const Tensor& tokens, std::size_t frames, const InstanceGeometry& g,
                     std::size_t block);
/// [T × J·C × H × W] → [T·N × J·C·K²].
Tensor map_to_tokens(const Tensor& map, const InstanceGeometry& g, std::size_t block);
/// Re-tiles a token sequence from block size `from` to block size `to`.
Tensor retile_tokens(const Tensor& tokens, std::size_t frames, const InstanceGeometry& g,
                     std::size_t from, std::size_t to);

}  // namespace ivt::igt
