// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/igt.hpp"

#include <algorithm>
#include <cmath>

#include "ivt/errors.hpp"

namespace ivt::igt {

BlockGrid BlockGrid::make(std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t block) {
  if (block == 0 || height % block != 0 || width % block != 0)
    throw ConfigError("feature map " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by block size " + std::to_string(block));
  BlockGrid g;
  g.channels = channels;
  g.height = height;
  g.width = width;
  g.block = block;
  g.rows = height / block;
  g.cols = width / block;
  return g;
}

std::size_t BlockGrid::block_of(long y, long x) const {
  y = std::clamp(y, 0L, static_cast<long>(height) - 1);
  x = std::clamp(x, 0L, static_cast<long>(width) - 1);
  return (static_cast<std::size_t>(y) / block) * cols + static_cast<std::size_t>(x) / block;
}

std::size_t block_element_source(const BlockGrid& g, std::size_t i, std::size_t e) {
  const std::size_t kk = g.block * g.block;
  const std::size_t c = e / kk, r = e % kk;
  const std::size_t y = (i / g.cols) * g.block + r / g.block;
  const std::size_t x = (i % g.cols) * g.block + r % g.block;
  return (c * g.height + y) * g.width + x;
}

namespace {

BlockGrid grid_of(const Tensor& features, std::size_t block) {
  if (features.rank() != 3)
    throw DimensionError("feature map must be [C,H,W], got " + shape_str(features.shape()));
  return BlockGrid::make(features.dim(0), features.dim(1), features.dim(2), block);
}

std::vector<std::size_t> map_from_tokens_index(std::size_t frames, const InstanceGeometry& g,
                                               std::size_t block) {
  const auto grid = BlockGrid::make(g.joints * g.channels, g.height, g.width, block);
  const std::size_t kk = block * block, d = g.token_dim(block), n = grid.count();
  const std::size_t jc = g.joints * g.channels;
  std::vector<std::size_t> idx;
  idx.reserve(frames * jc * g.height * g.width);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t ch = 0; ch < jc; ++ch)
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
          const std::size_t row = t * n + (y / block) * grid.cols + x / block;
          const std::size_t col = ch * kk + (y % block) * block + x % block;
          idx.push_back(row * d + col);
        }
  return idx;
}

std::vector<std::size_t> tokens_from_map_index(std::size_t frames, const InstanceGeometry& g,
                                               std::size_t block) {
  const auto grid = BlockGrid::make(g.joints * g.channels, g.height, g.width, block);
  const std::size_t kk = block * block, d = g.token_dim(block), n = grid.count();
  const std::size_t jc = g.joints * g.channels, hw = g.height * g.width;
  std::vector<std::size_t> idx(frames * n * d);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t col = 0; col < d; ++col) {
        const std::size_t ch = col / kk, r = col % kk;
        const std::size_t y = (i / grid.cols) * block + r / block;
        const std::size_t x = (i % grid.cols) * block + r % block;
        idx[(t * n + i) * d + col] = (t * jc + ch) * hw + y * g.width + x;
      }
  return idx;
}

}  // namespace

Tensor extract_blocks(const Tensor& features, std::size_t block) {
  const auto grid = grid_of(features, block);
  const std::size_t n = grid.count(), cb = grid.block_dim();
  std::vector<std::size_t> idx(n * cb);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < cb; ++e) idx[i * cb + e] = block_element_source(grid, i, e);
  return take(features, std::move(idx), {n, cb});
}

Tensor retile_blocks(const Tensor& blocks, const BlockGrid& grid) {
  const std::size_t n = grid.count(), cb = grid.block_dim();
  if (blocks.shape() != Shape{n, cb})
    throw DimensionError("retile_blocks expects " + shape_str({n, cb}) + ", got " +
                         shape_str(blocks.shape()));
  std::vector<std::size_t> idx(n * cb);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < cb; ++e) idx[block_element_source(grid, i, e)] = i * cb + e;
  return take(blocks, std::move(idx), {grid.channels, grid.height, grid.width});
}

OffsetHeadParams make_offset_head(ParamStore& store, const std::string& prefix,
                                  std::size_t channels, std::size_t hidden, std::size_t joints,
                                  Rng& rng) {
  auto conv_weight = [&](const std::string& name, std::size_t out, std::size_t in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
    std::vector<double> w(out * in * 9);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return store.add(name, {out, in, 3, 3}, std::move(w));
  };
  OffsetHeadParams h;
  h.w1 = conv_weight(prefix + ".conv1.weight", hidden, channels);
  h.b1 = store.add_zeros(prefix + ".conv1.bias", {hidden});
  h.w2 = conv_weight(prefix + ".conv2.weight", 2 * joints, hidden);
  h.b2 = store.add_zeros(prefix + ".conv2.bias", {2 * joints});
  return h;
}

Tensor predict_offsets(const Tensor& features, const OffsetHeadParams& head, std::size_t joints) {
  if (head.w2.dim(0) != 2 * joints)
    throw ConfigError("offset head emits " + std::to_string(head.w2.dim(0)) +
                      " channels, expected 2J = " + std::to_string(2 * joints));
  return conv2d(gelu(conv2d(features, head.w1, head.b1)), head.w2, head.b2);
}

std::vector<std::size_t> instance_sources(const BlockGrid& grid, std::span<const double> offsets,
                                          std::size_t joints, std::size_t i) {
  const std::size_t hw = grid.height * grid.width;
  if (offsets.size() != 2 * joints * hw)
    throw DimensionError("offset map holds " + std::to_string(offsets.size()) +
                         " values, expected 2J·H·W = " + std::to_string(2 * joints * hw));
  if (i >= grid.count())
    throw BoundsError("block index " + std::to_string(i) + " out of range for " +
                      std::to_string(grid.count()) + " blocks");
  const std::size_t cy = grid.center_y(i), cx = grid.center_x(i);
  const std::size_t pix = cy * grid.width + cx;
  std::vector<std::size_t> out(joints);
  constexpr double kLimit = 1e9;
  for (std::size_t j = 0; j < joints; ++j) {
    const double dx = offsets[(2 * j) * hw + pix];
    const double dy = offsets[(2 * j + 1) * hw + pix];
    if (!std::isfinite(dx) || !std::isfinite(dy))
      throw NumericError("non-finite 2D offset for joint " + std::to_string(j) + " at block " +
                         std::to_string(i));
    const long px = static_cast<long>(cx) + std::lround(std::clamp(dx, -kLimit, kLimit));
    const long py = static_cast<long>(cy) + std::lround(std::clamp(dy, -kLimit, kLimit));
    out[j] = grid.block_of(py, px);
  }
  return out;
}

Tensor gather_instance(const Tensor& blocks, const BlockGrid& grid, const Tensor& offsets,
                       std::size_t joints, std::size_t i) {
  if (blocks.shape() != Shape{grid.count(), grid.block_dim()})
    throw DimensionError("gather_instance blocks " + shape_str(blocks.shape()) + " vs grid");
  const auto src = instance_sources(grid, offsets.data(), joints, i);
  return reshape(gather(blocks, src, 0), {joints * grid.block_dim()});
}

TokenizerParams make_tokenizer(ParamStore& store, const std::string& prefix,
                               std::size_t block_dim, std::size_t joints, std::size_t heads,
                               Rng& rng, std::size_t ffn_mult) {
  TokenizerParams p;
  p.cfg = {block_dim, heads};
  p.joints = joints;
  p.block = nn::make_block(store, prefix, p.cfg, rng, ffn_mult);
  return p;
}

Tensor tokenize(const Tensor& gathered, const TokenizerParams& params) {
  const std::size_t j = params.joints, cb = params.cfg.d_model;
  const bool single = gathered.rank() == 1;
  if ((gathered.rank() != 1 && gathered.rank() != 2) || gathered.shape().back() != j * cb)
    throw ContractError("tokenize expects length J·C_b = " + std::to_string(j * cb) + ", got " +
                        shape_str(gathered.shape()));
  const std::size_t n = single ? 1 : gathered.dim(0);
  const auto layout = kernels::AttentionLayout::blocks(n, j, params.cfg.heads);
  const Tensor rows = reshape(gathered, {n * j, cb});
  const Tensor fused = nn::transformer_block_self(rows, params.block, params.cfg, &layout);
  return reshape(fused, single ? Shape{j * cb} : Shape{n, j * cb});
}

Tensor igt_frames(const Tensor& features, const Tensor& offsets, std::size_t block,
                  const TokenizerParams& params) {
  if (features.rank() != 4)
    throw DimensionError("igt_frames expects [T,C,H,W], got " + shape_str(features.shape()));
  const std::size_t frames = features.dim(0), joints = params.joints;
  const auto grid = BlockGrid::make(features.dim(1), features.dim(2), features.dim(3), block);
  if (grid.block_dim() != params.cfg.d_model)
    throw ConfigError("tokenizer width " + std::to_string(params.cfg.d_model) +
                      " does not match block dim " + std::to_string(grid.block_dim()));
  const std::size_t hw = grid.height * grid.width, chw = grid.channels * hw;
  if (offsets.shape() != Shape{frames, 2 * joints, grid.height, grid.width})
    throw DimensionError("offsets " + shape_str(offsets.shape()) + " vs features " +
                         shape_str(features.shape()));
  const std::size_t n = grid.count(), cb = grid.block_dim();
  const auto off = offsets.data();
  std::vector<std::size_t> idx;
  idx.reserve(frames * n * joints * cb);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto frame_offsets = off.subspan(t * 2 * joints * hw, 2 * joints * hw);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s : instance_sources(grid, frame_offsets, joints, i))
        for (std::size_t e = 0; e < cb; ++e)
          idx.push_back(t * chw + block_element_source(grid, s, e));
  }
  const Tensor gathered = take(features, std::move(idx), {frames * n, joints * cb});
  return tokenize(gathered, params);
}

Tensor igt_frame(const Tensor& features, const Tensor& offsets, std::size_t block,
                 const TokenizerParams& params) {
  if (features.rank() != 3 || offsets.rank() != 3)
    throw DimensionError("igt_frame expects [C,H,W] features and [2J,H,W] offsets");
  Shape fs = features.shape(), os = offsets.shape();
  fs.insert(fs.begin(), 1);
  os.insert(os.begin(), 1);
  return igt_frames(reshape(features, fs), reshape(offsets, os), block, params);
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t frames, const InstanceGeometry& g,
                     std::size_t block) {
  const std::size_t n = (g.height / block) * (g.width / block);
  if (tokens.shape() != Shape{frames * n, g.token_dim(block)})
    throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not match block size " +
                         std::to_string(block));
  return take(tokens, map_from_tokens_index(frames, g, block),
              {frames, g.joints * g.channels, g.height, g.width});
}

Tensor map_to_tokens(const Tensor& map, const InstanceGeometry& g, std::size_t block) {
  if (map.rank() != 4 || map.dim(1) != g.joints * g.channels || map.dim(2) != g.height ||
      map.dim(3) != g.width)
    throw DimensionError("instance map " + shape_str(map.shape()) + " vs geometry");
  const std::size_t frames = map.dim(0);
  const std::size_t n = (g.height / block) * (g.width / block);
  return take(map, tokens_from_map_index(frames, g, block), {frames * n, g.token_dim(block)});
}

Tensor retile_tokens(const Tensor& tokens, std::size_t frames, const InstanceGeometry& g,
                     std::size_t from, std::size_t to) {
  if (from == to) return tokens;
  const std::size_t n_from = (g.height / from) * (g.width / from);
  if (tokens.shape() != Shape{frames * n_from, g.token_dim(from)})
    throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not match block size " +
                         std::to_string(from));
  const auto to_map = map_from_tokens_index(frames, g, from);
  auto idx = tokens_from_map_index(frames, g, to);
  for (auto& i : idx) i = to_map[i];
  const std::size_t n_to = (g.height / to) * (g.width / to);
  return take(tokens, std::move(idx), {frames * n_to, g.token_dim(to)});
}

}  // namespace ivt::igt
