// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/video.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <tuple>

#include "ivt/errors.hpp"

namespace ivt::video {

namespace {

void check_sequence(const TokenSequence& seq) {
  if (seq.frames == 0 || !seq.tokens.defined() || seq.tokens.rank() != 2 ||
      seq.tokens.dim(0) % seq.frames != 0 || seq.tokens.dim(0) == 0)
    throw DimensionError("token sequence of " + std::to_string(seq.frames) + " frames has shape " +
                         (seq.tokens.defined() ? shape_str(seq.tokens.shape()) : "<none>"));
}

/// [N × D] → [T·N × D], the same rows for every frame.
Tensor tile_frames(const Tensor& pos, std::size_t frames) {
  const std::size_t n = pos.dim(0);
  std::vector<std::size_t> rows(frames * n);
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r % n;
  return gather(pos, rows, 0);
}

Tensor add_positions(const TokenSequence& seq, const Tensor& pos) {
  if (pos.shape() != Shape{seq.per_frame(), seq.dim()})
    throw ConfigError("positional embedding " + shape_str(pos.shape()) + " does not fit " +
                      std::to_string(seq.per_frame()) + " tokens of width " +
                      std::to_string(seq.dim()));
  return add(seq.tokens, tile_frames(pos, seq.frames));
}

Tensor init_positions(ParamStore& store, const std::string& name, std::size_t n, std::size_t d,
                      Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = 0.02 * rng.normal();
  return store.add(name, {n, d}, std::move(v));
}

}  // namespace

FlowField FlowField::zero(std::size_t frames, std::size_t height, std::size_t width) {
  FlowField f;
  f.height = height;
  f.width = width;
  f.pairs.assign(frames > 0 ? frames - 1 : 0, std::vector<double>(2 * height * width, 0.0));
  return f;
}

SpatialParams make_spatial(ParamStore& store, const std::string& prefix, std::size_t blocks,
                           const nn::AttentionConfig& cfg, Rng& rng) {
  SpatialParams p;
  p.cfg = cfg;
  p.pos = init_positions(store, prefix + ".pos", blocks, cfg.d_model, rng);
  p.block = nn::make_block(store, prefix, cfg, rng);
  return p;
}

TokenSequence isa(const TokenSequence& seq, const SpatialParams& params) {
  check_sequence(seq);
  if (seq.dim() != params.cfg.d_model)
    throw ConfigError("ISA width " + std::to_string(params.cfg.d_model) + " vs tokens " +
                      std::to_string(seq.dim()));
  const Tensor x = add_positions(seq, params.pos);
  const auto layout = kernels::AttentionLayout::blocks(seq.frames, seq.per_frame());
  return {seq.frames, nn::transformer_block_self(x, params.block, params.cfg, &layout)};
}

std::vector<std::size_t> alignment_sources(const FlowField& flow, std::size_t frames,
                                           std::size_t block) {
  const std::size_t h = flow.height, w = flow.width;
  if (block == 0 || h % block != 0 || w % block != 0)
    throw ConfigError("flow field " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by block size " + std::to_string(block));
  const std::size_t rows = h / block, cols = w / block, n = rows * cols;
  std::vector<std::size_t> sources(frames * n);
  for (std::size_t r = 0; r < sources.size(); ++r) sources[r] = r;
  if (frames <= 1) return sources;
  if (flow.pairs.size() < frames - 1)
    throw ContractError("flow field covers " + std::to_string(flow.pairs.size()) +
                        " frame pairs, alignment of " + std::to_string(frames) +
                        " frames needs " + std::to_string(frames - 1));

  // Block-mean flow per pair: mean[u][2i], mean[u][2i+1] = (dx, dy).
  std::vector<std::vector<double>> mean(frames - 1, std::vector<double>(2 * n, 0.0));
  const double inv = 1.0 / static_cast<double>(block * block);
  for (std::size_t u = 0; u + 1 < frames; ++u) {
    const auto& f = flow.pairs[u];
    if (f.size() != 2 * h * w)
      throw DimensionError("flow pair " + std::to_string(u) + " holds " +
                           std::to_string(f.size()) + " values, expected " +
                           std::to_string(2 * h * w));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (y / block) * cols + x / block;
        const double dx = f[y * w + x], dy = f[h * w + y * w + x];
        if (!std::isfinite(dx) || !std::isfinite(dy))
          throw NumericError("non-finite flow at pair " + std::to_string(u));
        mean[u][2 * i] += dx;
        mean[u][2 * i + 1] += dy;
      }
    for (auto& v : mean[u]) v *= inv;
  }

  const auto clamp_cell = [&](long by, long bx) {
    by = std::clamp(by, 0L, static_cast<long>(rows) - 1);
    bx = std::clamp(bx, 0L, static_cast<long>(cols) - 1);
    return std::pair<long, long>{by, bx};
  };
  const double k = static_cast<double>(block);
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    // (squared displacement in blocks, source, destination)
    std::vector<std::tuple<long, std::size_t, std::size_t>> moves;
    moves.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const long by = static_cast<long>(i / cols), bx = static_cast<long>(i % cols);
      double dx = 0.0, dy = 0.0;
      auto cell = std::pair<long, long>{by, bx};
      for (std::size_t u = t; u + 1 < frames; ++u) {
        const std::size_t cur = static_cast<std::size_t>(cell.first) * cols +
                                static_cast<std::size_t>(cell.second);
        dx += mean[u][2 * cur];
        dy += mean[u][2 * cur + 1];
        cell = clamp_cell(by + std::lround(dy / k), bx + std::lround(dx / k));
      }
      const long my = cell.first - by, mx = cell.second - bx;
      moves.emplace_back(my * my + mx * mx, i,
                         static_cast<std::size_t>(cell.first) * cols +
                             static_cast<std::size_t>(cell.second));
    }
    std::sort(moves.begin(), moves.end());
    for (const auto& [mag, src, dst] : moves) sources[t * n + dst] = t * n + src;
  }
  return sources;
}

TokenSequence align_tokens(const TokenSequence& seq, const FlowField& flow, std::size_t block) {
  check_sequence(seq);
  const std::size_t n = (flow.height / std::max<std::size_t>(block, 1)) *
                        (flow.width / std::max<std::size_t>(block, 1));
  if (n != seq.per_frame())
    throw DimensionError("flow grid at block size " + std::to_string(block) + " has " +
                         std::to_string(n) + " cells, tokens have " +
                         std::to_string(seq.per_frame()));
  if (seq.frames == 1) return seq;
  return {seq.frames, gather(seq.tokens, alignment_sources(flow, seq.frames, block), 0)};
}

TemporalParams make_temporal(ParamStore& store, const std::string& prefix,
                             const nn::AttentionConfig& cfg, Rng& rng, bool causal) {
  TemporalParams p;
  p.cfg = cfg;
  p.causal = causal;
  p.block = nn::make_block(store, prefix, cfg, rng);
  return p;
}

namespace {
std::atomic<std::uint64_t> temporal_macs{0};
}  // namespace

std::uint64_t temporal_mac_count() { return temporal_macs.load(); }
void reset_temporal_mac_count() { temporal_macs = 0; }

TokenSequence ita(const TokenSequence& aligned, const TemporalParams& params) {
  check_sequence(aligned);
  const std::uint64_t before = kernels::mac_count();
  if (aligned.dim() != params.cfg.d_model)
    throw ConfigError("ITA width " + std::to_string(params.cfg.d_model) + " vs tokens " +
                      std::to_string(aligned.dim()));
  const std::size_t t_count = aligned.frames, n = aligned.per_frame();
  // Slot-major order: row i·T + t holds block i of frame t.
  std::vector<std::size_t> to_slots(t_count * n), to_frames(t_count * n);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      to_slots[i * t_count + t] = t * n + i;
      to_frames[t * n + i] = i * t_count + t;
    }
  const Tensor slots = gather(aligned.tokens, to_slots, 0);
  auto layout = kernels::AttentionLayout::blocks(n, t_count);
  layout.causal = params.causal;
  const Tensor out =
      nn::transformer_block_cross(slots, slots, slots, params.block, params.cfg, &layout);
  temporal_macs += kernels::mac_count() - before;
  return {t_count, gather(out, to_frames, 0)};
}

LayerParams make_layer(ParamStore& store, const std::string& prefix, std::size_t blocks,
                       std::size_t block, const nn::AttentionConfig& cfg, Rng& rng, bool causal) {
  LayerParams p;
  p.block = block;
  p.spatial = make_spatial(store, prefix + ".isa", blocks, cfg, rng);
  p.temporal = make_temporal(store, prefix + ".ita", cfg, rng, causal);
  return p;
}

TokenSequence ivt_layer(const TokenSequence& seq, const FlowField& flow, const LayerParams& params) {
  const TokenSequence y = ita(align_tokens(isa(seq, params.spatial), flow, params.block),
                              params.temporal);
  return {seq.frames, add(y.tokens, seq.tokens)};
}

CrossScaleParams make_cross_scale(ParamStore& store, const std::string& prefix,
                                  const ScaleSetConfig& cfg, const igt::InstanceGeometry& g,
                                  Rng& rng) {
  if (cfg.blocks.empty()) throw ConfigError("scale set is empty");
  if (!std::is_sorted(cfg.blocks.begin(), cfg.blocks.end()) ||
      std::adjacent_find(cfg.blocks.begin(), cfg.blocks.end()) != cfg.blocks.end())
    throw ConfigError("block sizes must be strictly increasing");
  const bool single = cfg.blocks.size() == 1;
  CrossScaleParams p;
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    const std::size_t k = cfg.blocks[s];
    if (g.height % k != 0 || g.width % k != 0)
      throw ConfigError("block size " + std::to_string(k) + " does not divide the " +
                        std::to_string(g.height) + "x" + std::to_string(g.width) + " grid");
    ScaleParams sp;
    sp.block = k;
    sp.dim = g.token_dim(k);
    sp.blocks = (g.height / k) * (g.width / k);
    const std::string name = prefix + ".s" + std::to_string(k);
    sp.pos = init_positions(store, name + ".pos", sp.blocks, sp.dim, rng);
    const std::size_t width = single ? sp.dim : cfg.d_common;
    if (!single) {
      sp.project = nn::make_linear(store, name + ".project", sp.dim, cfg.d_common, rng);
      sp.back_project = nn::make_linear(store, name + ".back_project", cfg.d_common, sp.dim, rng);
    }
    nn::AttentionConfig tc{width, cfg.heads};
    sp.temporal.cfg = tc;
    sp.temporal.causal = cfg.causal;
    sp.temporal.block = nn::make_block(store, name + ".ita", tc, rng, cfg.ffn_mult);
    p.scales.push_back(std::move(sp));
  }
  p.union_cfg = {single ? p.scales[0].dim : cfg.d_common, cfg.heads};
  p.union_block = nn::make_block(store, prefix + ".cisa", p.union_cfg, rng, cfg.ffn_mult);
  return p;
}

std::vector<TokenSequence> cisa_common(const std::vector<TokenSequence>& scales,
                                       const CrossScaleParams& params) {
  if (scales.size() != params.scales.size())
    throw ConfigError("cross-scale layer has " + std::to_string(params.scales.size()) +
                      " scales, got " + std::to_string(scales.size()));
  const std::size_t frames = scales.front().frames;
  std::vector<Tensor> parts;
  std::vector<std::size_t> offset, count;
  std::size_t total = 0;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& seq = scales[s];
    const auto& sp = params.scales[s];
    check_sequence(seq);
    if (seq.frames != frames || seq.per_frame() != sp.blocks || seq.dim() != sp.dim)
      throw ConfigError("scale " + std::to_string(s) + " tokens " +
                        shape_str(seq.tokens.shape()) + " do not match block size " +
                        std::to_string(sp.block));
    Tensor z = add_positions(seq, sp.pos);
    if (sp.projected()) z = sp.project(z);
    parts.push_back(z);
    offset.push_back(total);
    count.push_back(sp.blocks);
    total += frames * sp.blocks;
  }
  const std::size_t per_frame = total / frames;

  // Frame-major union: frame t holds every scale's tokens of that frame.
  std::vector<std::size_t> to_union;
  to_union.reserve(total);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < scales.size(); ++s)
      for (std::size_t i = 0; i < count[s]; ++i) to_union.push_back(offset[s] + t * count[s] + i);
  std::vector<std::size_t> back(total);
  for (std::size_t r = 0; r < total; ++r) back[to_union[r]] = r;

  const Tensor all = parts.size() == 1 ? parts[0] : concat(parts, 0);
  const auto layout = kernels::AttentionLayout::blocks(frames, per_frame);
  const Tensor fused = nn::transformer_block_self(gather(all, to_union, 0), params.union_block,
                                                  params.union_cfg, &layout);
  std::vector<TokenSequence> out;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const std::vector<std::size_t> rows(back.begin() + static_cast<long>(offset[s]),
                                        back.begin() + static_cast<long>(offset[s] +
                                                                         frames * count[s]));
    out.push_back({frames, gather(fused, rows, 0)});
  }
  return out;
}

std::vector<TokenSequence> cisa(const std::vector<TokenSequence>& scales,
                                const CrossScaleParams& params) {
  auto out = cisa_common(scales, params);
  for (std::size_t s = 0; s < out.size(); ++s)
    if (params.scales[s].projected())
      out[s].tokens = params.scales[s].back_project(out[s].tokens);
  return out;
}

TokenSequence mita(const std::vector<TokenSequence>& common, const FlowField& flow,
                   const CrossScaleParams& params, const igt::InstanceGeometry& g) {
  if (common.size() != params.scales.size())
    throw ConfigError("MITA expects " + std::to_string(params.scales.size()) + " scales");
  const std::size_t finest = params.scales.front().block;
  Tensor sum;
  for (std::size_t s = 0; s < common.size(); ++s) {
    const auto& sp = params.scales[s];
    TokenSequence o = ita(align_tokens(common[s], flow, sp.block), sp.temporal);
    if (sp.projected()) o.tokens = sp.back_project(o.tokens);
    const Tensor fine = igt::retile_tokens(o.tokens, o.frames, g, sp.block, finest);
    sum = sum.defined() ? add(sum, fine) : fine;
  }
  return {common.front().frames, sum};
}

std::vector<TokenSequence> cross_scale_layer(const std::vector<TokenSequence>& scales,
                                             const FlowField& flow,
                                             const CrossScaleParams& params,
                                             const igt::InstanceGeometry& g) {
  const TokenSequence y = mita(cisa_common(scales, params), flow, params, g);
  const std::size_t finest = params.scales.front().block;
  std::vector<TokenSequence> out;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const Tensor update =
        igt::retile_tokens(y.tokens, y.frames, g, finest, params.scales[s].block);
    out.push_back({scales[s].frames, add(scales[s].tokens, update)});
  }
  return out;
}

StackParams make_stack(ParamStore& store, const std::string& prefix, const ScaleSetConfig& cfg,
                       std::size_t layers, const igt::InstanceGeometry& g,
                       std::size_t tokenizer_heads, Rng& rng) {
  StackParams p;
  p.scales = cfg;
  for (std::size_t k : cfg.blocks)
    p.tokenizers.push_back(igt::make_tokenizer(store, prefix + ".igt.s" + std::to_string(k),
                                               g.channels * k * k, g.joints, tokenizer_heads, rng,
                                               cfg.ffn_mult));
  for (std::size_t l = 0; l < layers; ++l)
    p.layers.push_back(
        make_cross_scale(store, prefix + ".layer" + std::to_string(l), cfg, g, rng));
  return p;
}

TokenSequence ivt_forward(const Tensor& features, const Tensor& offsets, const FlowField& flow,
                          const StackParams& params, const igt::InstanceGeometry& g) {
  if (features.rank() != 4 || features.dim(1) != g.channels || features.dim(2) != g.height ||
      features.dim(3) != g.width)
    throw DimensionError("features " + shape_str(features.shape()) + " do not match the " +
                         std::to_string(g.channels) + "x" + std::to_string(g.height) + "x" +
                         std::to_string(g.width) + " geometry");
  const std::size_t frames = features.dim(0);
  std::vector<TokenSequence> streams;
  for (std::size_t s = 0; s < params.scales.blocks.size(); ++s)
    streams.push_back({frames, igt::igt_frames(features, offsets, params.scales.blocks[s],
                                               params.tokenizers[s])});
  for (const auto& layer : params.layers) streams = cross_scale_layer(streams, flow, layer, g);
  return streams.front();
}

}  // namespace ivt::video
