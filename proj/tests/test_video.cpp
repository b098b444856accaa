// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "ivt/errors.hpp"
#include "ivt/igt.hpp"
#include "ivt/video.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ivt;
using namespace ivt::video;
using testing::bitwise_equal;
using testing::random_tensor;

namespace {

oracle::Vec rows_of(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t d = t.dim(1);
  oracle::Vec out;
  for (std::size_t r : rows)
    out.insert(out.end(), t.data().begin() + static_cast<long>(r * d),
               t.data().begin() + static_cast<long>((r + 1) * d));
  return out;
}

void zero(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

FlowField uniform_flow(std::size_t frames, std::size_t h, std::size_t w, double dx, double dy) {
  auto f = FlowField::zero(frames, h, w);
  for (auto& p : f.pairs)
    for (std::size_t i = 0; i < h * w; ++i) {
      p[i] = dx;
      p[h * w + i] = dy;
    }
  return f;
}

}  // namespace

TEST_CASE("isa is positions plus a per-frame block") {
  Rng rng(1);
  ParamStore store;
  const nn::AttentionConfig cfg{8, 2};
  auto sp = make_spatial(store, "isa", 4, cfg, rng);
  testing::randomize(store, rng);
  const TokenSequence seq{2, random_tensor({8, 8}, rng)};
  const auto out = isa(seq, sp);
  const auto b = oracle::block_values(sp.block);
  for (std::size_t t = 0; t < 2; ++t) {
    auto x = rows_of(seq.tokens, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += sp.pos.data()[i];
    const auto got = rows_of(out.tokens, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3});
    CHECK(oracle::max_abs_diff(got, oracle::block_self(x, 4, b, 2)) <= 1e-12);
  }

  const TokenSequence one{1, random_tensor({1, 8}, rng)};
  ParamStore s1;
  auto single = make_spatial(s1, "isa", 1, cfg, rng);
  CHECK(bitwise_equal(isa(one, single).tokens.data(), isa(one, single).tokens.data()));

  nn::zero_block_outputs(sp.block);
  zero(sp.pos);
  CHECK(bitwise_equal(isa(seq, sp).tokens.data(), seq.tokens.data()));
  CHECK_THROWS_AS(isa(TokenSequence{2, random_tensor({8, 4}, rng)}, sp), ConfigError);
}

TEST_CASE("alignment under zero flow, one frame and a missing pair") {
  Rng rng(2);
  const TokenSequence seq{3, random_tensor({3 * 6, 5}, rng)};
  const auto flow = FlowField::zero(3, 4, 6);
  CHECK(bitwise_equal(align_tokens(seq, flow, 2).tokens.data(), seq.tokens.data()));
  const TokenSequence one{1, random_tensor({6, 5}, rng)};
  CHECK(bitwise_equal(align_tokens(one, FlowField::zero(1, 4, 6), 2).tokens.data(),
                      one.tokens.data()));
  auto short_flow = FlowField::zero(2, 4, 6);
  CHECK_THROWS_AS(align_tokens(seq, short_flow, 2), ContractError);
}

TEST_CASE("uniform one-block flow shifts the earlier frame right") {
  // 2×3 block grid, K = 2, every pixel moves 2 cells right per step.
  const auto flow = uniform_flow(2, 4, 6, 2.0, 0.0);
  const auto src = alignment_sources(flow, 2, 2);
  // Frame 0: cell (r, c) takes the token from (r, c - 1); column 0 keeps its
  // own token and the last column's own token is pushed off by its neighbour.
  const std::vector<std::size_t> expected{0, 0, 1, 3, 3, 4, 6, 7, 8, 9, 10, 11};
  CHECK(src == expected);

  // Two steps of the same flow carry a token two blocks.
  const auto flow3 = uniform_flow(3, 4, 6, 2.0, 0.0);
  const auto src3 = alignment_sources(flow3, 3, 2);
  CHECK(src3[2] == 0);
  CHECK(src3[6 + 2] == 6 + 1);
}

TEST_CASE("ita matches per-slot cross attention") {
  Rng rng(3);
  ParamStore store;
  const nn::AttentionConfig cfg{4, 2};
  auto tp = make_temporal(store, "ita", cfg, rng);
  testing::randomize(store, rng);
  const auto b = oracle::block_values(tp.block);
  const std::size_t frames = 3, n = 2;
  const TokenSequence seq{frames, random_tensor({frames * n, 4}, rng)};
  for (bool causal : {false, true}) {
    tp.causal = causal;
    const auto out = ita(seq, tp);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> keys;
        for (std::size_t u = 0; u < (causal ? t + 1 : frames); ++u) keys.push_back(u * n + i);
        const auto ref = oracle::block_cross(rows_of(seq.tokens, {t * n + i}),
                                             rows_of(seq.tokens, keys), 1, keys.size(), b, 2);
        CHECK(oracle::max_abs_diff(rows_of(out.tokens, {t * n + i}), ref) <= 1e-12);
      }
  }
}

TEST_CASE("ita with one frame and with identical frames") {
  Rng rng(4);
  ParamStore store;
  const nn::AttentionConfig cfg{6, 3};
  auto tp = make_temporal(store, "ita", cfg, rng);
  testing::randomize(store, rng);
  const auto b = oracle::block_values(tp.block);
  const TokenSequence one{1, random_tensor({3, 6}, rng)};
  const auto out = ita(one, tp);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto row = rows_of(one.tokens, {i});
    CHECK(oracle::max_abs_diff(rows_of(out.tokens, {i}), oracle::block_self(row, 1, b, 3)) <=
          1e-12);
  }

  const auto frame = random_tensor({3, 6}, rng);
  const TokenSequence same{4, concat({frame, frame, frame, frame}, 0)};
  const auto o = ita(same, tp);
  for (std::size_t t = 1; t < 4; ++t)
    CHECK(rows_of(o.tokens, {3 * t, 3 * t + 1, 3 * t + 2}) == rows_of(o.tokens, {0, 1, 2}));
}

TEST_CASE("ita temporal mac counter") {
  Rng rng(5);
  ParamStore store;
  auto tp = make_temporal(store, "ita", {4, 1}, rng);
  reset_temporal_mac_count();
  ita(TokenSequence{2, random_tensor({4, 4}, rng)}, tp);
  const auto first = temporal_mac_count();
  CHECK(first > 0);
  ita(TokenSequence{2, random_tensor({4, 4}, rng)}, tp);
  CHECK(temporal_mac_count() == 2 * first);
}

TEST_CASE("zeroed ivt layer doubles its input") {
  Rng rng(6);
  ParamStore store;
  auto lp = make_layer(store, "layer", 4, 2, {8, 2}, rng);
  const TokenSequence seq{3, random_tensor({12, 8}, rng)};
  const auto flow = FlowField::zero(3, 4, 4);
  nn::zero_block_outputs(lp.spatial.block);
  nn::zero_block_outputs(lp.temporal.block);
  zero(lp.spatial.pos);
  const auto out = ivt_layer(seq, flow, lp);
  CHECK(out.tokens.shape() == seq.tokens.shape());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i)
    CHECK(out.tokens.data()[i] == 2.0 * seq.tokens.data()[i]);
}

TEST_CASE("ivt layer gradient") {
  Rng rng(7);
  ParamStore store;
  auto lp = make_layer(store, "layer", 4, 1, {4, 2}, rng);
  auto x = random_tensor({8, 4}, rng, true);
  const auto w = random_tensor({8, 4}, rng);
  const auto flow = uniform_flow(2, 2, 2, 1.0, 0.4);
  const auto f = [&](const Tensor& t) { return sum(mul(ivt_layer({2, t}, flow, lp).tokens, w)); };
  CHECK(grad_check(f, x, 1e-6).max_relative_error <= 1e-5);
}

TEST_CASE("single-scale cisa runs at the native width") {
  Rng rng(8);
  const igt::InstanceGeometry g{2, 1, 4, 4};
  ScaleSetConfig cfg;
  cfg.blocks = {2};
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  ParamStore store;
  auto cp = make_cross_scale(store, "x", cfg, g, rng);
  testing::randomize(store, rng);
  REQUIRE_FALSE(cp.scales[0].projected());
  const TokenSequence seq{2, random_tensor({8, 8}, rng)};
  const auto out = cisa({seq}, cp);
  const auto b = oracle::block_values(cp.union_block);
  for (std::size_t t = 0; t < 2; ++t) {
    auto x = rows_of(seq.tokens, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += cp.scales[0].pos.data()[i];
    CHECK(oracle::max_abs_diff(rows_of(out[0].tokens, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3}),
                               oracle::block_self(x, 4, b, 2)) <= 1e-12);
  }

  // mita with one scale is ita at that scale.
  const auto flow = uniform_flow(2, 4, 4, 2.0, 0.0);
  const auto common = cisa_common({seq}, cp);
  const auto m = mita(common, flow, cp, g);
  const auto direct = ita(align_tokens(common[0], flow, 2), cp.scales[0].temporal);
  CHECK(bitwise_equal(m.tokens.data(), direct.tokens.data()));
}

TEST_CASE("two-scale cisa against a union oracle") {
  Rng rng(9);
  const igt::InstanceGeometry g{1, 1, 4, 4};
  ScaleSetConfig cfg;
  cfg.blocks = {2, 4};
  cfg.d_common = 4;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  ParamStore store;
  auto cp = make_cross_scale(store, "x", cfg, g, rng);
  testing::randomize(store, rng);
  const std::size_t frames = 2;
  const TokenSequence fine{frames, random_tensor({frames * 4, 4}, rng)};
  const TokenSequence coarse{frames, random_tensor({frames * 1, 16}, rng)};
  const auto out = cisa({fine, coarse}, cp);
  REQUIRE(out[0].tokens.shape() == fine.tokens.shape());
  REQUIRE(out[1].tokens.shape() == coarse.tokens.shape());

  const auto project = [&](const TokenSequence& seq, const ScaleParams& sp, std::size_t t) {
    const std::size_t n = sp.blocks, d = sp.dim;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(t * n + i);
    auto x = rows_of(seq.tokens, rows);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += sp.pos.data()[i];
    return oracle::linear(x, oracle::values(sp.project.weight), oracle::values(sp.project.bias), n,
                          d, 4);
  };
  const auto b = oracle::block_values(cp.union_block);
  for (std::size_t t = 0; t < frames; ++t) {
    auto u = project(fine, cp.scales[0], t);
    const auto c = project(coarse, cp.scales[1], t);
    u.insert(u.end(), c.begin(), c.end());
    const auto fused = oracle::block_self(u, 5, b, 2);
    const oracle::Vec f0(fused.begin(), fused.begin() + 16), f1(fused.begin() + 16, fused.end());
    const auto& s0 = cp.scales[0];
    const auto& s1 = cp.scales[1];
    const auto r0 = oracle::linear(f0, oracle::values(s0.back_project.weight),
                                   oracle::values(s0.back_project.bias), 4, 4, 4);
    const auto r1 = oracle::linear(f1, oracle::values(s1.back_project.weight),
                                   oracle::values(s1.back_project.bias), 1, 4, 16);
    CHECK(oracle::max_abs_diff(rows_of(out[0].tokens, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3}),
                               r0) <= 1e-12);
    CHECK(oracle::max_abs_diff(rows_of(out[1].tokens, {t}), r1) <= 1e-12);
  }
}

TEST_CASE("mita sums re-tiled scale outputs") {
  Rng rng(10);
  const igt::InstanceGeometry g{1, 1, 4, 4};
  ScaleSetConfig cfg;
  cfg.blocks = {2, 4};
  cfg.d_common = 4;
  cfg.heads = 1;
  cfg.ffn_mult = 2;
  ParamStore store;
  auto cp = make_cross_scale(store, "x", cfg, g, rng);
  testing::randomize(store, rng);
  const std::size_t frames = 2;
  const auto flow = FlowField::zero(frames, 4, 4);
  const std::vector<TokenSequence> common{{frames, random_tensor({frames * 4, 4}, rng)},
                                          {frames, random_tensor({frames, 4}, rng)}};

  // Silencing the coarse scale leaves the finest scale's contribution.
  auto quiet = cp;
  quiet.scales[1].back_project.weight = Tensor::zeros({4, 16});
  quiet.scales[1].back_project.bias = Tensor::zeros({16});
  const auto fine_only = ita(common[0], cp.scales[0].temporal);
  const auto expected = cp.scales[0].back_project(fine_only.tokens);
  CHECK(bitwise_equal(mita(common, flow, quiet, g).tokens.data(), expected.data()));

  // Identity temporal blocks and constant back-projections: every element of
  // the output is the sum of the two constants.
  auto flat = cp;
  for (std::size_t s = 0; s < 2; ++s) {
    nn::zero_block_outputs(flat.scales[s].temporal.block);
    const std::size_t d = flat.scales[s].dim;
    flat.scales[s].back_project.weight = Tensor::zeros({4, d});
    flat.scales[s].back_project.bias = Tensor::full({d}, s == 0 ? 0.75 : -2.5);
  }
  const auto sum = mita(common, flow, flat, g);
  CHECK(sum.tokens.shape() == Shape{frames * 4, 4});
  for (double v : sum.tokens.data()) CHECK(v == 0.75 - 2.5);
}

TEST_CASE("ivt_forward with no layers and with one single-scale layer") {
  Rng rng(11);
  const igt::InstanceGeometry g{2, 1, 4, 4};
  ScaleSetConfig cfg;
  cfg.blocks = {2, 4};
  cfg.d_common = 8;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  const auto features = random_tensor({2, 1, 4, 4}, rng);
  const auto offsets = random_tensor({2, 4, 4, 4}, rng, false, -3, 3);
  const auto flow = uniform_flow(2, 4, 4, 1.6, -0.4);
  {
    ParamStore store;
    auto sp = make_stack(store, "ivt", cfg, 0, g, 1, rng);
    const auto out = ivt_forward(features, offsets, flow, sp, g);
    CHECK(bitwise_equal(out.tokens.data(),
                        igt::igt_frames(features, offsets, 2, sp.tokenizers[0]).data()));
    CHECK(out.tokens.shape() == Shape{2 * 4, 8});
  }
  {
    cfg.blocks = {2};
    ParamStore store;
    auto sp = make_stack(store, "ivt", cfg, 1, g, 1, rng);
    testing::randomize(store, rng, 0.3);
    const auto out = ivt_forward(features, offsets, flow, sp, g);
    const auto& layer = sp.layers[0];
    LayerParams lp;
    lp.block = 2;
    lp.spatial = {layer.scales[0].pos, layer.union_block, layer.union_cfg};
    lp.temporal = layer.scales[0].temporal;
    const TokenSequence tokens{2, igt::igt_frames(features, offsets, 2, sp.tokenizers[0])};
    CHECK(oracle::max_abs_diff(out.tokens.data(), ivt_layer(tokens, flow, lp).tokens.data()) <=
          1e-12);
  }
}

TEST_CASE("scale set validation") {
  Rng rng(12);
  const igt::InstanceGeometry g{1, 1, 8, 8};
  ParamStore store;
  ScaleSetConfig cfg;
  cfg.blocks = {4, 2};
  CHECK_THROWS_AS(make_cross_scale(store, "a", cfg, g, rng), ConfigError);
  cfg.blocks = {2, 3};
  CHECK_THROWS_AS(make_cross_scale(store, "b", cfg, g, rng), ConfigError);
}
