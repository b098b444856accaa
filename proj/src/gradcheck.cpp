// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "ivt/errors.hpp"
#include "ivt/igt.hpp"
#include "ivt/loss.hpp"
#include "ivt/model.hpp"
#include "ivt/nn.hpp"
#include "ivt/rng.hpp"
#include "ivt/tensor.hpp"
#include "ivt/video.hpp"

namespace ivt::gradcheck {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum; the weights of each output slot are drawn on first use.
struct Probe {
  Rng& rng;
  std::map<std::size_t, Tensor> weights;

  Tensor operator()(const Tensor& out, std::size_t slot) {
    auto it = weights.find(slot);
    if (it == weights.end()) it = weights.emplace(slot, random_tensor(rng, out.shape(), 1.0, false)).first;
    return sum(mul(out, it->second));
  }
};

/// Perturbs the input and, for units with parameters, one parameter tensor.
struct Runner {
  double eps;
  std::size_t max_probes;
  std::uint64_t seed;
  UnitResult result;

  void check(const std::function<Tensor()>& f, Tensor& x) {
    GradCheckOptions opt;
    opt.max_probes = max_probes;
    opt.seed = seed + result.probes;
    const auto r = grad_check([&](const Tensor&) { return f(); }, x, eps, opt);
    result.max_relative_error = std::max(result.max_relative_error, r.max_relative_error);
    result.probes += r.probes;
  }
};

video::FlowField random_flow(Rng& rng, std::size_t frames, std::size_t h, std::size_t w,
                             long reach) {
  auto flow = video::FlowField::zero(frames, h, w);
  for (auto& pair : flow.pairs)
    for (auto& v : pair) v = static_cast<double>(static_cast<long>(rng.below(2 * reach + 1)) - reach);
  return flow;
}

Tensor random_offsets(Rng& rng, Shape shape, long reach) {
  std::vector<double> v(numel(shape));
  for (auto& x : v)
    x = static_cast<double>(static_cast<long>(rng.below(2 * reach + 1)) - reach) + 0.25;
  return Tensor::from(std::move(shape), std::move(v));
}

void run_unit(const std::string& unit, Rng& rng, Runner& run) {
  ParamStore store;
  Probe probe{rng, {}};

  if (unit == "mhsa" || unit == "ffn" || unit == "block") {
    const nn::AttentionConfig cfg{8, 2};
    const auto params = nn::make_block(store, "b", cfg, rng);
    Tensor x = random_tensor(rng, {5, 8});
    Tensor kv = random_tensor(rng, {3, 8});
    std::function<Tensor()> f;
    if (unit == "mhsa")
      f = [&] {
        return probe(add(x, nn::multi_head_self_attention(nn::layer_norm(x, params.ln1), params,
                                                          cfg)), 0);
      };
    else if (unit == "ffn")
      f = [&] { return probe(add(x, nn::ffn(nn::layer_norm(x, params.ln2), params)), 0); };
    else
      f = [&] { return probe(nn::transformer_block_cross(x, kv, kv, params, cfg), 0); };
    run.check(f, x);
    if (unit == "block") run.check(f, kv);
    Tensor w = unit == "ffn" ? params.ffn1.weight : params.q.weight;
    run.check(f, w);
    Tensor g = params.ln1.gain;
    if (unit != "ffn") run.check(f, g);
    return;
  }

  if (unit == "igt") {
    const std::size_t joints = 2, block = 2;
    Tensor features = random_tensor(rng, {2, 4, 4});
    const Tensor offsets = random_offsets(rng, {2 * joints, 4, 4}, 3);
    const auto tok = igt::make_tokenizer(store, "igt", 2 * block * block, joints, 2, rng);
    const auto f = [&] { return probe(igt::igt_frame(features, offsets, block, tok), 0); };
    run.check(f, features);
    Tensor w = tok.block.v.weight;
    run.check(f, w);
    // Offset head: differentiable in features and weights.
    const auto head = igt::make_offset_head(store, "off", 2, 3, joints, rng);
    const auto g = [&] { return probe(igt::predict_offsets(features, head, joints), 1); };
    run.check(g, features);
    Tensor hw = head.w1;
    run.check(g, hw);
    return;
  }

  if (unit == "isa" || unit == "ita" || unit == "ivt-layer") {
    const std::size_t frames = unit == "ita" ? 3 : 2, per_frame = 4, d = 8, block = 2;
    const nn::AttentionConfig cfg{d, 2};
    const auto layer = video::make_layer(store, "l", per_frame, block, cfg, rng);
    Tensor x = random_tensor(rng, {frames * per_frame, d});
    const auto flow = random_flow(rng, frames, 4, 4, 2);
    std::function<Tensor()> f;
    if (unit == "isa")
      f = [&] { return probe(video::isa({frames, x}, layer.spatial).tokens, 0); };
    else if (unit == "ita")
      f = [&] {
        return probe(video::ita(video::align_tokens({frames, x}, flow, block), layer.temporal)
                         .tokens,
                     0);
      };
    else
      f = [&] { return probe(video::ivt_layer({frames, x}, flow, layer).tokens, 0); };
    run.check(f, x);
    Tensor w = unit == "isa" ? layer.spatial.pos : layer.temporal.block.k.weight;
    run.check(f, w);
    return;
  }

  if (unit == "cisa-mita") {
    const igt::InstanceGeometry g{1, 2, 4, 4};
    video::ScaleSetConfig cfg;
    cfg.blocks = {2, 4};
    cfg.d_common = 8;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    const std::size_t frames = 2;
    const auto layer = video::make_cross_scale(store, "x", cfg, g, rng);
    Tensor fine = random_tensor(rng, {frames * 4, g.token_dim(2)});
    Tensor coarse = random_tensor(rng, {frames * 1, g.token_dim(4)});
    const auto flow = random_flow(rng, frames, 4, 4, 2);
    const auto f = [&] {
      const auto out = video::cross_scale_layer({{frames, fine}, {frames, coarse}}, flow, layer, g);
      return add(probe(out[0].tokens, 0), probe(out[1].tokens, 1));
    };
    run.check(f, fine);
    run.check(f, coarse);
    Tensor w = layer.scales[1].project.weight;
    run.check(f, w);
    Tensor u = layer.union_block.q.weight;
    run.check(f, u);
    return;
  }

  if (unit == "heads") {
    model::ModelConfig mc;
    mc.joints = 2;
    mc.channels = 1;
    mc.height = mc.width = 4;
    const auto heads = model::make_heads(store, "h", mc, rng);
    const auto g = mc.geometry();
    const std::size_t frames = 2, block = 2;
    Tensor tokens = random_tensor(rng, {frames * 4, g.token_dim(block)});
    const auto f = [&] {
      const auto [hm, off] = model::prediction_heads(tokens, frames, g, block, heads);
      return add(probe(hm, 0), probe(off, 1));
    };
    run.check(f, tokens);
    Tensor w = heads.weight;
    run.check(f, w);
    return;
  }

  if (unit == "loss") {
    const std::size_t frames = 2, joints = 2;
    loss::Maps pred{random_tensor(rng, {frames, 1, 4, 4}),
                    random_tensor(rng, {frames, 3 * joints, 4, 4}),
                    random_tensor(rng, {frames, 2 * joints, 4, 4})};
    const loss::Maps target{random_tensor(rng, {frames, 1, 4, 4}, 1.0, false),
                            random_tensor(rng, {frames, 3 * joints, 4, 4}, 1.0, false),
                            random_tensor(rng, {frames, 2 * joints, 4, 4}, 1.0, false)};
    const loss::CenterMask mask{{0, 5}, {1, 10}, {1, 3}};
    const auto f = [&] { return loss::total_loss(pred, target, mask, {10.0}).total; };
    run.check(f, pred.heatmap);
    run.check(f, pred.offsets3d);
    run.check(f, pred.offsets2d);
    return;
  }

  if (unit == "full") {
    model::ModelConfig mc;
    mc.joints = 2;
    mc.channels = 2;
    mc.height = mc.width = 4;
    mc.scales.blocks = {2, 4};
    mc.scales.d_common = 8;
    mc.scales.heads = 2;
    mc.scales.ffn_mult = 2;
    mc.layers = 2;
    mc.offset_hidden = 3;
    const std::size_t frames = 2;
    model::Model m(mc, rng.next());
    Tensor features = random_tensor(rng, {frames, 2, 4, 4});
    const auto flow = random_flow(rng, frames, 4, 4, 2);
    const Tensor steer = random_offsets(rng, {frames, 2 * mc.joints, 4, 4}, 3);
    const loss::Maps target{Tensor::full({frames, 1, 4, 4}, 0.2),
                            random_tensor(rng, {frames, 3 * mc.joints, 4, 4}, 1.0, false),
                            random_tensor(rng, {frames, 2 * mc.joints, 4, 4}, 1.0, false)};
    const loss::CenterMask mask{{0, 5}, {1, 10}};
    const auto f = [&] {
      return loss::total_loss(m.forward(features, flow, &steer), target, mask, {10.0}).total;
    };
    run.check(f, features);
    for (const char* name : {"offset_head.conv1.weight", "ivt.igt.s2.q.weight",
                             "ivt.layer0.s4.project.weight", "ivt.layer1.cisa.ffn1.weight",
                             "ivt.layer1.s2.ita.v.weight", "heads.weight"}) {
      Tensor p = m.params().get(name);
      run.check(f, p);
    }
    return;
  }
  throw ConfigError("unknown gradient-check unit '" + unit + "'");
}

}  // namespace

const std::vector<std::string>& unit_names() {
  static const std::vector<std::string> names = {"mhsa", "ffn",       "block", "igt",  "isa",
                                                 "ita",  "ivt-layer", "cisa-mita", "heads",
                                                 "loss", "full"};
  return names;
}

std::vector<std::string> expand_selector(const std::string& selector) {
  if (selector == "all") return unit_names();
  if (selector == "nn-blocks") return {"mhsa", "ffn", "block"};
  const auto& names = unit_names();
  if (std::find(names.begin(), names.end(), selector) == names.end())
    throw ConfigError("unknown unit '" + selector + "'");
  return {selector};
}

UnitResult check_unit(const std::string& unit, std::uint64_t seed, double eps,
                      std::size_t max_probes) {
  Rng rng(seed);
  Runner run{eps, max_probes, seed, {}};
  run.result.unit = unit;
  run_unit(unit, rng, run);
  return run.result;
}

}  // namespace ivt::gradcheck
