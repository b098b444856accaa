// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/model.hpp"

#include <cmath>

#include "ivt/errors.hpp"

namespace ivt::model {

void ModelConfig::validate() const {
  if (joints == 0 || channels == 0 || height == 0 || width == 0)
    throw ConfigError("model dimensions must be positive");
  if (scales.blocks.empty()) throw ConfigError("at least one block size is required");
  for (std::size_t k : scales.blocks)
    if (k == 0 || height % k != 0 || width % k != 0)
      throw ConfigError("block size " + std::to_string(k) + " does not divide the " +
                        std::to_string(height) + "x" + std::to_string(width) + " feature grid");
  if (scales.heads == 0 || tokenizer_heads == 0) throw ConfigError("head count must be positive");
  if (offset_hidden == 0) throw ConfigError("offset head width must be positive");
}

HeadParams make_heads(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                      Rng& rng) {
  const std::size_t in = cfg.joints * cfg.channels, out = 1 + 3 * cfg.joints;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
  std::vector<double> w(out * in * 9);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  HeadParams h;
  h.weight = store.add(prefix + ".weight", {out, in, 3, 3}, std::move(w));
  h.bias = store.add_zeros(prefix + ".bias", {out});
  return h;
}

std::pair<Tensor, Tensor> prediction_heads(const Tensor& tokens, std::size_t frames,
                                           const igt::InstanceGeometry& g, std::size_t block,
                                           const HeadParams& heads) {
  const Tensor map = igt::tokens_to_map(tokens, frames, g, block);
  const Tensor raw = conv2d(map, heads.weight, heads.bias);
  const Tensor heatmap = sigmoid(slice(raw, 1, 0, 1));
  const Tensor offsets = slice(raw, 1, 1, 3 * g.joints);
  return {heatmap, offsets};
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto g = cfg_.geometry();
  offset_head_ = igt::make_offset_head(store_, "offset_head", cfg_.channels, cfg_.offset_hidden,
                                       cfg_.joints, rng);
  stack_ = video::make_stack(store_, "ivt", cfg_.scales, cfg_.layers, g, cfg_.tokenizer_heads,
                             rng);
  heads_ = make_heads(store_, "heads", cfg_, rng);
}

Output Model::forward(const Tensor& features, const video::FlowField& flow,
                      const Tensor* gather_offsets) const {
  const auto g = cfg_.geometry();
  Output out;
  out.offsets2d = igt::predict_offsets(features, offset_head_, cfg_.joints);
  const Tensor& steer = gather_offsets ? *gather_offsets : out.offsets2d;
  const auto tokens = video::ivt_forward(features, steer.detach(), flow, stack_, g);
  std::tie(out.heatmap, out.offsets3d) =
      prediction_heads(tokens.tokens, tokens.frames, g, cfg_.scales.blocks.front(), heads_);
  return out;
}

}  // namespace ivt::model
