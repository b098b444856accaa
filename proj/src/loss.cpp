// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/loss.hpp"

#include <algorithm>

#include "ivt/errors.hpp"

namespace ivt::loss {

Tensor masked_l1(const Tensor& pred, const Tensor& target, const CenterMask& mask) {
  if (pred.shape() != target.shape() || pred.rank() != 4)
    throw DimensionError("masked L1 needs matching [T,C,H,W] maps, got " +
                         shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  const std::size_t frames = pred.dim(0), ch = pred.dim(1), hw = pred.dim(2) * pred.dim(3);
  if (mask.empty()) {
    const auto t = target.data();
    if (std::any_of(t.begin(), t.end(), [](double v) { return v != 0.0; }))
      throw ContractError("offset targets are nonzero but the center mask is empty");
    return Tensor::scalar(0.0);
  }
  std::vector<std::size_t> idx;
  idx.reserve(mask.size() * ch);
  for (const auto& [frame, pixel] : mask) {
    if (frame >= frames || pixel >= hw)
      throw BoundsError("center (" + std::to_string(frame) + ", " + std::to_string(pixel) +
                        ") outside the map");
    for (std::size_t c = 0; c < ch; ++c) idx.push_back((frame * ch + c) * hw + pixel);
  }
  const Shape shape{idx.size()};
  const Tensor p = take(pred, idx, shape);
  const Tensor t = take(target.detach(), std::move(idx), shape);
  return mean(abs(sub(p, t)));
}

LossTerms total_loss(const Maps& pred, const Maps& target, const CenterMask& mask,
                     const LossWeights& w) {
  if (!(w.alpha >= 0.0)) throw ConfigError("loss weight alpha must be nonnegative");
  if (pred.heatmap.shape() != target.heatmap.shape())
    throw DimensionError("heatmap " + shape_str(pred.heatmap.shape()) + " vs target " +
                         shape_str(target.heatmap.shape()));
  const Tensor l1_3d = masked_l1(pred.offsets3d, target.offsets3d, mask);
  const Tensor l1_2d = masked_l1(pred.offsets2d, target.offsets2d, mask);
  const Tensor l2 = mean(square(sub(pred.heatmap, target.heatmap.detach())));
  LossTerms out;
  out.total = add(add(l1_3d, l1_2d), scale(l2, w.alpha));
  out.l1_3d = l1_3d.item();
  out.l1_2d = l1_2d.item();
  out.l2_hm = l2.item();
  return out;
}

}  // namespace ivt::loss
