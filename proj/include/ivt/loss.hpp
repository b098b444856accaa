// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Training objective: masked L1 on the 3D and 2D offset maps plus an
// alpha-weighted L2 on the heatmap. Each term is a mean, so alpha does not
// depend on the map resolution.

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ivt/tensor.hpp"

namespace ivt::loss {

struct LossWeights {
  double alpha = 10.0;
};

/// Maps for a clip, each [T × channels × H × W]; heatmap has 1 channel.
struct Maps {
  Tensor heatmap;
  Tensor offsets3d;
  Tensor offsets2d;
};

/// (frame, pixel) pairs at which offsets are supervised.
using CenterMask = std::vector<std::pair<std::size_t, std::size_t>>;

struct LossTerms {
  Tensor total;
  double l1_3d = 0.0;
  double l1_2d = 0.0;
  double l2_hm = 0.0;
};

/// Mean |pred - target| over the masked pixels and all channels. Throws
/// ContractError when the mask is empty but the targets are not all zero.
Tensor masked_l1(const Tensor& pred, const Tensor& target, const CenterMask& mask);

LossTerms total_loss(const Maps& pred, const Maps& target, const CenterMask& mask,
                     const LossWeights& w = {});

}  // namespace ivt::loss
