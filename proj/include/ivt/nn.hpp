// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Transformer primitives: scaled dot-product attention, multi-head
// attention, FFN, layer norm and pre-norm residual blocks.

#pragma once

#include <cstddef>
#include <string>

#include "ivt/checkpoint.hpp"
#include "ivt/kernels.hpp"
#include "ivt/rng.hpp"
#include "ivt/tensor.hpp"

namespace ivt::nn {

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t heads = 1;

  std::size_t d_head() const { return d_model / heads; }
  /// Throws ConfigError unless d_model > 0 and divisible by heads.
  void validate() const;
};

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
};

struct BlockParams {
  Linear q, k, v, out;
  Linear ffn1, ffn2;
  LayerNormParams ln1, ln2;
};

/// Weights uniform in ±1/sqrt(fan_in), bias zero.
Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng);
LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t d,
                                double eps = 1e-5);
/// FFN hidden width is ffn_mult·d_model.
BlockParams make_block(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
                       Rng& rng, std::size_t ffn_mult = 4);
/// Zeroes the attention output projection and the second FFN layer, which
/// turns a residual block into the identity map.
void zero_block_outputs(BlockParams& params);

/// softmax(Q·Kᵀ/sqrt(d))·V for one head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// P_out(Concat_c(head_1..head_h)) over already-projected Q, K, V. The layout
/// restricts which keys each query sees; the default is all of them.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const BlockParams& params, const AttentionConfig& cfg,
                            const kernels::AttentionLayout* layout = nullptr);

Tensor multi_head_self_attention(const Tensor& x, const BlockParams& params,
                                 const AttentionConfig& cfg,
                                 const kernels::AttentionLayout* layout = nullptr);

/// ffn2(gelu(ffn1(x))).
Tensor ffn(const Tensor& x, const BlockParams& params);

Tensor layer_norm(const Tensor& x, const LayerNormParams& ln);

/// Y = X + MHSA(LN1(X)); out = Y + FFN(LN2(Y)).
Tensor transformer_block_self(const Tensor& x, const BlockParams& params,
                              const AttentionConfig& cfg,
                              const kernels::AttentionLayout* layout = nullptr);

/// Y = Q + MHA(P_q LN1(Q), P_k LN1(K), P_v LN1(V)); out = Y + FFN(LN2(Y)).
Tensor transformer_block_cross(const Tensor& q, const Tensor& k, const Tensor& v,
                               const BlockParams& params, const AttentionConfig& cfg,
                               const kernels::AttentionLayout* layout = nullptr);

}  // namespace ivt::nn
