// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/nn.hpp"

#include <cmath>

#include "ivt/errors.hpp"

namespace ivt::nn {

void AttentionConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible into " +
                      std::to_string(heads) + " heads");
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  Linear l;
  l.weight = store.add(name + ".weight", {in, out}, std::move(w));
  l.bias = store.add_zeros(name + ".bias", {out});
  return l;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t d,
                                double eps) {
  LayerNormParams ln;
  ln.gain = store.add(name + ".gain", {d}, std::vector<double>(d, 1.0));
  ln.bias = store.add_zeros(name + ".bias", {d});
  ln.eps = eps;
  return ln;
}

BlockParams make_block(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
                       Rng& rng, std::size_t ffn_mult) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  BlockParams p;
  p.ln1 = make_layer_norm(store, prefix + ".ln1", d);
  p.q = make_linear(store, prefix + ".q", d, d, rng);
  p.k = make_linear(store, prefix + ".k", d, d, rng);
  p.v = make_linear(store, prefix + ".v", d, d, rng);
  p.out = make_linear(store, prefix + ".out", d, d, rng);
  p.ln2 = make_layer_norm(store, prefix + ".ln2", d);
  p.ffn1 = make_linear(store, prefix + ".ffn1", d, ffn_mult * d, rng);
  p.ffn2 = make_linear(store, prefix + ".ffn2", ffn_mult * d, d, rng);
  return p;
}

void zero_block_outputs(BlockParams& params) {
  for (Tensor* t : {&params.out.weight, &params.out.bias, &params.ffn2.weight, &params.ffn2.bias})
    for (auto& v : t->mutable_data()) v = 0.0;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2) throw DimensionError("attention expects matrices");
  if (k.dim(0) == 0) throw ContractError("attention needs at least one key");
  const auto layout = kernels::AttentionLayout::single(q.dim(0), k.dim(0), 1);
  return attention_op(q, k, v, layout);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const BlockParams& params, const AttentionConfig& cfg,
                            const kernels::AttentionLayout* layout) {
  cfg.validate();
  if (q.rank() != 2 || q.dim(1) != cfg.d_model)
    throw DimensionError("MHA query " + shape_str(q.shape()) + " vs d_model " +
                         std::to_string(cfg.d_model));
  kernels::AttentionLayout l =
      layout ? *layout : kernels::AttentionLayout::single(q.dim(0), k.dim(0));
  l.heads = cfg.heads;
  return params.out(attention_op(q, k, v, l));
}

Tensor multi_head_self_attention(const Tensor& x, const BlockParams& params,
                                 const AttentionConfig& cfg,
                                 const kernels::AttentionLayout* layout) {
  return multi_head_attention(params.q(x), params.k(x), params.v(x), params, cfg, layout);
}

Tensor ffn(const Tensor& x, const BlockParams& params) {
  return params.ffn2(gelu(params.ffn1(x)));
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& ln) {
  return ivt::layer_norm(x, ln.gain, ln.bias, ln.eps);
}

Tensor transformer_block_self(const Tensor& x, const BlockParams& params,
                              const AttentionConfig& cfg,
                              const kernels::AttentionLayout* layout) {
  const Tensor y = add(x, multi_head_self_attention(layer_norm(x, params.ln1), params, cfg, layout));
  return add(y, ffn(layer_norm(y, params.ln2), params));
}

Tensor transformer_block_cross(const Tensor& q, const Tensor& k, const Tensor& v,
                               const BlockParams& params, const AttentionConfig& cfg,
                               const kernels::AttentionLayout* layout) {
  const Tensor nq = layer_norm(q, params.ln1);
  const Tensor nk = k.node() == q.node() ? nq : layer_norm(k, params.ln1);
  const Tensor nv = k.node() == v.node() ? nk : layer_norm(v, params.ln1);
  const Tensor attn =
      multi_head_attention(params.q(nq), params.k(nk), params.v(nv), params, cfg, layout);
  const Tensor y = add(q, attn);
  return add(y, ffn(layer_norm(y, params.ln2), params));
}

}  // namespace ivt::nn
